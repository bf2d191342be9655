#pragma once

#include "latent_bki/observation.hpp"

#include <Eigen/Core>

namespace latent_bki {

/// Affine PCA map between a full embedding space and the map's reduced latent space.
/// encode(y) = B^T (y - mean), decode(z) = mean + B z, with B orthonormal by columns.
class PcaTransform {
public:
    PcaTransform() = default;
    // Throws InvalidInput if dimensions disagree or B^T B deviates from I by more than 1e-6.
    PcaTransform(Eigen::VectorXd mean, Eigen::MatrixXd basis);

    int full_dim() const { return static_cast<int>(basis_.rows()); }
    int reduced_dim() const { return static_cast<int>(basis_.cols()); }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& basis() const { return basis_; }

    Eigen::VectorXd encode(const Eigen::Ref<const Eigen::VectorXd>& y) const;
    Eigen::VectorXd decode(const Eigen::Ref<const Eigen::VectorXd>& z) const;

    // Re-encodes every feature of a full-dimension frame.
    ObservationFrame encode(const ObservationFrame& frame) const;

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd basis_;
};

/// Fits the top `reduced_dim` principal directions of `samples` (one sample per row) by
/// eigendecomposition of the sample covariance. Columns are ordered by descending
/// eigenvalue and signed so that each column's largest-magnitude entry is positive.
PcaTransform pca_fit(const Eigen::Ref<const Eigen::MatrixXd>& samples, int reduced_dim);

// Mean squared per-entry error of decode(encode(y)) over the rows of `samples`.
double reconstruction_mse(const PcaTransform& t, const Eigen::Ref<const Eigen::MatrixXd>& samples);

}  // namespace latent_bki
