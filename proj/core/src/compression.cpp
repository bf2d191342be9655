#include "latent_bki/compression.hpp"

#include "latent_bki/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace latent_bki {

PcaTransform::PcaTransform(Eigen::VectorXd mean, Eigen::MatrixXd basis)
    : mean_(std::move(mean)), basis_(std::move(basis)) {
    if (basis_.cols() < 1 || basis_.rows() != mean_.size() || basis_.cols() > basis_.rows()) {
        throw InvalidInput("PCA basis must be C_full x C_reduced with 1 <= C_reduced <= C_full");
    }
    if (!mean_.allFinite() || !basis_.allFinite()) {
        throw InvalidInput("PCA transform contains non-finite values");
    }
    const Eigen::MatrixXd gram = basis_.transpose() * basis_;
    const double deviation =
        (gram - Eigen::MatrixXd::Identity(basis_.cols(), basis_.cols())).cwiseAbs().maxCoeff();
    if (deviation > 1e-6) {
        throw InvalidInput("PCA basis columns are not orthonormal (deviation " +
                           std::to_string(deviation) + ")");
    }
}

Eigen::VectorXd PcaTransform::encode(const Eigen::Ref<const Eigen::VectorXd>& y) const {
    if (y.size() != full_dim()) {
        throw InvalidInput("encode expects a vector of dimension " + std::to_string(full_dim()) +
                           ", got " + std::to_string(y.size()));
    }
    return basis_.transpose() * (y - mean_);
}

Eigen::VectorXd PcaTransform::decode(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    if (z.size() != reduced_dim()) {
        throw InvalidInput("decode expects a vector of dimension " +
                           std::to_string(reduced_dim()) + ", got " + std::to_string(z.size()));
    }
    return mean_ + basis_ * z;
}

ObservationFrame PcaTransform::encode(const ObservationFrame& frame) const {
    if (frame.feature_dim() != 0 && frame.feature_dim() != full_dim()) {
        throw InvalidInput("frame dimension " + std::to_string(frame.feature_dim()) +
                           " does not match PCA input dimension " + std::to_string(full_dim()));
    }
    ObservationFrame out(reduced_dim(), frame.has_range(), frame.has_label());
    out.reserve(frame.size());
    Eigen::VectorXf z(reduced_dim());
    for (std::size_t n = 0; n < frame.size(); ++n) {
        z = encode(frame.feature(n).cast<double>()).cast<float>();
        out.push_back(frame.position(n), std::span<const float>(z.data(), z.size()),
                      frame.has_range() ? std::optional<float>(frame.range(n)) : std::nullopt,
                      frame.has_label() ? std::optional<std::uint32_t>(frame.label(n))
                                        : std::nullopt);
    }
    return out;
}

PcaTransform pca_fit(const Eigen::Ref<const Eigen::MatrixXd>& samples, int reduced_dim) {
    const Eigen::Index n = samples.rows();
    const Eigen::Index full = samples.cols();
    if (reduced_dim < 1 || reduced_dim > full) {
        throw InvalidInput("reduced dimension must lie in [1, " + std::to_string(full) + "]");
    }
    if (n < reduced_dim) {
        throw InvalidInput("PCA needs at least as many samples as reduced dimensions");
    }
    if (!samples.allFinite()) {
        throw InvalidInput("PCA samples contain non-finite values");
    }
    const Eigen::VectorXd mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
    const Eigen::MatrixXd covariance =
        (centered.transpose() * centered) / static_cast<double>(n);
    if (!(covariance.trace() > 0.0)) {
        throw InvalidInput("PCA samples are all identical (rank 0)");
    }

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(covariance);
    if (solver.info() != Eigen::Success) {
        throw InvalidInput("eigendecomposition of the sample covariance failed");
    }
    // Eigenvalues come back ascending.
    Eigen::MatrixXd basis(full, reduced_dim);
    for (int c = 0; c < reduced_dim; ++c) {
        Eigen::VectorXd column = solver.eigenvectors().col(full - 1 - c);
        Eigen::Index pivot = 0;
        column.cwiseAbs().maxCoeff(&pivot);
        if (column[pivot] < 0.0) column = -column;
        basis.col(c) = column;
    }
    return PcaTransform(mean, basis);
}

double reconstruction_mse(const PcaTransform& t, const Eigen::Ref<const Eigen::MatrixXd>& samples) {
    if (samples.cols() != t.full_dim()) {
        throw InvalidInput("sample dimension does not match the PCA transform");
    }
    if (samples.rows() == 0) {
        return 0.0;
    }
    const Eigen::MatrixXd centered = samples.rowwise() - t.mean().transpose();
    const Eigen::MatrixXd projected = centered * t.basis() * t.basis().transpose();
    return (centered - projected).squaredNorm() / static_cast<double>(samples.size());
}

}  // namespace latent_bki
