#pragma once

#include "latent_bki/compression.hpp"
#include "latent_bki/latent_map.hpp"

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace latent_bki {

/// Multivariate Student-t posterior predictive of a voxel:
/// t_dof(mean, diag(scale_diag)) with dof = lam and scale = ((lam + 1) / lam^2) psi.
struct PosteriorPredictive {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale_diag;
    double dof = 0.0;
    bool low_confidence = false;  // lam <= 1: the expectation is not yet defined
};

// Throws InsufficientEvidence when lam <= 0.
PosteriorPredictive posterior_predictive(const VoxelState& s);

struct Expectation {
    Eigen::VectorXd mean;
    bool marginal = false;  // 1 < lam <= 2: mean exists but the covariance does not
};

// E[y] = mu, defined for lam > 1. Throws InsufficientEvidence otherwise.
Expectation predictive_expectation(const VoxelState& s);

// Cov[y] = lam / (lam - 2) * (lam + 1) / lam^2 * psi, defined for lam > 2.
Eigen::VectorXd predictive_covariance_diag(const VoxelState& s);

/// Phrases and their full-dimension text embeddings, in query order.
class QueryDictionary {
public:
    QueryDictionary() = default;

    // Throws InvalidInput on a dimension mismatch, a zero-norm or non-finite embedding.
    void add(std::string phrase, const Eigen::Ref<const Eigen::VectorXd>& embedding);

    std::size_t size() const { return phrases_.size(); }
    bool empty() const { return phrases_.empty(); }
    int dim() const { return dim_; }
    const std::string& phrase(std::size_t n) const { return phrases_.at(n); }
    const std::vector<std::string>& phrases() const { return phrases_; }
    Eigen::VectorXd embedding(std::size_t n) const { return embeddings_.col(static_cast<Eigen::Index>(n)); }
    std::optional<std::size_t> find(const std::string& phrase) const;

    // Cosine similarity of v against every phrase; throws Undecodable for a zero vector.
    Eigen::VectorXd cosine_scores(const Eigen::Ref<const Eigen::VectorXd>& v) const;

private:
    int dim_ = 0;
    std::vector<std::string> phrases_;
    Eigen::MatrixXd embeddings_;  // dim x size
    Eigen::MatrixXd unit_;        // column-normalized embeddings
};

/// Uncertainty scalar with a distinguished "undefined" value (too little evidence)
/// that orders after every finite value.
class Uncertainty {
public:
    Uncertainty() = default;  // undefined
    explicit Uncertainty(double value);

    static Uncertainty undefined() { return {}; }
    bool defined() const { return value_.has_value(); }
    double value() const;  // throws InsufficientEvidence when undefined

    friend std::weak_ordering operator<=>(const Uncertainty& a, const Uncertainty& b);
    friend bool operator==(const Uncertainty& a, const Uncertainty& b) {
        return (a <=> b) == std::weak_ordering::equivalent;
    }

private:
    std::optional<double> value_;
};

struct VoxelPrediction {
    std::size_t category = 0;
    double score = 0.0;       // cosine similarity of the winning phrase
    Uncertainty uncertainty;  // E-optimality of the predictive covariance
};

// Highest-cosine phrase for a feature already in dictionary space; ties go to the lower index.
VoxelPrediction decode_feature(const Eigen::Ref<const Eigen::VectorXd>& feature,
                               const QueryDictionary& dict);

/// Open-dictionary category of a voxel: argmax over phrases of the cosine between the
/// (optionally PCA-lifted) expectation and the phrase embedding. Requires lam > 1.
VoxelPrediction decode_category(const VoxelState& s, const QueryDictionary& dict,
                                const PcaTransform* lift = nullptr);

/// n draws (columns) from the voxel's Student-t predictive with diagonal scale. One
/// chi-square variate is shared by all dimensions of a draw. Deterministic per seed.
Eigen::MatrixXd sample_features(const VoxelState& s, std::size_t n, std::uint64_t seed);

struct SamplingUncertainty {
    double best_score_variance = 0.0;     // variance of the per-sample winning cosine
    Eigen::VectorXd per_category_variance;  // variance of each phrase's cosine
};

// Decoded-space uncertainty from n predictive samples (population variance; n <= 1 gives 0).
SamplingUncertainty uncertainty_sampling(const VoxelState& s, const QueryDictionary& dict,
                                         std::size_t n, std::uint64_t seed,
                                         const PcaTransform* lift = nullptr);

// Largest predictive covariance entry; undefined for lam <= 2.
Uncertainty uncertainty_e_optimality(const VoxelState& s);

// Geometric mean of the predictive covariance diagonal; undefined for lam <= 2 or a
// non-positive entry.
Uncertainty uncertainty_d_optimality(const VoxelState& s);

}  // namespace latent_bki
