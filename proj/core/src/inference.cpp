#include "latent_bki/inference.hpp"

#include "latent_bki/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace latent_bki {

namespace {

void require_lambda_above(const VoxelState& s, double threshold, const char* what) {
    if (!(s.lam > threshold)) {
        throw InsufficientEvidence(std::string(what) + " requires lambda > " +
                                   std::to_string(threshold) + ", voxel has " +
                                   std::to_string(s.lam));
    }
}

double population_variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() <= 1) return 0.0;
    // Shifting by the first element keeps a constant vector at exactly zero.
    const Eigen::ArrayXd shifted = v.array() - v[0];
    const double m = shifted.mean();
    return std::max(0.0, (shifted - m).square().mean());
}

}  // namespace

PosteriorPredictive posterior_predictive(const VoxelState& s) {
    require_lambda_above(s, 0.0, "posterior predictive");
    return {s.mu, ((s.lam + 1.0) / (s.lam * s.lam)) * s.psi_diag, s.lam, s.lam <= 1.0};
}

Expectation predictive_expectation(const VoxelState& s) {
    require_lambda_above(s, 1.0, "predictive expectation");
    return {s.mu, s.lam <= 2.0};
}

Eigen::VectorXd predictive_covariance_diag(const VoxelState& s) {
    require_lambda_above(s, 2.0, "predictive covariance");
    return (s.lam / (s.lam - 2.0)) * ((s.lam + 1.0) / (s.lam * s.lam)) * s.psi_diag;
}

void QueryDictionary::add(std::string phrase, const Eigen::Ref<const Eigen::VectorXd>& embedding) {
    if (embedding.size() < 1) {
        throw InvalidInput("empty embedding for phrase '" + phrase + "'");
    }
    if (!phrases_.empty() && embedding.size() != dim_) {
        throw InvalidInput("embedding for phrase '" + phrase + "' has dimension " +
                           std::to_string(embedding.size()) + ", dictionary uses " +
                           std::to_string(dim_));
    }
    if (!embedding.allFinite()) {
        throw InvalidInput("non-finite embedding for phrase '" + phrase + "'");
    }
    const double norm = embedding.norm();
    if (!(norm > 0.0)) {
        throw InvalidInput("zero-norm embedding for phrase '" + phrase + "'");
    }
    dim_ = static_cast<int>(embedding.size());
    const Eigen::Index col = embeddings_.cols();
    embeddings_.conservativeResize(dim_, col + 1);
    unit_.conservativeResize(dim_, col + 1);
    embeddings_.col(col) = embedding;
    unit_.col(col) = embedding / norm;
    phrases_.push_back(std::move(phrase));
}

std::optional<std::size_t> QueryDictionary::find(const std::string& phrase) const {
    for (std::size_t n = 0; n < phrases_.size(); ++n) {
        if (phrases_[n] == phrase) return n;
    }
    return std::nullopt;
}

Eigen::VectorXd QueryDictionary::cosine_scores(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    if (v.size() != dim_) {
        throw InvalidInput("feature dimension " + std::to_string(v.size()) +
                           " does not match dictionary dimension " + std::to_string(dim_));
    }
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw Undecodable("feature has zero or non-finite norm");
    }
    return (unit_.transpose() * v) / norm;
}

Uncertainty::Uncertainty(double value) : value_(value) {
    if (!std::isfinite(value)) {
        throw InvalidInput("uncertainty values must be finite; use Uncertainty::undefined()");
    }
}

double Uncertainty::value() const {
    if (!value_) {
        throw InsufficientEvidence("uncertainty is undefined for this voxel");
    }
    return *value_;
}

std::weak_ordering operator<=>(const Uncertainty& a, const Uncertainty& b) {
    if (!a.value_ && !b.value_) return std::weak_ordering::equivalent;
    if (!a.value_) return std::weak_ordering::greater;
    if (!b.value_) return std::weak_ordering::less;
    if (*a.value_ < *b.value_) return std::weak_ordering::less;
    if (*b.value_ < *a.value_) return std::weak_ordering::greater;
    return std::weak_ordering::equivalent;
}

VoxelPrediction decode_feature(const Eigen::Ref<const Eigen::VectorXd>& feature,
                               const QueryDictionary& dict) {
    if (dict.empty()) {
        throw InvalidInput("cannot decode against an empty dictionary");
    }
    const Eigen::VectorXd scores = dict.cosine_scores(feature);
    VoxelPrediction out;
    // maxCoeff returns the first maximal entry, which is the lowest-index tie.
    Eigen::Index best = 0;
    out.score = scores.maxCoeff(&best);
    out.category = static_cast<std::size_t>(best);
    return out;
}

VoxelPrediction decode_category(const VoxelState& s, const QueryDictionary& dict,
                                const PcaTransform* lift) {
    const Expectation e = predictive_expectation(s);
    if (e.mean.size() != dict.dim() && lift == nullptr) {
        throw InvalidInput("map dimension differs from dictionary dimension and no PCA lift given");
    }
    if (e.mean.norm() == 0.0) {
        throw Undecodable("voxel expectation has zero norm");
    }
    VoxelPrediction out = decode_feature(lift ? lift->decode(e.mean) : e.mean, dict);
    out.uncertainty = uncertainty_e_optimality(s);
    return out;
}

Eigen::MatrixXd sample_features(const VoxelState& s, std::size_t n, std::uint64_t seed) {
    const PosteriorPredictive pp = posterior_predictive(s);
    const Eigen::Index dim = pp.mean.size();
    Eigen::MatrixXd out(dim, static_cast<Eigen::Index>(n));
    if (n == 0) return out;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::chi_squared_distribution<double> chi_square(pp.dof);
    const Eigen::VectorXd stddev = pp.scale_diag.cwiseSqrt();
    for (std::size_t col = 0; col < n; ++col) {
        double u = 0.0;
        while (!(u > 0.0)) u = chi_square(rng);
        const double factor = std::sqrt(pp.dof / u);
        auto sample = out.col(static_cast<Eigen::Index>(col));
        for (Eigen::Index d = 0; d < dim; ++d) {
            sample[d] = pp.mean[d] + factor * stddev[d] * normal(rng);
        }
    }
    return out;
}

SamplingUncertainty uncertainty_sampling(const VoxelState& s, const QueryDictionary& dict,
                                         std::size_t n, std::uint64_t seed,
                                         const PcaTransform* lift) {
    if (dict.empty()) {
        throw InvalidInput("sampling uncertainty needs a non-empty dictionary");
    }
    if (s.mu.size() != dict.dim() && lift == nullptr) {
        throw InvalidInput("map dimension differs from dictionary dimension and no PCA lift given");
    }
    const Eigen::MatrixXd samples = sample_features(s, n, seed);
    const auto count = static_cast<Eigen::Index>(n);
    Eigen::VectorXd best(count);
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(dict.size()), count);
    for (Eigen::Index col = 0; col < count; ++col) {
        const Eigen::VectorXd y = lift ? lift->decode(samples.col(col)) : samples.col(col);
        if (y.norm() > 0.0) {
            scores.col(col) = dict.cosine_scores(y);
        } else {
            scores.col(col).setZero();
        }
        best[col] = scores.col(col).maxCoeff();
    }
    SamplingUncertainty out;
    out.best_score_variance = population_variance(best);
    out.per_category_variance.resize(static_cast<Eigen::Index>(dict.size()));
    for (Eigen::Index row = 0; row < scores.rows(); ++row) {
        out.per_category_variance[row] = population_variance(scores.row(row).transpose());
    }
    return out;
}

Uncertainty uncertainty_e_optimality(const VoxelState& s) {
    if (!(s.lam > 2.0)) return Uncertainty::undefined();
    return Uncertainty(predictive_covariance_diag(s).maxCoeff());
}

Uncertainty uncertainty_d_optimality(const VoxelState& s) {
    if (!(s.lam > 2.0)) return Uncertainty::undefined();
    const Eigen::VectorXd cov = predictive_covariance_diag(s);
    if ((cov.array() <= 0.0).any()) return Uncertainty::undefined();
    return Uncertainty(std::exp(cov.array().log().mean()));
}

}  // namespace latent_bki
