#include "latent_bki/error.hpp"
#include "latent_bki/inference.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace latent_bki {
namespace {

VoxelState state(double lam, Eigen::VectorXd mu, Eigen::VectorXd psi) {
    return {std::move(mu), std::move(psi), lam};
}

VoxelState isotropic(double lam, int dim, double psi, double mu = 1.0) {
    return state(lam, Eigen::VectorXd::Constant(dim, mu), Eigen::VectorXd::Constant(dim, psi));
}

QueryDictionary two_axes() {
    QueryDictionary dict;
    dict.add("wall", Eigen::Vector3d(1, 0, 0));
    dict.add("floor", Eigen::Vector3d(0, 1, 0));
    return dict;
}

TEST(PosteriorPredictive, ScaleFollowsLambda) {
    const PosteriorPredictive pp = posterior_predictive(isotropic(2.0, 3, 4.0));
    EXPECT_TRUE(pp.scale_diag.isApproxToConstant(3.0));
    EXPECT_EQ(pp.dof, 2.0);
    EXPECT_FALSE(pp.low_confidence);
}

TEST(PosteriorPredictive, LargeLambdaLimit) {
    // With psi / lam held at 0.5 the scale tends to 0.5.
    const double lam = 1e9;
    const PosteriorPredictive pp = posterior_predictive(isotropic(lam, 2, 0.5 * lam));
    EXPECT_NEAR(pp.scale_diag[0], 0.5, 1e-8);
}

TEST(PosteriorPredictive, PriorVoxelIsLowConfidence) {
    const PosteriorPredictive pp = posterior_predictive(isotropic(1e-3, 2, 1e-6, 0.0));
    EXPECT_TRUE(pp.low_confidence);
    EXPECT_THROW(posterior_predictive(isotropic(0.0, 2, 1.0)), InsufficientEvidence);
}

TEST(PredictiveExpectation, Thresholds) {
    const Expectation e = predictive_expectation(isotropic(5.0, 3, 1.0, 0.7));
    EXPECT_TRUE(e.mean.isApproxToConstant(0.7));
    EXPECT_FALSE(e.marginal);
    EXPECT_THROW(predictive_expectation(isotropic(0.5, 3, 1.0)), InsufficientEvidence);
    EXPECT_THROW(predictive_expectation(isotropic(1.0, 3, 1.0)), InsufficientEvidence);
    EXPECT_TRUE(predictive_expectation(isotropic(1.0 + 1e-9, 3, 1.0)).marginal);
}

TEST(PredictiveCovariance, Examples) {
    // (4 / 2) * (5 / 16) * 8 = 5
    EXPECT_TRUE(predictive_covariance_diag(isotropic(4.0, 3, 8.0)).isApproxToConstant(5.0));
    EXPECT_THROW(predictive_covariance_diag(isotropic(2.0, 3, 8.0)), InsufficientEvidence);
    EXPECT_TRUE(predictive_covariance_diag(isotropic(4.0, 3, 0.0)).isZero());
}

TEST(QueryDictionary, Validation) {
    QueryDictionary dict;
    EXPECT_THROW(dict.add("zero", Eigen::Vector3d::Zero()), InvalidInput);
    dict.add("a", Eigen::Vector3d(1, 0, 0));
    EXPECT_THROW(dict.add("b", Eigen::Vector2d(1, 0)), InvalidInput);
    EXPECT_EQ(dict.find("a"), std::optional<std::size_t>(0));
    EXPECT_FALSE(dict.find("b").has_value());
}

TEST(DecodeCategory, SelfSimilarity) {
    QueryDictionary dict;
    dict.add("chair", Eigen::Vector3d(0.2, 0.9, -0.1));
    dict.add("table", Eigen::Vector3d(-0.5, 0.1, 0.8));
    const VoxelPrediction p =
        decode_category(state(5.0, Eigen::Vector3d(-0.5, 0.1, 0.8), Eigen::Vector3d::Ones()), dict);
    EXPECT_EQ(p.category, 1u);
    EXPECT_NEAR(p.score, 1.0, 1e-12);
}

TEST(DecodeCategory, ScaleInvariance) {
    const QueryDictionary dict = two_axes();
    const Eigen::Vector3d mu(0.9, 0.3, 0.2);
    const VoxelPrediction base = decode_category(state(5.0, mu, Eigen::Vector3d::Ones()), dict);
    for (const double c : {1e-3, 0.5, 7.0, 1e4}) {
        const VoxelPrediction scaled =
            decode_category(state(5.0, c * mu, Eigen::Vector3d::Ones()), dict);
        EXPECT_EQ(scaled.category, base.category);
        EXPECT_NEAR(scaled.score, base.score, 1e-12);
    }
}

TEST(DecodeCategory, OrthogonalPhrasesBruteForce) {
    const QueryDictionary dict = two_axes();
    // Angle to phrase 0 is 30 degrees, to phrase 1 is 60 degrees.
    const Eigen::Vector3d mu(std::cos(M_PI / 6), std::sin(M_PI / 6), 0.0);
    const VoxelPrediction p = decode_category(state(3.0, mu, Eigen::Vector3d::Ones()), dict);
    EXPECT_EQ(p.category, 0u);
    EXPECT_NEAR(p.score, std::cos(M_PI / 6), 1e-12);
}

TEST(DecodeCategory, TiesGoToLowestIndex) {
    const QueryDictionary dict = two_axes();
    const VoxelPrediction p =
        decode_category(state(3.0, Eigen::Vector3d(1, 1, 0), Eigen::Vector3d::Ones()), dict);
    EXPECT_EQ(p.category, 0u);
}

TEST(DecodeCategory, Errors) {
    const QueryDictionary dict = two_axes();
    EXPECT_THROW(decode_category(isotropic(5.0, 3, 1.0, 0.0), dict), Undecodable);
    EXPECT_THROW(decode_category(isotropic(0.9, 3, 1.0), dict), InsufficientEvidence);
    EXPECT_THROW(decode_category(isotropic(5.0, 2, 1.0), dict), InvalidInput);
}

TEST(DecodeCategory, UncertaintyIsEOptimality) {
    const QueryDictionary dict = two_axes();
    EXPECT_FALSE(decode_category(isotropic(1.5, 3, 1.0), dict).uncertainty.defined());
    EXPECT_NEAR(decode_category(isotropic(4.0, 3, 8.0), dict).uncertainty.value(), 5.0, 1e-12);
}

TEST(SampleFeatures, DegenerateScaleReturnsMean) {
    const VoxelState s = state(3.0, Eigen::Vector3d(1, -2, 3), Eigen::Vector3d::Zero());
    const Eigen::MatrixXd draws = sample_features(s, 50, 1);
    for (Eigen::Index c = 0; c < draws.cols(); ++c) EXPECT_EQ(draws.col(c), s.mu);
    EXPECT_EQ(sample_features(s, 0, 1).cols(), 0);
}

TEST(SampleFeatures, ReproducibleForSeed) {
    const VoxelState s = isotropic(2.5, 4, 3.0);
    EXPECT_EQ(sample_features(s, 100, 9), sample_features(s, 100, 9));
    EXPECT_NE(sample_features(s, 100, 9), sample_features(s, 100, 10));
}

TEST(SampleFeatures, FractionalDegreesOfFreedom) {
    const Eigen::MatrixXd draws = sample_features(isotropic(0.7, 2, 1.0), 1000, 3);
    EXPECT_TRUE(draws.allFinite());
    EXPECT_THROW(sample_features(isotropic(0.0, 2, 1.0), 10, 3), InsufficientEvidence);
}

TEST(SampleFeatures, MonteCarloMoments) {
    const VoxelState s = state(6.0, Eigen::Vector3d(0.3, -1.0, 2.0), Eigen::Vector3d(1.0, 4.0, 0.25));
    const std::size_t n = 400000;
    const Eigen::MatrixXd draws = sample_features(s, n, 2024);
    const Eigen::VectorXd cov = predictive_covariance_diag(s);
    const Eigen::VectorXd mean = draws.rowwise().mean();
    const Eigen::VectorXd var =
        (draws.colwise() - mean).array().square().rowwise().sum() / static_cast<double>(n - 1);
    for (int d = 0; d < 3; ++d) {
        EXPECT_LE(std::abs(mean[d] - s.mu[d]), 3.0 * std::sqrt(cov[d] / n));
        EXPECT_NEAR(var[d] / cov[d], 1.0, 0.05);
    }
}

TEST(UncertaintySampling, DegenerateAndSingleSample) {
    const QueryDictionary dict = two_axes();
    const VoxelState still = state(5.0, Eigen::Vector3d(1, 0.5, 0), Eigen::Vector3d::Zero());
    EXPECT_EQ(uncertainty_sampling(still, dict, 100, 1).best_score_variance, 0.0);
    EXPECT_EQ(uncertainty_sampling(isotropic(5.0, 3, 1.0), dict, 1, 1).best_score_variance, 0.0);
}

TEST(UncertaintySampling, GrowsWithScale) {
    const QueryDictionary dict = two_axes();
    const Eigen::Vector3d mu(1.0, 0.4, 0.1);
    const double tight =
        uncertainty_sampling(state(5.0, mu, Eigen::Vector3d::Constant(0.01)), dict, 4000, 5)
            .best_score_variance;
    const double loose =
        uncertainty_sampling(state(5.0, mu, Eigen::Vector3d::Constant(1.0)), dict, 4000, 5)
            .best_score_variance;
    EXPECT_GT(loose, tight);
    const auto detail =
        uncertainty_sampling(state(5.0, mu, Eigen::Vector3d::Constant(1.0)), dict, 100, 5);
    EXPECT_EQ(detail.per_category_variance.size(), 2);
    EXPECT_TRUE((detail.per_category_variance.array() > 0.0).all());
}

TEST(UncertaintySampling, LiftsThroughPca) {
    QueryDictionary dict;
    dict.add("a", Eigen::Vector4d(1, 0, 0, 0));
    dict.add("b", Eigen::Vector4d(0, 1, 0, 0));
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(4, 2);
    basis(0, 0) = 1.0;
    basis(1, 1) = 1.0;
    const PcaTransform lift(Eigen::Vector4d(0, 0, 0.1, 0), basis);
    const VoxelState s = state(5.0, Eigen::Vector2d(1.0, 0.2), Eigen::Vector2d::Constant(0.3));
    EXPECT_THROW(uncertainty_sampling(s, dict, 10, 1), InvalidInput);
    EXPECT_GT(uncertainty_sampling(s, dict, 500, 1, &lift).best_score_variance, 0.0);
    EXPECT_EQ(decode_category(s, dict, &lift).category, 0u);
}

TEST(Optimality, EOptimality) {
    // Covariance diagonal (1, 5, 2) from lam = 4: psi = cov * 16 / 10.
    const VoxelState s = state(4.0, Eigen::Vector3d::Ones(), Eigen::Vector3d(1, 5, 2) * 1.6);
    EXPECT_NEAR(uncertainty_e_optimality(s).value(), 5.0, 1e-12);
    EXPECT_NEAR(uncertainty_e_optimality(isotropic(4.0, 5, 1.6 * 3.0)).value(), 3.0, 1e-12);
    EXPECT_EQ(uncertainty_e_optimality(isotropic(4.0, 5, 0.0)).value(), 0.0);
    EXPECT_FALSE(uncertainty_e_optimality(isotropic(2.0, 5, 1.0)).defined());
}

TEST(Optimality, DOptimality) {
    EXPECT_NEAR(uncertainty_d_optimality(isotropic(4.0, 7, 1.6)).value(), 1.0, 1e-12);
    EXPECT_NEAR(uncertainty_d_optimality(state(4.0, Eigen::Vector2d::Ones(), Eigen::Vector2d(1, 4) * 1.6))
                    .value(),
                2.0, 1e-12);
    const double e = std::exp(1.0);
    EXPECT_NEAR(uncertainty_d_optimality(
                    state(4.0, Eigen::Vector2d::Ones(), Eigen::Vector2d(e * e, e * e * e * e) * 1.6))
                    .value(),
                e * e * e, 1e-9);
    EXPECT_FALSE(uncertainty_d_optimality(state(4.0, Eigen::Vector2d::Ones(), Eigen::Vector2d(1, 0)))
                     .defined());
    EXPECT_FALSE(uncertainty_d_optimality(isotropic(1.5, 2, 1.0)).defined());
}

TEST(Optimality, EDominatesD) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> psi(1e-4, 10.0);
    std::uniform_real_distribution<double> lam(2.01, 100.0);
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::VectorXd p(6);
        for (auto& x : p) x = psi(rng);
        const VoxelState s = state(lam(rng), Eigen::VectorXd::Ones(6), p);
        EXPECT_GE(uncertainty_e_optimality(s).value(),
                  uncertainty_d_optimality(s).value() * (1.0 - 1e-12));
    }
}

TEST(Uncertainty, UndefinedSortsLast) {
    EXPECT_LT(Uncertainty(1e300), Uncertainty::undefined());
    EXPECT_LT(Uncertainty(0.0), Uncertainty(1.0));
    EXPECT_EQ(Uncertainty::undefined(), Uncertainty::undefined());
    EXPECT_THROW(Uncertainty::undefined().value(), InsufficientEvidence);
    EXPECT_THROW(Uncertainty(std::nan("")), InvalidInput);
}

}  // namespace
}  // namespace latent_bki
