#include "latent_bki/error.hpp"
#include "latent_bki/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <set>
#include <tuple>

namespace latent_bki {
namespace {

SceneSpec small_scene(double sigma, std::uint64_t seed = 3) {
    SceneSpec spec;
    spec.extent = {12, 12, 2};
    spec.categories = 4;
    spec.feature_dim = 16;
    spec.frames = 4;
    spec.points_per_frame = 3000;
    spec.sigma = sigma;
    spec.seed = seed;
    return spec;
}

MapConfig map_config(int dim, int filter_size = 3) {
    MapConfig cfg;
    cfg.grid = {0.1, filter_size};
    cfg.kernel = {0.5};
    cfg.latent_dim = dim;
    return cfg;
}

TEST(GenerateScene, NoiselessFeaturesEqualAnchors) {
    const SyntheticScene scene = generate_scene(small_scene(0.0));
    ASSERT_EQ(scene.frames.size(), 4u);
    for (const auto& frame : scene.frames) {
        for (std::size_t n = 0; n < frame.size(); ++n) {
            const Eigen::VectorXd anchor = scene.anchors.col(frame.label(n));
            EXPECT_LT((frame.feature(n).cast<double>() - anchor).cwiseAbs().maxCoeff(), 1e-7);
            EXPECT_EQ(scene.label_at(world_to_index(frame.position(n), scene.grid)), frame.label(n));
        }
        EXPECT_EQ(evaluate_raw(frame, scene.dictionary()).accuracy, 1.0);
    }
}

TEST(GenerateScene, AnchorsAreSeparatedUnitVectors) {
    const SyntheticScene scene = generate_scene(small_scene(0.3));
    for (Eigen::Index a = 0; a < scene.anchors.cols(); ++a) {
        EXPECT_NEAR(scene.anchors.col(a).norm(), 1.0, 1e-12);
        for (Eigen::Index b = a + 1; b < scene.anchors.cols(); ++b) {
            EXPECT_LT(scene.anchors.col(a).dot(scene.anchors.col(b)), 0.8);
        }
    }
    std::set<std::uint32_t> present(scene.labels.begin(), scene.labels.end());
    EXPECT_EQ(present.size(), 4u);
}

TEST(GenerateScene, ModerateNoiseOnOrthogonalAnchors) {
    SceneSpec spec = small_scene(0.5);
    spec.categories = 2;
    spec.feature_dim = 2;
    spec.fixed_anchors = Eigen::Matrix2d::Identity();
    const SyntheticScene scene = generate_scene(spec);
    ObservationFrame all(2, false, true);
    for (const auto& f : scene.frames) {
        for (std::size_t n = 0; n < f.size(); ++n) all.push_back(f.at(n));
    }
    const double accuracy = evaluate_raw(all, scene.dictionary()).accuracy;
    EXPECT_GT(accuracy, 0.5);
    EXPECT_LT(accuracy, 1.0);
}

TEST(GenerateScene, DeterministicForSeed) {
    const SyntheticScene a = generate_scene(small_scene(0.4, 9));
    const SyntheticScene b = generate_scene(small_scene(0.4, 9));
    ASSERT_EQ(a.frames.size(), b.frames.size());
    for (std::size_t f = 0; f < a.frames.size(); ++f) {
        EXPECT_EQ(a.frames[f].features(), b.frames[f].features());
        EXPECT_EQ(a.frames[f].labels(), b.frames[f].labels());
        EXPECT_EQ(std::memcmp(a.frames[f].positions().data(), b.frames[f].positions().data(),
                              a.frames[f].size() * sizeof(Eigen::Vector3d)),
                  0);
    }
    const SyntheticScene c = generate_scene(small_scene(0.4, 10));
    EXPECT_NE(a.frames[0].features(), c.frames[0].features());
}

TEST(GenerateScene, Errors) {
    SceneSpec spec = small_scene(0.1);
    spec.categories = 0;
    EXPECT_THROW(generate_scene(spec), InvalidInput);
    spec = small_scene(0.1);
    spec.sigma_max = 0.05;
    EXPECT_THROW(generate_scene(spec), InvalidInput);
}

TEST(GenerateScene, HeterogeneousNoiseRange) {
    SceneSpec spec = small_scene(0.2);
    spec.sigma_max = 1.0;
    spec.noise_patch = 1;  // every voxel draws its own level
    const SyntheticScene scene = generate_scene(spec);
    const auto [lo, hi] = std::minmax_element(scene.voxel_sigma.begin(), scene.voxel_sigma.end());
    EXPECT_GE(*lo, 0.2);
    EXPECT_LE(*hi, 1.0);
    EXPECT_GT(*hi - *lo, 0.5);
}

TEST(GenerateScene, NoiseLevelIsConstantPerPatch) {
    SceneSpec spec = small_scene(0.2);
    spec.sigma_max = 1.0;
    spec.noise_patch = 4;
    const SyntheticScene scene = generate_scene(spec);
    std::set<double> levels;
    for (int i = 0; i < 12; ++i) {
        for (int j = 0; j < 12; ++j) {
            for (int k = 0; k < 2; ++k) {
                const VoxelIndex v{i, j, k};
                EXPECT_EQ(scene.sigma_at(v), scene.sigma_at({i / 4 * 4, j / 4 * 4, 0}));
                levels.insert(scene.sigma_at(v));
            }
        }
    }
    EXPECT_EQ(levels.size(), 9u);
    spec.noise_patch = 0;
    EXPECT_THROW(generate_scene(spec), InvalidInput);
}

TEST(HoldoutSplit, ExactCountsAndDisjoint) {
    SceneSpec spec = small_scene(0.2);
    spec.frames = 4;
    spec.points_per_frame = 250;
    const SyntheticScene scene = generate_scene(spec);
    const HoldoutSplit split = holdout_split(scene.frames, 0.8, 1);
    std::size_t train = 0;
    for (const auto& f : split.train) train += f.size();
    EXPECT_EQ(train, 800u);
    EXPECT_EQ(split.test.size(), 200u);
    ASSERT_EQ(split.train.size(), 4u);

    using Key = std::tuple<double, double, double>;
    std::multiset<Key> original;
    std::multiset<Key> rejoined;
    for (const auto& f : scene.frames) {
        for (const auto& p : f.positions()) original.emplace(p.x(), p.y(), p.z());
    }
    std::set<Key> test_keys;
    for (const auto& p : split.test.positions()) {
        rejoined.emplace(p.x(), p.y(), p.z());
        test_keys.emplace(p.x(), p.y(), p.z());
    }
    for (const auto& f : split.train) {
        for (const auto& p : f.positions()) {
            EXPECT_FALSE(test_keys.contains({p.x(), p.y(), p.z()}));
            rejoined.emplace(p.x(), p.y(), p.z());
        }
    }
    EXPECT_EQ(original, rejoined);

    const HoldoutSplit again = holdout_split(scene.frames, 0.8, 1);
    EXPECT_EQ(again.test.features(), split.test.features());
}

TEST(HoldoutSplit, Errors) {
    const SyntheticScene scene = generate_scene(small_scene(0.2));
    EXPECT_THROW(holdout_split(scene.frames, 0.0, 1), InvalidInput);
    EXPECT_THROW(holdout_split(scene.frames, 1.0, 1), InvalidInput);
    EXPECT_THROW(holdout_split(scene.frames, 0.99999, 1), InvalidInput);
}

TEST(ConfusionMatrix, IouArithmetic) {
    ConfusionMatrix cm(3);
    // truth 0: 3 points (2 right, 1 predicted 1); truth 1: 2 points (1 right, 1 unobserved)
    cm.add(0, 0);
    cm.add(0, 0);
    cm.add(0, 1);
    cm.add(1, 1);
    cm.add(1, std::nullopt);
    const MetricReport r = cm.report();
    EXPECT_EQ(r.total, 5u);
    EXPECT_EQ(r.correct, 3u);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
    EXPECT_DOUBLE_EQ(r.coverage, 0.8);
    EXPECT_DOUBLE_EQ(r.iou[0], 2.0 / 3.0);         // TP 2, FP 0, FN 1
    EXPECT_DOUBLE_EQ(r.iou[1], 1.0 / 3.0);         // TP 1, FP 1, FN 1
    EXPECT_DOUBLE_EQ(r.miou, (2.0 / 3.0 + 1.0 / 3.0) / 2.0);  // class 2 has no support
    EXPECT_EQ(r.support[2], 0u);
}

TEST(ConfusionMatrix, AllOneClassPrediction) {
    // Three classes present with supports 5, 3, 2; everything predicted as class 0.
    ConfusionMatrix cm(3);
    for (int n = 0; n < 5; ++n) cm.add(0, 0);
    for (int n = 0; n < 3; ++n) cm.add(1, 0);
    for (int n = 0; n < 2; ++n) cm.add(2, 0);
    const MetricReport r = cm.report();
    EXPECT_DOUBLE_EQ(r.iou[0], 0.5);
    EXPECT_DOUBLE_EQ(r.miou, 0.5 / 3.0);

    // With a single class present the same prediction scores 1 / 1.
    ConfusionMatrix single(3);
    for (int n = 0; n < 4; ++n) single.add(1, 1);
    EXPECT_DOUBLE_EQ(single.report().miou, 1.0);
}

TEST(ConfusionMatrix, ReportIsConsistent) {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> cls(0, 4);
    std::bernoulli_distribution missing(0.1);
    ConfusionMatrix cm(5);
    for (int n = 0; n < 2000; ++n) {
        const auto t = static_cast<std::size_t>(cls(rng));
        cm.add(t, missing(rng) ? std::nullopt : std::optional<std::size_t>(cls(rng)));
    }
    const MetricReport r = cm.report();
    std::size_t diagonal = 0;
    for (std::size_t c = 0; c < 5; ++c) {
        diagonal += cm.count(c, c);
        EXPECT_DOUBLE_EQ(r.iou[c], static_cast<double>(r.true_positive[c]) /
                                       (r.true_positive[c] + r.false_positive[c] +
                                        r.false_negative[c]));
        EXPECT_GE(r.iou[c], 0.0);
        EXPECT_LE(r.iou[c], 1.0);
    }
    EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(diagonal) / 2000.0);
}

TEST(EvaluateMap, NoiselessDenseSceneIsPerfect) {
    const SyntheticScene scene = generate_scene(small_scene(0.0));
    const HoldoutSplit split = holdout_split(scene.frames, 0.8, 4);
    const LatentMap map = build_map(split.train, map_config(16, 1));
    const MetricReport r = evaluate_map(map, split.test, scene.dictionary());
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.miou, 1.0);
}

TEST(EvaluateMap, UnobservedPointsCountAsWrong) {
    const SyntheticScene scene = generate_scene(small_scene(0.0));
    const LatentMap empty(map_config(16));
    const MetricReport r = evaluate_map(empty, scene.frames[0], scene.dictionary());
    EXPECT_EQ(r.accuracy, 0.0);
    EXPECT_EQ(r.coverage, 0.0);
    EXPECT_THROW(evaluate_map(empty, ObservationFrame(16, false, true), scene.dictionary()),
                 InvalidInput);
}

TEST(Sparsification, AntiCorrelatedUncertaintyGivesIncreasingCurve) {
    std::mt19937_64 rng(2);
    std::bernoulli_distribution wrong(0.3);
    std::vector<std::size_t> truth(1000, 0);
    std::vector<std::optional<std::size_t>> predicted(1000);
    std::vector<Uncertainty> uncertainty(1000);
    for (std::size_t n = 0; n < truth.size(); ++n) {
        truth[n] = n % 3;
        const bool is_wrong = wrong(rng);
        predicted[n] = is_wrong ? (truth[n] + 1) % 3 : truth[n];
        uncertainty[n] = Uncertainty(is_wrong ? 1.0 : 0.0);
    }
    const auto curve = sparsification_curve(truth, predicted, uncertainty, 3, 5);
    ASSERT_EQ(curve.size(), 5u);
    EXPECT_EQ(curve[0].fraction_removed, 0.0);
    EXPECT_EQ(curve[0].remaining, 1000u);
    for (std::size_t b = 1; b < curve.size(); ++b) {
        EXPECT_GT(curve[b].accuracy, curve[b - 1].accuracy - 1e-15);
    }
    EXPECT_LT(curve[0].accuracy, curve[1].accuracy);
    EXPECT_EQ(curve.back().accuracy, 1.0);
}

TEST(Sparsification, ConstantUncertaintyIsFlat) {
    std::mt19937_64 rng(6);
    std::bernoulli_distribution wrong(0.25);
    std::vector<std::size_t> truth(20000, 1);
    std::vector<std::optional<std::size_t>> predicted(truth.size());
    for (auto& p : predicted) p = wrong(rng) ? 0u : 1u;
    const std::vector<Uncertainty> uncertainty(truth.size(), Uncertainty(0.5));
    const auto curve = sparsification_curve(truth, predicted, uncertainty, 2, 10);
    for (const auto& point : curve) EXPECT_NEAR(point.accuracy, curve[0].accuracy, 0.03);
    EXPECT_THROW(sparsification_curve(truth, predicted, uncertainty, 2, 1), InvalidInput);
}

TEST(Sparsification, StartsAtEvaluateMap) {
    SceneSpec spec = small_scene(0.6);
    spec.sigma_max = 1.2;
    const SyntheticScene scene = generate_scene(spec);
    const HoldoutSplit split = holdout_split(scene.frames, 0.8, 2);
    const LatentMap map = build_map(split.train, map_config(16));
    const QueryDictionary dict = scene.dictionary();
    const MetricReport full = evaluate_map(map, split.test, dict);
    for (const auto method : {UncertaintyMethod::e_optimality, UncertaintyMethod::d_optimality,
                              UncertaintyMethod::sampling}) {
        const auto curve = sparsification_curve(map, split.test, dict, method, 4, {20, 1});
        ASSERT_EQ(curve.size(), 4u);
        EXPECT_DOUBLE_EQ(curve[0].accuracy, full.accuracy);
        EXPECT_DOUBLE_EQ(curve[0].miou, full.miou);
    }
}

TEST(Spearman, Basics) {
    const std::vector<double> a{1, 2, 3, 4, 5};
    EXPECT_DOUBLE_EQ(spearman(a, a), 1.0);
    EXPECT_DOUBLE_EQ(spearman(a, {50, 40, 30, 20, 10}), -1.0);
    EXPECT_DOUBLE_EQ(spearman(a, {1, 4, 9, 16, 25}), 1.0);
    // Ties share the average rank: ranks (0.5, 0.5, 2) vs (0, 1, 2).
    EXPECT_NEAR(spearman({1, 1, 2}, {1, 2, 3}), 0.8660254037844386, 1e-12);
    EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), InvalidInput);
}

TEST(UncertaintyCorrelation, SelfAndErrors) {
    SceneSpec spec = small_scene(0.3);
    spec.sigma_max = 1.0;
    const SyntheticScene scene = generate_scene(spec);
    const LatentMap map = build_map(scene.frames, map_config(16));
    const QueryDictionary dict = scene.dictionary();
    EXPECT_NEAR(uncertainty_correlation(map, UncertaintyMethod::e_optimality,
                                        UncertaintyMethod::e_optimality, &dict),
                1.0, 1e-12);
    EXPECT_GT(uncertainty_correlation(map, UncertaintyMethod::e_optimality,
                                      UncertaintyMethod::d_optimality, &dict),
              0.0);
    EXPECT_THROW(uncertainty_correlation(map, UncertaintyMethod::e_optimality,
                                         UncertaintyMethod::sampling, nullptr),
                 InvalidInput);

    LatentMap tiny(map_config(16));
    tiny.update(scene.frames[0].subset(std::vector<std::size_t>{0, 1, 2}));
    EXPECT_THROW(uncertainty_correlation(tiny, UncertaintyMethod::e_optimality,
                                         UncertaintyMethod::d_optimality, &dict),
                 InsufficientEvidence);
}

TEST(SparsityAblation, TableShapeAndCoverage) {
    const SyntheticScene scene = generate_scene(small_scene(0.3));
    const HoldoutSplit split = holdout_split(scene.frames, 0.8, 3);
    const auto rows = sparsity_ablation(split, map_config(16), scene.dictionary(),
                                        {0.02, 0.2, 1.0}, {1, 3, 5}, 8);
    ASSERT_EQ(rows.size(), 9u);
    for (std::size_t d = 0; d < 3; ++d) {
        EXPECT_LE(rows[d * 3].report.coverage, rows[d * 3 + 1].report.coverage);
        EXPECT_LE(rows[d * 3 + 1].report.coverage, rows[d * 3 + 2].report.coverage);
    }
    EXPECT_THROW(sparsity_ablation(split, map_config(16), scene.dictionary(), {0.0}, {1}, 8),
                 InvalidInput);
}

}  // namespace
}  // namespace latent_bki
