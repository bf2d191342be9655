#pragma once

#include "latent_bki/compression.hpp"
#include "latent_bki/inference.hpp"
#include "latent_bki/latent_map.hpp"
#include "latent_bki/observation.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace latent_bki {

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Parameters of a labeled box of voxels observed by noisy unit-norm features.
///
/// Categories occupy Voronoi cells around one seed voxel each. A point's feature is
/// normalize(anchor + sigma_v / sqrt(C) * g) with g ~ N(0, I), so sigma_v is the expected
/// norm of the noise before normalization. sigma_v is constant over cubic patches of
/// noise_patch voxels and drawn per patch from [sigma, sigma_max]; sigma_max < 0 means
/// sigma_v = sigma everywhere.
struct SceneSpec {
    std::array<int, 3> extent{40, 40, 4};  // voxels along x, y, z; the box starts at the origin
    double resolution = 0.1;
    int categories = 6;
    int feature_dim = 32;
    int frames = 10;
    int points_per_frame = 10000;
    double sigma = 0.5;
    double sigma_max = -1.0;
    int noise_patch = 8;
    double max_anchor_cosine = 0.8;
    std::uint64_t seed = 1;
    // Optional explicit anchors (feature_dim x categories); normalized before use.
    Eigen::MatrixXd fixed_anchors;

    void validate() const;
};

struct SyntheticScene {
    SceneSpec spec;
    GridConfig grid;
    Eigen::MatrixXd anchors;             // feature_dim x categories, unit columns
    std::vector<std::uint32_t> labels;   // one per voxel of the box
    std::vector<double> voxel_sigma;     // one per voxel of the box
    std::vector<ObservationFrame> frames;  // labeled, full-dimension features

    std::size_t voxel_count() const { return labels.size(); }
    std::optional<std::uint32_t> label_at(const VoxelIndex& v) const;
    double sigma_at(const VoxelIndex& v) const;
    QueryDictionary dictionary() const;  // phrases "category_<n>" with the anchors
};

// Deterministic for a fixed spec. Throws InvalidInput for an empty category set.
SyntheticScene generate_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Splits and metrics
// ---------------------------------------------------------------------------

struct HoldoutSplit {
    std::vector<ObservationFrame> train;  // same frame structure, held-out points removed
    ObservationFrame test;
};

/// Point-level split: round(fraction * N) points stay in the training frames, the rest
/// become the test set. Throws InvalidInput unless 0 < fraction < 1 and the test set is
/// non-empty.
HoldoutSplit holdout_split(const std::vector<ObservationFrame>& frames, double fraction,
                           std::uint64_t seed);

/// Accuracy, per-class IoU and mIoU. mIoU averages classes with non-zero ground-truth
/// support. `coverage` is the share of points that received a prediction at all.
struct MetricReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t covered = 0;
    double accuracy = 0.0;
    double miou = 0.0;
    double coverage = 0.0;
    std::vector<double> iou;
    std::vector<std::size_t> support;
    std::vector<std::size_t> true_positive;
    std::vector<std::size_t> false_positive;
    std::vector<std::size_t> false_negative;
};

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes);

    // A missing prediction is an error for the true class but a false positive for none.
    void add(std::size_t truth, std::optional<std::size_t> predicted);
    std::size_t classes() const { return classes_; }
    std::size_t count(std::size_t truth, std::size_t predicted) const;
    MetricReport report() const;

private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;  // classes x (classes + 1); last column = no prediction
};

// Decodes each labeled test point through its containing voxel. Points whose voxel has
// lam <= 1 (or an undecodable expectation) count as wrong.
MetricReport evaluate_map(const LatentMap& map, const ObservationFrame& test,
                          const QueryDictionary& dict, const PcaTransform* lift = nullptr);

// Decodes each labeled point from its own feature (no fusion).
MetricReport evaluate_raw(const ObservationFrame& points, const QueryDictionary& dict);

LatentMap build_map(const std::vector<ObservationFrame>& frames, const MapConfig& cfg,
                    const PcaTransform* encode = nullptr);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

enum class UncertaintyMethod { sampling, e_optimality, d_optimality };

struct UncertaintyOptions {
    std::size_t samples = 100;  // sampling method only
    std::uint64_t seed = 0;
};

/// Uncertainty of one voxel; undefined for lam <= 2 under every method. Sampling draws
/// with a seed derived from (options.seed, voxel index) so results do not depend on the
/// order voxels are visited in.
Uncertainty voxel_uncertainty(const VoxelState& s, const VoxelIndex& v, UncertaintyMethod method,
                              const QueryDictionary* dict, const PcaTransform* lift,
                              const UncertaintyOptions& options);

struct AblationRow {
    double density = 1.0;
    int filter_size = 1;
    MetricReport report;
};

/// One map per (density, filter size). Training points are subsampled by a single seeded
/// permutation, so every filter size sees the same points and sparser sets are subsets of
/// denser ones.
std::vector<AblationRow> sparsity_ablation(const HoldoutSplit& split, const MapConfig& base,
                                           const QueryDictionary& dict,
                                           const std::vector<double>& densities,
                                           const std::vector<int>& filter_sizes,
                                           std::uint64_t seed,
                                           const PcaTransform* lift = nullptr);

struct SparsificationPoint {
    double fraction_removed = 0.0;
    std::size_t remaining = 0;
    double accuracy = 0.0;
    double miou = 0.0;
};

/// Sorts points by uncertainty (most uncertain first, undefined before any value, ties in
/// input order) and reports metrics after removing 0, 1, ..., bins - 1 of `bins` equal
/// slices. Missing predictions count as wrong.
std::vector<SparsificationPoint> sparsification_curve(
    const std::vector<std::size_t>& truth, const std::vector<std::optional<std::size_t>>& predicted,
    const std::vector<Uncertainty>& uncertainty, std::size_t classes, std::size_t bins);

std::vector<SparsificationPoint> sparsification_curve(const LatentMap& map,
                                                      const ObservationFrame& test,
                                                      const QueryDictionary& dict,
                                                      UncertaintyMethod method, std::size_t bins,
                                                      const UncertaintyOptions& options = {},
                                                      const PcaTransform* lift = nullptr);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// Rank correlation between two uncertainty methods over allocated voxels where both are
/// defined. Throws InsufficientEvidence with fewer than 100 such voxels.
double uncertainty_correlation(const LatentMap& map, UncertaintyMethod a, UncertaintyMethod b,
                               const QueryDictionary* dict, const UncertaintyOptions& options = {},
                               const PcaTransform* lift = nullptr);

}  // namespace latent_bki
