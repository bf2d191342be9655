#include "latent_bki/eval.hpp"

#include "latent_bki/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>

namespace latent_bki {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::size_t flat_index(const std::array<int, 3>& extent, int i, int j, int k) {
    return (static_cast<std::size_t>(i) * extent[1] + j) * extent[2] + k;
}

std::optional<std::size_t> box_index(const std::array<int, 3>& extent, const VoxelIndex& v) {
    if (v.i < 0 || v.j < 0 || v.k < 0 || v.i >= extent[0] || v.j >= extent[1] ||
        v.k >= extent[2]) {
        return std::nullopt;
    }
    return flat_index(extent, v.i, v.j, v.k);
}

Eigen::MatrixXd draw_anchors(const SceneSpec& spec, std::mt19937_64& rng) {
    if (spec.fixed_anchors.size() > 0) {
        Eigen::MatrixXd anchors = spec.fixed_anchors;
        anchors.colwise().normalize();
        return anchors;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd anchors(spec.feature_dim, spec.categories);
    int accepted = 0;
    for (int attempt = 0; accepted < spec.categories; ++attempt) {
        if (attempt > 100000) {
            throw InvalidInput("could not draw anchors with pairwise cosine below " +
                               std::to_string(spec.max_anchor_cosine));
        }
        Eigen::VectorXd candidate(spec.feature_dim);
        for (auto& x : candidate) x = normal(rng);
        candidate.normalize();
        bool separated = true;
        for (int c = 0; c < accepted && separated; ++c) {
            separated = anchors.col(c).dot(candidate) < spec.max_anchor_cosine;
        }
        if (separated) anchors.col(accepted++) = candidate;
    }
    return anchors;
}

}  // namespace

void SceneSpec::validate() const {
    if (categories < 1) {
        throw InvalidInput("scene needs at least one category");
    }
    if (extent[0] < 1 || extent[1] < 1 || extent[2] < 1) {
        throw InvalidInput("scene extent must be positive along every axis");
    }
    const auto voxels = static_cast<long long>(extent[0]) * extent[1] * extent[2];
    if (voxels < categories) {
        throw InvalidInput("scene has fewer voxels than categories");
    }
    if (!(resolution > 0.0)) throw InvalidInput("scene resolution must be positive");
    if (feature_dim < 1) throw InvalidInput("scene feature dimension must be at least 1");
    if (frames < 0 || points_per_frame < 0) throw InvalidInput("frame counts must be >= 0");
    if (!(sigma >= 0.0)) throw InvalidInput("noise scale must be non-negative");
    if (noise_patch < 1) throw InvalidInput("noise patch size must be at least 1");
    if (sigma_max >= 0.0 && sigma_max < sigma) {
        throw InvalidInput("sigma_max must not be below sigma");
    }
    if (fixed_anchors.size() > 0 &&
        (fixed_anchors.rows() != feature_dim || fixed_anchors.cols() != categories)) {
        throw InvalidInput("fixed anchors must be feature_dim x categories");
    }
}

std::optional<std::uint32_t> SyntheticScene::label_at(const VoxelIndex& v) const {
    const auto idx = box_index(spec.extent, v);
    if (!idx) return std::nullopt;
    return labels[*idx];
}

double SyntheticScene::sigma_at(const VoxelIndex& v) const {
    const auto idx = box_index(spec.extent, v);
    if (!idx) throw InvalidInput("voxel outside the synthetic scene");
    return voxel_sigma[*idx];
}

QueryDictionary SyntheticScene::dictionary() const {
    QueryDictionary dict;
    for (Eigen::Index c = 0; c < anchors.cols(); ++c) {
        dict.add("category_" + std::to_string(c), anchors.col(c));
    }
    return dict;
}

SyntheticScene generate_scene(const SceneSpec& spec) {
    spec.validate();
    SyntheticScene scene;
    scene.spec = spec;
    scene.grid.resolution = spec.resolution;
    scene.grid.filter_size = 1;

    std::mt19937_64 rng(spec.seed);
    scene.anchors = draw_anchors(spec, rng);

    const auto& ext = spec.extent;
    const std::size_t voxels = static_cast<std::size_t>(ext[0]) * ext[1] * ext[2];

    // Distinct seed voxels, one per category; every voxel takes the nearest seed's label.
    std::vector<std::size_t> order(voxels);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Eigen::Vector3d> seeds;
    for (int c = 0; c < spec.categories; ++c) {
        const std::size_t idx = order[static_cast<std::size_t>(c)];
        const auto k = static_cast<double>(idx % ext[2]);
        const auto j = static_cast<double>((idx / ext[2]) % ext[1]);
        const auto i = static_cast<double>(idx / (static_cast<std::size_t>(ext[2]) * ext[1]));
        seeds.emplace_back(i, j, k);
    }
    scene.labels.resize(voxels);
    scene.voxel_sigma.resize(voxels);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // One noise level per cubic patch so the level is coherent over a kernel footprint.
    const int patch = spec.noise_patch;
    const std::array<int, 3> patches{(ext[0] + patch - 1) / patch, (ext[1] + patch - 1) / patch,
                                     (ext[2] + patch - 1) / patch};
    std::vector<double> patch_sigma(static_cast<std::size_t>(patches[0]) * patches[1] * patches[2]);
    for (auto& s : patch_sigma) {
        const double u = unit(rng);
        s = spec.sigma_max < 0.0 ? spec.sigma : spec.sigma + u * (spec.sigma_max - spec.sigma);
    }
    for (int i = 0; i < ext[0]; ++i) {
        for (int j = 0; j < ext[1]; ++j) {
            for (int k = 0; k < ext[2]; ++k) {
                const Eigen::Vector3d here(i, j, k);
                std::uint32_t best = 0;
                double best_dist = (seeds[0] - here).squaredNorm();
                for (std::size_t s = 1; s < seeds.size(); ++s) {
                    const double d = (seeds[s] - here).squaredNorm();
                    if (d < best_dist) {
                        best_dist = d;
                        best = static_cast<std::uint32_t>(s);
                    }
                }
                const std::size_t idx = flat_index(ext, i, j, k);
                scene.labels[idx] = best;
                scene.voxel_sigma[idx] =
                    patch_sigma[flat_index(patches, i / patch, j / patch, k / patch)];
            }
        }
    }

    std::uniform_int_distribution<std::size_t> pick(0, voxels - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double noise_per_dim = 1.0 / std::sqrt(static_cast<double>(spec.feature_dim));
    Eigen::VectorXd feature(spec.feature_dim);
    Eigen::VectorXf stored(spec.feature_dim);
    scene.frames.reserve(static_cast<std::size_t>(spec.frames));
    for (int f = 0; f < spec.frames; ++f) {
        ObservationFrame frame(spec.feature_dim, false, true);
        frame.reserve(static_cast<std::size_t>(spec.points_per_frame));
        for (int n = 0; n < spec.points_per_frame; ++n) {
            const std::size_t idx = pick(rng);
            const int k = static_cast<int>(idx % ext[2]);
            const int j = static_cast<int>((idx / ext[2]) % ext[1]);
            const int i = static_cast<int>(idx / (static_cast<std::size_t>(ext[2]) * ext[1]));
            const Eigen::Vector3d position((i + unit(rng)) * spec.resolution,
                                           (j + unit(rng)) * spec.resolution,
                                           (k + unit(rng)) * spec.resolution);
            const std::uint32_t label = scene.labels[idx];
            const double sigma = scene.voxel_sigma[idx];
            feature = scene.anchors.col(label);
            if (sigma > 0.0) {
                for (auto& x : feature) x += sigma * noise_per_dim * normal(rng);
                feature.normalize();
            }
            stored = feature.cast<float>();
            frame.push_back(position, std::span<const float>(stored.data(), stored.size()),
                            std::nullopt, label);
        }
        scene.frames.push_back(std::move(frame));
    }
    return scene;
}

HoldoutSplit holdout_split(const std::vector<ObservationFrame>& frames, double fraction,
                           std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw InvalidInput("holdout fraction must lie strictly between 0 and 1");
    }
    std::size_t total = 0;
    for (const auto& f : frames) total += f.size();
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
    if (keep >= total) {
        throw InvalidInput("holdout split leaves an empty test set");
    }

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> is_train(total, 0);
    for (std::size_t n = 0; n < keep; ++n) is_train[order[n]] = 1;

    HoldoutSplit split;
    const int dim = frames.empty() ? 1 : frames.front().feature_dim();
    const bool has_range = !frames.empty() && frames.front().has_range();
    const bool has_label = !frames.empty() && frames.front().has_label();
    std::vector<std::size_t> test_global;
    std::size_t offset = 0;
    split.test = ObservationFrame(dim, has_range, has_label);
    split.test.reserve(total - keep);
    for (const auto& frame : frames) {
        std::vector<std::size_t> train_local;
        std::vector<std::size_t> test_local;
        for (std::size_t n = 0; n < frame.size(); ++n) {
            (is_train[offset + n] ? train_local : test_local).push_back(n);
        }
        split.train.push_back(frame.subset(train_local));
        const ObservationFrame held = frame.subset(test_local);
        for (std::size_t n = 0; n < held.size(); ++n) split.test.push_back(held.at(n));
        offset += frame.size();
    }
    return split;
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : classes_(classes), counts_(classes * (classes + 1), 0) {
    if (classes == 0) throw InvalidInput("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::optional<std::size_t> predicted) {
    if (truth >= classes_ || (predicted && *predicted >= classes_)) {
        throw InvalidInput("class id out of range");
    }
    ++counts_[truth * (classes_ + 1) + predicted.value_or(classes_)];
}

std::size_t ConfusionMatrix::count(std::size_t truth, std::size_t predicted) const {
    return counts_.at(truth * (classes_ + 1) + predicted);
}

MetricReport ConfusionMatrix::report() const {
    MetricReport r;
    const std::size_t c = classes_;
    r.support.assign(c, 0);
    r.true_positive.assign(c, 0);
    r.false_positive.assign(c, 0);
    r.false_negative.assign(c, 0);
    r.iou.assign(c, 0.0);
    for (std::size_t t = 0; t < c; ++t) {
        for (std::size_t p = 0; p <= c; ++p) {
            const std::size_t n = counts_[t * (c + 1) + p];
            r.total += n;
            r.support[t] += n;
            if (p < c) r.covered += n;
            if (p == t) {
                r.true_positive[t] += n;
            } else {
                r.false_negative[t] += n;
                if (p < c) r.false_positive[p] += n;
            }
        }
    }
    std::size_t present = 0;
    double iou_sum = 0.0;
    for (std::size_t t = 0; t < c; ++t) {
        r.correct += r.true_positive[t];
        const std::size_t denom = r.true_positive[t] + r.false_positive[t] + r.false_negative[t];
        r.iou[t] = denom == 0 ? 0.0 : static_cast<double>(r.true_positive[t]) / denom;
        if (r.support[t] > 0) {
            ++present;
            iou_sum += r.iou[t];
        }
    }
    if (r.total > 0) {
        r.accuracy = static_cast<double>(r.correct) / r.total;
        r.coverage = static_cast<double>(r.covered) / r.total;
    }
    r.miou = present == 0 ? 0.0 : iou_sum / present;
    return r;
}

namespace {

std::optional<std::size_t> predict_point(const LatentMap& map, const Eigen::Vector3d& p,
                                         const QueryDictionary& dict, const PcaTransform* lift) {
    const VoxelState s = map.voxel(world_to_index(p, map.grid()));
    if (!(s.lam > 1.0)) return std::nullopt;
    try {
        return decode_category(s, dict, lift).category;
    } catch (const Undecodable&) {
        return std::nullopt;
    }
}

void require_labels(const ObservationFrame& points) {
    if (points.empty()) throw InvalidInput("evaluation needs a non-empty test set");
    if (!points.has_label()) throw InvalidInput("evaluation points must carry labels");
}

}  // namespace

MetricReport evaluate_map(const LatentMap& map, const ObservationFrame& test,
                          const QueryDictionary& dict, const PcaTransform* lift) {
    require_labels(test);
    ConfusionMatrix cm(dict.size());
    for (std::size_t n = 0; n < test.size(); ++n) {
        cm.add(test.label(n), predict_point(map, test.position(n), dict, lift));
    }
    return cm.report();
}

MetricReport evaluate_raw(const ObservationFrame& points, const QueryDictionary& dict) {
    require_labels(points);
    ConfusionMatrix cm(dict.size());
    for (std::size_t n = 0; n < points.size(); ++n) {
        std::optional<std::size_t> predicted;
        try {
            predicted = decode_feature(points.feature(n).cast<double>(), dict).category;
        } catch (const Undecodable&) {
        }
        cm.add(points.label(n), predicted);
    }
    return cm.report();
}

LatentMap build_map(const std::vector<ObservationFrame>& frames, const MapConfig& cfg,
                    const PcaTransform* encode) {
    LatentMap map(cfg);
    for (const auto& frame : frames) {
        map.update(encode ? encode->encode(frame) : frame);
    }
    return map;
}

Uncertainty voxel_uncertainty(const VoxelState& s, const VoxelIndex& v, UncertaintyMethod method,
                              const QueryDictionary* dict, const PcaTransform* lift,
                              const UncertaintyOptions& options) {
    if (!(s.lam > 2.0)) return Uncertainty::undefined();
    switch (method) {
        case UncertaintyMethod::e_optimality:
            return uncertainty_e_optimality(s);
        case UncertaintyMethod::d_optimality:
            return uncertainty_d_optimality(s);
        case UncertaintyMethod::sampling: {
            if (dict == nullptr) {
                throw InvalidInput("sampling uncertainty needs a query dictionary");
            }
            const std::uint64_t seed =
                splitmix64(options.seed ^ splitmix64(static_cast<std::uint64_t>(pack_index(v))));
            return Uncertainty(
                uncertainty_sampling(s, *dict, options.samples, seed, lift).best_score_variance);
        }
    }
    throw InvalidInput("unknown uncertainty method");
}

std::vector<AblationRow> sparsity_ablation(const HoldoutSplit& split, const MapConfig& base,
                                           const QueryDictionary& dict,
                                           const std::vector<double>& densities,
                                           const std::vector<int>& filter_sizes,
                                           std::uint64_t seed, const PcaTransform* lift) {
    for (const double d : densities) {
        if (!(d > 0.0 && d <= 1.0)) throw InvalidInput("densities must lie in (0, 1]");
    }
    std::vector<std::pair<std::size_t, std::size_t>> points;  // (frame, point)
    for (std::size_t f = 0; f < split.train.size(); ++f) {
        for (std::size_t n = 0; n < split.train[f].size(); ++n) points.emplace_back(f, n);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(points.begin(), points.end(), rng);

    std::vector<AblationRow> rows;
    for (const double density : densities) {
        const auto keep =
            static_cast<std::size_t>(std::llround(density * static_cast<double>(points.size())));
        std::vector<std::vector<std::size_t>> chosen(split.train.size());
        for (std::size_t n = 0; n < keep; ++n) chosen[points[n].first].push_back(points[n].second);
        std::vector<ObservationFrame> frames;
        for (std::size_t f = 0; f < split.train.size(); ++f) {
            std::sort(chosen[f].begin(), chosen[f].end());
            frames.push_back(split.train[f].subset(chosen[f]));
        }
        for (const int k : filter_sizes) {
            MapConfig cfg = base;
            cfg.grid.filter_size = k;
            const LatentMap map = build_map(frames, cfg, lift);
            rows.push_back({density, k, evaluate_map(map, split.test, dict, lift)});
        }
    }
    return rows;
}

std::vector<SparsificationPoint> sparsification_curve(
    const std::vector<std::size_t>& truth, const std::vector<std::optional<std::size_t>>& predicted,
    const std::vector<Uncertainty>& uncertainty, std::size_t classes, std::size_t bins) {
    if (bins < 2) throw InvalidInput("sparsification needs at least two bins");
    if (truth.size() != predicted.size() || truth.size() != uncertainty.size()) {
        throw InvalidInput("sparsification inputs differ in length");
    }
    std::vector<std::size_t> order(truth.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return uncertainty[a] > uncertainty[b];
    });

    std::vector<SparsificationPoint> curve;
    curve.reserve(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t removed = b * order.size() / bins;
        ConfusionMatrix cm(classes);
        for (std::size_t n = removed; n < order.size(); ++n) {
            cm.add(truth[order[n]], predicted[order[n]]);
        }
        const MetricReport r = cm.report();
        curve.push_back({static_cast<double>(b) / static_cast<double>(bins), r.total, r.accuracy,
                         r.miou});
    }
    return curve;
}

std::vector<SparsificationPoint> sparsification_curve(const LatentMap& map,
                                                      const ObservationFrame& test,
                                                      const QueryDictionary& dict,
                                                      UncertaintyMethod method, std::size_t bins,
                                                      const UncertaintyOptions& options,
                                                      const PcaTransform* lift) {
    require_labels(test);
    std::unordered_map<std::int64_t, Uncertainty> cache;
    std::vector<std::size_t> truth(test.size());
    std::vector<std::optional<std::size_t>> predicted(test.size());
    std::vector<Uncertainty> uncertainty(test.size());
    for (std::size_t n = 0; n < test.size(); ++n) {
        const VoxelIndex v = world_to_index(test.position(n), map.grid());
        truth[n] = test.label(n);
        predicted[n] = predict_point(map, test.position(n), dict, lift);
        const std::int64_t key = pack_index(v);
        auto it = cache.find(key);
        if (it == cache.end()) {
            it = cache.emplace(key, voxel_uncertainty(map.voxel(v), v, method, &dict, lift, options))
                     .first;
        }
        uncertainty[n] = it->second;
    }
    return sparsification_curve(truth, predicted, uncertainty, dict.size(), bins);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t start = 0; start < order.size();) {
        std::size_t end = start + 1;
        while (end < order.size() && values[order[end]] == values[order[start]]) ++end;
        const double rank = 0.5 * static_cast<double>(start + end - 1);
        for (std::size_t n = start; n < end; ++n) ranks[order[n]] = rank;
        start = end;
    }
    return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw InvalidInput("rank correlation needs two equally long vectors of length >= 2");
    }
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
    const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
    const Eigen::VectorXd xc = x.array() - x.mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double denom = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
    if (denom == 0.0) {
        throw InvalidInput("rank correlation is undefined for a constant vector");
    }
    return xc.dot(yc) / denom;
}

double uncertainty_correlation(const LatentMap& map, UncertaintyMethod a, UncertaintyMethod b,
                               const QueryDictionary* dict, const UncertaintyOptions& options,
                               const PcaTransform* lift) {
    std::vector<double> ua;
    std::vector<double> ub;
    for (const VoxelIndex& v : map.indices()) {
        const VoxelState s = map.voxel(v);
        const Uncertainty x = voxel_uncertainty(s, v, a, dict, lift, options);
        const Uncertainty y = voxel_uncertainty(s, v, b, dict, lift, options);
        if (x.defined() && y.defined()) {
            ua.push_back(x.value());
            ub.push_back(y.value());
        }
    }
    if (ua.size() < 100) {
        throw InsufficientEvidence("uncertainty correlation needs at least 100 voxels with "
                                   "defined uncertainty, found " +
                                   std::to_string(ua.size()));
    }
    return spearman(ua, ub);
}

}  // namespace latent_bki
