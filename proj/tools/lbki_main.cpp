// lbki: build, query and evaluate latent BKI maps from the command line.

#include "latent_bki/compression.hpp"
#include "latent_bki/error.hpp"
#include "latent_bki/eval.hpp"
#include "latent_bki/inference.hpp"
#include "latent_bki/io.hpp"
#include "latent_bki/latent_map.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <locale>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace latent_bki;

namespace {

// Bad flags, bad values or an invalid config file: exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool verbose = false;
};

Globals g;

void log(const std::string& msg) {
    if (g.verbose) std::cerr << "lbki: " << msg << '\n';
}

void warn(const std::string& msg) { std::cerr << "lbki: warning: " << msg << '\n'; }

std::ostringstream text_stream() {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out << std::setprecision(9);
    return out;
}

template <typename Fn>
auto config_step(Fn&& fn) {
    try {
        return fn();
    } catch (const InvalidInput& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
}

io::BuildConfig load_build_config() {
    if (g.config.empty()) return {};
    io::KeyValueConfig kv = [&] {
        try {
            return io::KeyValueConfig::load(g.config);
        } catch (const InvalidInput& e) {
            throw UsageError(g.config + ": " + e.what());
        }
    }();
    return config_step([&] { return io::parse_build_config(std::move(kv)); });
}

io::ExperimentSpec load_experiment_spec(const std::string& path) {
    io::KeyValueConfig kv;
    if (!path.empty()) {
        try {
            kv = io::KeyValueConfig::load(path);
        } catch (const InvalidInput& e) {
            throw UsageError(path + ": " + e.what());
        }
    }
    io::ExperimentSpec spec = config_step([&] { return io::parse_experiment_spec(std::move(kv)); });
    if (g.seed) spec.scene.seed = *g.seed;
    return spec;
}

std::optional<PcaTransform> maybe_pca(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return io::read_pca(path);
}

UncertaintyMethod parse_method(const std::string& name) {
    if (name == "sampling") return UncertaintyMethod::sampling;
    if (name == "e") return UncertaintyMethod::e_optimality;
    if (name == "d") return UncertaintyMethod::d_optimality;
    throw UsageError("unknown uncertainty method '" + name + "' (expected sampling, e or d)");
}

const char* method_name(UncertaintyMethod m) {
    switch (m) {
        case UncertaintyMethod::sampling: return "sampling";
        case UncertaintyMethod::e_optimality: return "e";
        case UncertaintyMethod::d_optimality: return "d";
    }
    return "?";
}

void require_dims(const LatentMap& map, const QueryDictionary& dict, const PcaTransform* lift) {
    if (lift) {
        if (lift->reduced_dim() != map.latent_dim() || lift->full_dim() != dict.dim()) {
            throw DataError("PCA transform " + std::to_string(lift->full_dim()) + "->" +
                            std::to_string(lift->reduced_dim()) + " does not connect map dim " +
                            std::to_string(map.latent_dim()) + " to dictionary dim " +
                            std::to_string(dict.dim()));
        }
    } else if (dict.dim() != map.latent_dim()) {
        throw DataError("dictionary dim " + std::to_string(dict.dim()) + " differs from map dim " +
                        std::to_string(map.latent_dim()) + "; pass --pca to lift");
    }
}

// ---------------------------------------------------------------------------

struct BuildArgs {
    std::vector<std::string> inputs;
    std::string pca;
    std::string output;
};

int run_build(const BuildArgs& a) {
    const io::BuildConfig cfg = load_build_config();
    const auto pca = maybe_pca(a.pca);
    if (pca && pca->reduced_dim() != cfg.map.latent_dim) {
        throw DataError("PCA reduces to " + std::to_string(pca->reduced_dim()) +
                        " dims but the config asks for latent_dim " +
                        std::to_string(cfg.map.latent_dim));
    }
    std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
    const auto files = io::collect_frame_files(paths);

    LatentMap map(cfg.map);
    map.set_threads(g.threads);
    std::size_t kept = 0;
    std::size_t dropped = 0;
    for (const auto& file : files) {
        ObservationFrame frame = io::read_frame(file);
        const std::size_t before = frame.size();
        frame = io::filter_by_depth(frame, cfg.min_depth, cfg.max_depth);
        dropped += before - frame.size();
        if (pca) {
            if (frame.feature_dim() != pca->full_dim()) {
                throw DataError(file.string() + ": feature dim " +
                                std::to_string(frame.feature_dim()) + " does not match PCA input " +
                                std::to_string(pca->full_dim()));
            }
            frame = pca->encode(frame);
        } else if (frame.size() > 0 && frame.feature_dim() != cfg.map.latent_dim) {
            throw DataError(file.string() + ": feature dim " +
                            std::to_string(frame.feature_dim()) + " conflicts with latent_dim " +
                            std::to_string(cfg.map.latent_dim));
        }
        map.update(frame);
        kept += frame.size();
        log(file.string() + ": " + std::to_string(frame.size()) + " points, map has " +
            std::to_string(map.size()) + " voxels");
    }
    io::write_map(a.output, map);
    log("fused " + std::to_string(kept) + " points from " + std::to_string(files.size()) +
        " frames (" + std::to_string(dropped) + " dropped by depth), " +
        std::to_string(map.size()) + " voxels -> " + a.output);
    return 0;
}

// ---------------------------------------------------------------------------

struct QueryArgs {
    std::string map;
    std::string dict;
    std::string pca;
    std::string output;
    std::string mode = "category";
};

int run_query(const QueryArgs& a) {
    std::optional<std::string> phrase;
    if (a.mode.rfind("heatmap:", 0) == 0) {
        phrase = a.mode.substr(8);
        if (phrase->empty()) throw UsageError("heatmap mode needs a phrase: heatmap:<phrase>");
    } else if (a.mode != "category") {
        throw UsageError("unknown query mode '" + a.mode + "' (expected category or heatmap:<phrase>)");
    }

    const LatentMap map = io::read_map(a.map);
    const QueryDictionary dict = io::read_dictionary(a.dict);
    const auto pca = maybe_pca(a.pca);
    const PcaTransform* lift = pca ? &*pca : nullptr;
    require_dims(map, dict, lift);

    std::optional<std::size_t> target;
    if (phrase) {
        target = dict.find(*phrase);
        if (!target) throw DataError("phrase '" + *phrase + "' is not in " + a.dict);
    }

    std::vector<io::ColoredPoint> points;
    std::size_t unobserved = 0;
    std::size_t undecodable = 0;
    for (const VoxelIndex& v : map.indices()) {
        const VoxelState s = map.voxel(v);
        if (!(s.lam > 1.0)) {
            ++unobserved;
            continue;
        }
        const Eigen::Vector3d c = index_to_centroid(v, map.grid());
        try {
            if (target) {
                const Eigen::VectorXd mean = predictive_expectation(s).mean;
                const Eigen::VectorXd y = lift ? lift->decode(mean) : mean;
                const double score = dict.cosine_scores(y)[static_cast<Eigen::Index>(*target)];
                points.push_back({c, io::heat_color(score), score});
            } else {
                const VoxelPrediction p = decode_category(s, dict, lift);
                points.push_back({c, io::category_color(p.category), std::nullopt});
            }
        } catch (const Undecodable&) {
            ++undecodable;
        }
    }
    if (map.empty()) warn("map is empty; writing an empty export");
    if (undecodable > 0) warn(std::to_string(undecodable) + " voxels were undecodable and skipped");
    log(std::to_string(unobserved) + " voxels with lambda <= 1 skipped");
    io::write_file_atomic(a.output, io::to_ascii_ply(points, target.has_value()));
    log(std::to_string(points.size()) + " points -> " + a.output);
    return 0;
}

// ---------------------------------------------------------------------------

struct UncertaintyArgs {
    std::string map;
    std::string method = "e";
    std::size_t samples = 100;
    std::string dict;
    std::string pca;
    std::string output;
};

int run_uncertainty(const UncertaintyArgs& a) {
    const UncertaintyMethod method = parse_method(a.method);
    if (a.samples < 1) throw UsageError("--samples must be at least 1");
    const LatentMap map = io::read_map(a.map);
    std::optional<QueryDictionary> dict;
    if (!a.dict.empty()) dict = io::read_dictionary(a.dict);
    if (method == UncertaintyMethod::sampling && !dict) {
        throw UsageError("sampling uncertainty needs --dict");
    }
    const auto pca = maybe_pca(a.pca);
    const PcaTransform* lift = pca ? &*pca : nullptr;
    if (dict) require_dims(map, *dict, lift);

    struct Row {
        VoxelIndex v;
        double lam;
        Uncertainty u;
    };
    const UncertaintyOptions options{a.samples, g.seed.value_or(0)};
    std::vector<Row> rows;
    for (const VoxelIndex& v : map.indices()) {
        const VoxelState s = map.voxel(v);
        rows.push_back({v, s.lam, voxel_uncertainty(s, v, method, dict ? &*dict : nullptr, lift, options)});
    }
    // Ascending uncertainty, undefined last; indices() is already in key order for ties.
    std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.u < y.u; });

    std::ostringstream out = text_stream();
    out << "i,j,k,lambda,uncertainty\n";
    std::size_t undefined = 0;
    for (const Row& r : rows) {
        out << r.v.i << ',' << r.v.j << ',' << r.v.k << ',' << r.lam << ',';
        if (r.u.defined()) {
            out << r.u.value();
        } else {
            out << "undefined";
            ++undefined;
        }
        out << '\n';
    }
    io::write_file_atomic(a.output, out.str());
    log(std::to_string(rows.size()) + " voxels (" + std::to_string(undefined) +
        " undefined), method " + method_name(method) + " -> " + a.output);
    return 0;
}

// ---------------------------------------------------------------------------

void write_metrics_header(std::ostringstream& out, std::size_t classes) {
    out << "source,total,correct,coverage,accuracy,miou";
    for (std::size_t c = 0; c < classes; ++c) out << ",iou_" << c;
    out << '\n';
}

void write_metrics_row(std::ostringstream& out, const std::string& source, const MetricReport& r) {
    out << source << ',' << r.total << ',' << r.correct << ',' << r.coverage << ',' << r.accuracy
        << ',' << r.miou;
    for (const double iou : r.iou) out << ',' << iou;
    out << '\n';
}

void write_curve(const fs::path& path, const std::vector<SparsificationPoint>& curve) {
    std::ostringstream out = text_stream();
    out << "fraction_removed,remaining,accuracy,miou\n";
    for (const auto& p : curve) {
        out << p.fraction_removed << ',' << p.remaining << ',' << p.accuracy << ',' << p.miou << '\n';
    }
    io::write_file_atomic(path, out.str());
}

struct EvalArgs {
    std::string spec;
    std::string output_dir;
    std::string map;
    std::string test;
    std::string dict;
    std::string pca;
    std::string method = "e";
    std::size_t bins = 10;
    std::size_t samples = 100;
};

int eval_existing(const EvalArgs& a) {
    if (a.map.empty() || a.test.empty() || a.dict.empty()) {
        throw UsageError("eval needs either --spec or all of --map, --test and --dict");
    }
    const LatentMap map = io::read_map(a.map);
    const ObservationFrame test = io::read_frame(a.test);
    const QueryDictionary dict = io::read_dictionary(a.dict);
    const auto pca = maybe_pca(a.pca);
    const PcaTransform* lift = pca ? &*pca : nullptr;
    require_dims(map, dict, lift);
    if (!test.has_label()) throw DataError(a.test + " has no labels");
    if (a.bins < 2) throw UsageError("--bins must be at least 2");

    const UncertaintyMethod method = parse_method(a.method);
    const MetricReport report = evaluate_map(map, test, dict, lift);
    std::ostringstream out = text_stream();
    write_metrics_header(out, dict.size());
    write_metrics_row(out, "map", report);

    fs::create_directories(a.output_dir);
    io::write_file_atomic(fs::path(a.output_dir) / "metrics.csv", out.str());
    write_curve(fs::path(a.output_dir) / (std::string("sparsification_") + method_name(method) + ".csv"),
                sparsification_curve(map, test, dict, method, a.bins,
                                     {a.samples, g.seed.value_or(0)}, lift));
    std::cout << "accuracy " << report.accuracy << " miou " << report.miou << " coverage "
              << report.coverage << '\n';
    return 0;
}

int eval_experiment(const EvalArgs& a) {
    const io::ExperimentSpec spec = load_experiment_spec(a.spec);
    // Resolution and latent_dim always follow the scene; the rest may come from --config.
    MapConfig cfg = load_build_config().map;
    cfg.grid.resolution = spec.scene.resolution;
    cfg.latent_dim = spec.scene.feature_dim;
    const std::uint64_t seed = spec.scene.seed;

    log("generating scene");
    const SyntheticScene scene = generate_scene(spec.scene);
    const HoldoutSplit split = holdout_split(scene.frames, spec.holdout_fraction, seed);
    const QueryDictionary dict = scene.dictionary();

    log("building map");
    LatentMap map(cfg);
    map.set_threads(g.threads);
    for (const auto& f : split.train) map.update(f);

    const MetricReport fused = evaluate_map(map, split.test, dict);
    const MetricReport raw = evaluate_raw(split.test, dict);

    const fs::path dir = a.output_dir;
    fs::create_directories(dir);
    std::ostringstream metrics = text_stream();
    write_metrics_header(metrics, dict.size());
    write_metrics_row(metrics, "map", fused);
    write_metrics_row(metrics, "raw", raw);
    io::write_file_atomic(dir / "metrics.csv", metrics.str());

    const UncertaintyOptions options{spec.samples, seed};
    for (const auto method : {UncertaintyMethod::e_optimality, UncertaintyMethod::d_optimality,
                              UncertaintyMethod::sampling}) {
        log(std::string("sparsification ") + method_name(method));
        write_curve(dir / (std::string("sparsification_") + method_name(method) + ".csv"),
                    sparsification_curve(map, split.test, dict, method, spec.bins, options));
    }

    log("sparsity ablation");
    const auto rows = sparsity_ablation(split, cfg, dict, spec.densities, spec.filter_sizes, seed);
    std::ostringstream ablation = text_stream();
    ablation << "density,filter_size,coverage,accuracy,miou\n";
    for (const auto& r : rows) {
        ablation << r.density << ',' << r.filter_size << ',' << r.report.coverage << ','
                 << r.report.accuracy << ',' << r.report.miou << '\n';
    }
    io::write_file_atomic(dir / "ablation.csv", ablation.str());

    std::cout << "map accuracy " << fused.accuracy << " miou " << fused.miou << "; raw accuracy "
              << raw.accuracy << " miou " << raw.miou << '\n';
    return 0;
}

int run_eval(const EvalArgs& a) {
    if (a.output_dir.empty()) throw UsageError("eval needs --output-dir");
    return a.spec.empty() ? eval_existing(a) : eval_experiment(a);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string spec;
    std::string output_dir;
};

int run_synth(const SynthArgs& a) {
    const io::ExperimentSpec spec = load_experiment_spec(a.spec);
    const SyntheticScene scene = generate_scene(spec.scene);
    const HoldoutSplit split = holdout_split(scene.frames, spec.holdout_fraction, spec.scene.seed);

    const fs::path dir = a.output_dir;
    fs::create_directories(dir / "frames");
    for (std::size_t f = 0; f < split.train.size(); ++f) {
        std::ostringstream name;
        name << "frame_" << std::setw(5) << std::setfill('0') << f << ".lbkf";
        io::write_frame(dir / "frames" / name.str(), split.train[f]);
    }
    io::write_frame(dir / "test.lbkf", split.test);
    io::write_dictionary(dir / "dict.lbkd", scene.dictionary());
    log(std::to_string(split.train.size()) + " frames, " + std::to_string(split.test.size()) +
        " test points -> " + a.output_dir);
    return 0;
}

// ---------------------------------------------------------------------------

struct PcaArgs {
    std::vector<std::string> inputs;
    std::string output;
    std::string pca;
    int dim = 64;
    std::size_t max_samples = 200000;
};

Eigen::MatrixXd gather_features(const std::vector<fs::path>& files, std::size_t max_samples,
                                std::uint64_t seed) {
    std::vector<ObservationFrame> frames;
    std::size_t total = 0;
    int dim = -1;
    for (const auto& f : files) {
        frames.push_back(io::read_frame(f));
        if (frames.back().size() == 0) continue;
        if (dim >= 0 && frames.back().feature_dim() != dim) {
            throw DataError(f.string() + ": feature dim differs from earlier frames");
        }
        dim = frames.back().feature_dim();
        total += frames.back().size();
    }
    if (total == 0) throw DataError("no points to fit PCA on");

    std::vector<std::size_t> pick(total);
    std::iota(pick.begin(), pick.end(), 0);
    if (total > max_samples) {
        std::mt19937_64 rng(seed);
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(max_samples);
        std::sort(pick.begin(), pick.end());
    }
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(pick.size()), dim);
    std::size_t global = 0;
    std::size_t row = 0;
    for (const auto& frame : frames) {
        for (std::size_t n = 0; n < frame.size() && row < pick.size(); ++n, ++global) {
            if (pick[row] != global) continue;
            samples.row(static_cast<Eigen::Index>(row++)) = frame.feature(n).cast<double>().transpose();
        }
    }
    return samples;
}

int run_pca_fit(const PcaArgs& a) {
    std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
    const Eigen::MatrixXd samples =
        gather_features(io::collect_frame_files(paths), a.max_samples, g.seed.value_or(0));
    const PcaTransform t = pca_fit(samples, a.dim);
    io::write_pca(a.output, t);
    std::cout << "pca " << t.full_dim() << " -> " << t.reduced_dim()
              << ", reconstruction mse " << reconstruction_mse(t, samples) << " over "
              << samples.rows() << " samples\n";
    return 0;
}

int run_pca_apply(const PcaArgs& a) {
    const PcaTransform t = io::read_pca(a.pca);
    std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
    const auto files = io::collect_frame_files(paths);
    fs::create_directories(a.output);
    double squared = 0.0;
    std::size_t entries = 0;
    for (const auto& file : files) {
        const ObservationFrame frame = io::read_frame(file);
        if (frame.size() > 0 && frame.feature_dim() != t.full_dim()) {
            throw DataError(file.string() + ": feature dim " + std::to_string(frame.feature_dim()) +
                            " does not match PCA input " + std::to_string(t.full_dim()));
        }
        const ObservationFrame encoded = t.encode(frame);
        for (std::size_t n = 0; n < frame.size(); ++n) {
            const Eigen::VectorXd y = frame.feature(n).cast<double>();
            squared += (t.decode(encoded.feature(n).cast<double>()) - y).squaredNorm();
            entries += static_cast<std::size_t>(y.size());
        }
        io::write_frame(fs::path(a.output) / file.filename(), encoded);
    }
    std::cout << "encoded " << files.size() << " frames to " << t.reduced_dim()
              << " dims, reconstruction mse " << (entries ? squared / entries : 0.0) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent Bayesian kernel inference maps"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", g.config, "Key/value config file");
    app.add_option("--seed", g.seed, "Seed for sampling and synthetic scenes");
    app.add_option("--threads", g.threads, "Worker threads for map updates")->check(CLI::PositiveNumber);
    app.add_flag("-v,--verbose", g.verbose, "Progress messages on stderr");

    BuildArgs build;
    auto* cmd_build = app.add_subcommand("build", "Fuse frame files into a map");
    cmd_build->add_option("inputs", build.inputs, "Frame files or directories");
    cmd_build->add_option("--pca", build.pca, "PCA transform applied to features before fusion");
    cmd_build->add_option("-o,--output", build.output, "Output map file")->required();

    QueryArgs query;
    auto* cmd_query = app.add_subcommand("query", "Export a decoded point cloud (ASCII PLY)");
    cmd_query->add_option("--map", query.map)->required();
    cmd_query->add_option("--dict", query.dict)->required();
    cmd_query->add_option("--pca", query.pca, "Lift map features before decoding");
    cmd_query->add_option("-o,--output", query.output)->required();
    cmd_query->add_option("--mode", query.mode, "category or heatmap:<phrase>")->capture_default_str();

    UncertaintyArgs unc;
    auto* cmd_unc = app.add_subcommand("uncertainty", "Per-voxel uncertainty CSV");
    cmd_unc->add_option("--map", unc.map)->required();
    cmd_unc->add_option("--method", unc.method, "sampling, e or d")->capture_default_str();
    cmd_unc->add_option("--samples", unc.samples)->capture_default_str();
    cmd_unc->add_option("--dict", unc.dict, "Dictionary (required for sampling)");
    cmd_unc->add_option("--pca", unc.pca);
    cmd_unc->add_option("-o,--output", unc.output)->required();

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "Metrics, sparsification curves and ablation");
    cmd_eval->add_option("--spec", eval.spec, "Experiment spec; runs the synthetic protocol");
    cmd_eval->add_option("--map", eval.map);
    cmd_eval->add_option("--test", eval.test, "Labeled test frame");
    cmd_eval->add_option("--dict", eval.dict);
    cmd_eval->add_option("--pca", eval.pca);
    cmd_eval->add_option("--method", eval.method)->capture_default_str();
    cmd_eval->add_option("--bins", eval.bins)->capture_default_str();
    cmd_eval->add_option("--samples", eval.samples)->capture_default_str();
    cmd_eval->add_option("-o,--output-dir", eval.output_dir)->required();

    SynthArgs synth;
    auto* cmd_synth = app.add_subcommand("synth", "Write a synthetic scene as frame files");
    cmd_synth->add_option("--spec", synth.spec, "Experiment spec (defaults apply when omitted)");
    cmd_synth->add_option("-o,--output-dir", synth.output_dir)->required();

    PcaArgs pca;
    auto* cmd_pca = app.add_subcommand("pca", "Fit or apply a PCA transform");
    cmd_pca->require_subcommand(1);
    auto* cmd_fit = cmd_pca->add_subcommand("fit", "Fit a transform on frame features");
    cmd_fit->add_option("inputs", pca.inputs)->required();
    cmd_fit->add_option("--dim", pca.dim, "Reduced dimension")->capture_default_str();
    cmd_fit->add_option("--max-samples", pca.max_samples)->capture_default_str();
    cmd_fit->add_option("-o,--output", pca.output)->required();
    auto* cmd_apply = cmd_pca->add_subcommand("apply", "Encode frame files");
    cmd_apply->add_option("inputs", pca.inputs)->required();
    cmd_apply->add_option("--pca", pca.pca)->required();
    cmd_apply->add_option("-o,--output-dir", pca.output)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*cmd_build) return run_build(build);
        if (*cmd_query) return run_query(query);
        if (*cmd_unc) return run_uncertainty(unc);
        if (*cmd_eval) return run_eval(eval);
        if (*cmd_synth) return run_synth(synth);
        if (*cmd_fit) return run_pca_fit(pca);
        if (*cmd_apply) return run_pca_apply(pca);
    } catch (const UsageError& e) {
        std::cerr << "lbki: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "lbki: error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
