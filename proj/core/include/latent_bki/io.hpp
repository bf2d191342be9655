#pragma once

#include "latent_bki/compression.hpp"
#include "latent_bki/eval.hpp"
#include "latent_bki/inference.hpp"
#include "latent_bki/latent_map.hpp"
#include "latent_bki/observation.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace latent_bki::io {

// All binary formats are little-endian and start with a 4-byte magic and a u16 version.
//
// Frame (LBKF): u32 points, u16 feature dim, u8 flags (bit 0 range, bit 1 label);
//   per point: 3 x f32 position, dim x f32 feature, [f32 range], [u32 label].
// Map (LBKM): f32 resolution, f32 kernel length, u8 filter size, u16 latent dim,
//   f32 prior lambda, f32 prior psi, u64 voxels; per voxel (ascending key):
//   i64 packed index, f32 lambda, dim x f32 mu, dim x f32 psi diagonal.
// Dictionary (LBKD): u32 phrases, u16 dim; per phrase: u32 byte length, UTF-8 bytes,
//   dim x f32 embedding.
// PCA (LBKP): u32 full dim, u32 reduced dim, full x f32 mean, full*reduced x f32 basis
//   (column-major).
inline constexpr std::uint16_t kFormatVersion = 1;

std::string encode_frame(const ObservationFrame& frame);
ObservationFrame decode_frame(std::string_view bytes);
std::string encode_map(const LatentMap& map);
LatentMap decode_map(std::string_view bytes);
std::string encode_dictionary(const QueryDictionary& dict);
QueryDictionary decode_dictionary(std::string_view bytes);
std::string encode_pca(const PcaTransform& t);
PcaTransform decode_pca(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

ObservationFrame read_frame(const std::filesystem::path& path);
void write_frame(const std::filesystem::path& path, const ObservationFrame& frame);
LatentMap read_map(const std::filesystem::path& path);
void write_map(const std::filesystem::path& path, const LatentMap& map);
QueryDictionary read_dictionary(const std::filesystem::path& path);
void write_dictionary(const std::filesystem::path& path, const QueryDictionary& dict);
PcaTransform read_pca(const std::filesystem::path& path);
void write_pca(const std::filesystem::path& path, const PcaTransform& t);

// Files are taken as given, directories expand to their regular files; the result is
// sorted lexicographically by path.
std::vector<std::filesystem::path> collect_frame_files(
    const std::vector<std::filesystem::path>& inputs);

// ---------------------------------------------------------------------------
// Plain-text key/value configuration
// ---------------------------------------------------------------------------

/// `key = value` lines; `#` starts a comment. Every key must be consumed by a typed
/// getter before `finish()`, which throws InvalidInput naming any unknown key.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text);
    static KeyValueConfig load(const std::filesystem::path& path);

    std::optional<std::string> take(const std::string& key);
    double take_double(const std::string& key, double fallback);
    long long take_int(const std::string& key, long long fallback);
    std::vector<double> take_doubles(const std::string& key, std::vector<double> fallback);
    std::vector<long long> take_ints(const std::string& key, std::vector<long long> fallback);
    void finish() const;

private:
    std::map<std::string, std::string> values_;
};

struct BuildConfig {
    MapConfig map;
    double min_depth = 0.1;
    double max_depth = 6.0;
};

// Keys: resolution, kernel_length, filter_size, latent_dim, prior_lambda, prior_psi,
// min_depth, max_depth.
BuildConfig parse_build_config(KeyValueConfig cfg);

struct ExperimentSpec {
    SceneSpec scene;
    double holdout_fraction = 0.8;
    std::vector<double> densities{0.01, 0.1, 1.0};
    std::vector<int> filter_sizes{1, 3};
    std::size_t bins = 10;
    std::size_t samples = 100;
};

// Scene keys: extent (three integers), resolution, categories, feature_dim, frames,
// points_per_frame, sigma, sigma_max, noise_patch, max_anchor_cosine, seed. Experiment keys:
// holdout_fraction, densities, filter_sizes, bins, samples.
ExperimentSpec parse_experiment_spec(KeyValueConfig cfg);

// Drops points whose range lies outside [min_depth, max_depth]. Frames without ranges
// pass through unchanged.
ObservationFrame filter_by_depth(const ObservationFrame& frame, double min_depth,
                                 double max_depth);

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

struct ColoredPoint {
    Eigen::Vector3d position;
    std::array<std::uint8_t, 3> rgb{};
    std::optional<double> score;
};

std::array<std::uint8_t, 3> category_color(std::size_t category);
// Blue (-1) through white (0) to red (+1).
std::array<std::uint8_t, 3> heat_color(double score);

// ASCII PLY vertex list (x y z red green blue [score]).
std::string to_ascii_ply(const std::vector<ColoredPoint>& points, bool with_score);

}  // namespace latent_bki::io
