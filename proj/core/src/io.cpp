#include "latent_bki/io.hpp"

#include "latent_bki/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>

namespace latent_bki::io {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    } else {
        return value;
    }
}

class ByteWriter {
public:
    explicit ByteWriter(std::size_t reserve = 0) { buffer_.reserve(reserve); }

    template <typename T>
    void put(T value) {
        const T le = to_little(value);
        char raw[sizeof(T)];
        std::memcpy(raw, &le, sizeof(T));
        buffer_.append(raw, sizeof(T));
    }
    void put_f32(double value) { put(static_cast<float>(value)); }
    void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
    void put_magic(const char (&magic)[5]) {
        buffer_.append(magic, 4);
        put(kFormatVersion);
    }
    std::string take() { return std::move(buffer_); }

private:
    std::string buffer_;
};

class ByteReader {
public:
    ByteReader(std::string_view bytes, const char* what) : bytes_(bytes), what_(what) {}

    template <typename T>
    T get() {
        require(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(value);
    }
    float get_finite_f32() {
        const float value = get<float>();
        if (!std::isfinite(value)) fail("non-finite value");
        return value;
    }
    std::string_view get_bytes(std::size_t n) {
        require(n);
        const std::string_view out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    void expect_magic(const char (&magic)[5]) {
        if (get_bytes(4) != std::string_view(magic, 4)) fail("bad magic");
        const auto version = get<std::uint16_t>();
        if (version != kFormatVersion) fail("unsupported version " + std::to_string(version));
    }
    // Total bytes the remaining fixed-size payload needs; catches truncation early.
    void expect_remaining(std::size_t n) const {
        if (bytes_.size() - pos_ != n) {
            fail(bytes_.size() - pos_ < n ? "truncated payload" : "trailing bytes after payload");
        }
    }
    void expect_end() const {
        if (pos_ != bytes_.size()) fail("trailing bytes after payload");
    }
    [[noreturn]] void fail(const std::string& why) const {
        throw DataError(std::string(what_) + ": " + why);
    }

private:
    void require(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated payload");
    }

    std::string_view bytes_;
    const char* what_;
    std::size_t pos_ = 0;
};

constexpr std::uint8_t kHasRange = 1;
constexpr std::uint8_t kHasLabel = 2;

}  // namespace

std::string encode_frame(const ObservationFrame& frame) {
    const int dim = frame.empty() && frame.feature_dim() < 1 ? 1 : frame.feature_dim();
    if (frame.size() > UINT32_MAX || dim > UINT16_MAX) {
        throw InvalidInput("frame too large for the frame file format");
    }
    ByteWriter w(16 + frame.size() * (16 + 4 * static_cast<std::size_t>(dim)));
    w.put_magic("LBKF");
    w.put(static_cast<std::uint32_t>(frame.size()));
    w.put(static_cast<std::uint16_t>(dim));
    w.put(static_cast<std::uint8_t>((frame.has_range() ? kHasRange : 0) |
                                    (frame.has_label() ? kHasLabel : 0)));
    for (std::size_t n = 0; n < frame.size(); ++n) {
        const Eigen::Vector3d& p = frame.position(n);
        w.put_f32(p.x());
        w.put_f32(p.y());
        w.put_f32(p.z());
        for (const float x : frame.feature(n)) w.put(x);
        if (frame.has_range()) w.put(frame.range(n));
        if (frame.has_label()) w.put(frame.label(n));
    }
    return w.take();
}

ObservationFrame decode_frame(std::string_view bytes) {
    ByteReader r(bytes, "frame file");
    r.expect_magic("LBKF");
    const auto count = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint16_t>();
    const auto flags = r.get<std::uint8_t>();
    if (dim == 0) r.fail("feature dimension is zero");
    if ((flags & ~(kHasRange | kHasLabel)) != 0) r.fail("unknown flag bits");
    const bool has_range = (flags & kHasRange) != 0;
    const bool has_label = (flags & kHasLabel) != 0;
    const std::size_t record = 4 * (3 + static_cast<std::size_t>(dim) + (has_range ? 1 : 0) +
                                    (has_label ? 1 : 0));
    r.expect_remaining(record * count);

    ObservationFrame frame(dim, has_range, has_label);
    frame.reserve(count);
    std::vector<float> feature(dim);
    for (std::uint32_t n = 0; n < count; ++n) {
        Eigen::Vector3d p;
        for (int a = 0; a < 3; ++a) p[a] = r.get_finite_f32();
        for (auto& x : feature) x = r.get_finite_f32();
        std::optional<float> range;
        std::optional<std::uint32_t> label;
        if (has_range) range = r.get_finite_f32();
        if (has_label) label = r.get<std::uint32_t>();
        frame.push_back(p, feature, range, label);
    }
    r.expect_end();
    return frame;
}

std::string encode_map(const LatentMap& map) {
    const int dim = map.latent_dim();
    if (dim > UINT16_MAX || map.grid().filter_size > UINT8_MAX) {
        throw InvalidInput("map configuration does not fit the map file format");
    }
    const std::size_t stride = 2 * static_cast<std::size_t>(dim) + 1;
    ByteWriter w(40 + map.size() * (8 + 4 * stride));
    w.put_magic("LBKM");
    w.put_f32(map.grid().resolution);
    w.put_f32(map.kernel().length);
    w.put(static_cast<std::uint8_t>(map.grid().filter_size));
    w.put(static_cast<std::uint16_t>(dim));
    w.put_f32(map.prior().lam0);
    w.put_f32(map.prior().psi0);
    w.put(static_cast<std::uint64_t>(map.size()));
    for (const VoxelIndex& v : map.indices()) {
        w.put(pack_index(v));
        for (const float x : map.raw(v)) w.put(x);
    }
    return w.take();
}

LatentMap decode_map(std::string_view bytes) {
    ByteReader r(bytes, "map file");
    r.expect_magic("LBKM");
    MapConfig cfg;
    cfg.grid.resolution = r.get_finite_f32();
    cfg.kernel.length = r.get_finite_f32();
    cfg.grid.filter_size = r.get<std::uint8_t>();
    cfg.latent_dim = r.get<std::uint16_t>();
    cfg.prior.lam0 = r.get_finite_f32();
    cfg.prior.psi0 = r.get_finite_f32();
    const auto count = r.get<std::uint64_t>();

    std::optional<LatentMap> map;
    try {
        map.emplace(cfg);
    } catch (const InvalidInput& e) {
        r.fail(std::string("invalid header: ") + e.what());
    }
    const std::size_t dim = static_cast<std::size_t>(cfg.latent_dim);
    const std::size_t record = 8 + 4 * (2 * dim + 1);
    if (count > (bytes.size() / record) + 1) r.fail("truncated payload");
    r.expect_remaining(record * count);

    VoxelState s{Eigen::VectorXd(cfg.latent_dim), Eigen::VectorXd(cfg.latent_dim), 0.0};
    std::int64_t previous_key = 0;
    for (std::uint64_t n = 0; n < count; ++n) {
        const auto key = r.get<std::int64_t>();
        if (n > 0 && key <= previous_key) r.fail("voxel keys are not strictly ascending");
        previous_key = key;
        s.lam = r.get_finite_f32();
        for (std::size_t d = 0; d < dim; ++d) s.mu[static_cast<Eigen::Index>(d)] = r.get_finite_f32();
        for (std::size_t d = 0; d < dim; ++d) {
            s.psi_diag[static_cast<Eigen::Index>(d)] = r.get_finite_f32();
        }
        try {
            map->set_voxel(unpack_index(key), s);
        } catch (const InvalidInput& e) {
            r.fail(std::string("invalid voxel record: ") + e.what());
        }
    }
    r.expect_end();
    return std::move(*map);
}

std::string encode_dictionary(const QueryDictionary& dict) {
    if (dict.size() > UINT32_MAX || dict.dim() > UINT16_MAX) {
        throw InvalidInput("dictionary too large for the dictionary file format");
    }
    ByteWriter w;
    w.put_magic("LBKD");
    w.put(static_cast<std::uint32_t>(dict.size()));
    w.put(static_cast<std::uint16_t>(dict.dim()));
    for (std::size_t n = 0; n < dict.size(); ++n) {
        const std::string& phrase = dict.phrase(n);
        w.put(static_cast<std::uint32_t>(phrase.size()));
        w.put_bytes(phrase);
        for (const double x : dict.embedding(n)) w.put_f32(x);
    }
    return w.take();
}

QueryDictionary decode_dictionary(std::string_view bytes) {
    ByteReader r(bytes, "dictionary file");
    r.expect_magic("LBKD");
    const auto count = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint16_t>();
    if (dim == 0) r.fail("embedding dimension is zero");
    QueryDictionary dict;
    Eigen::VectorXd embedding(dim);
    for (std::uint32_t n = 0; n < count; ++n) {
        const auto length = r.get<std::uint32_t>();
        std::string phrase(r.get_bytes(length));
        for (auto& x : embedding) x = r.get_finite_f32();
        try {
            dict.add(std::move(phrase), embedding);
        } catch (const InvalidInput& e) {
            r.fail(e.what());
        }
    }
    r.expect_end();
    return dict;
}

std::string encode_pca(const PcaTransform& t) {
    ByteWriter w;
    w.put_magic("LBKP");
    w.put(static_cast<std::uint32_t>(t.full_dim()));
    w.put(static_cast<std::uint32_t>(t.reduced_dim()));
    for (const double x : t.mean()) w.put_f32(x);
    for (Eigen::Index c = 0; c < t.basis().cols(); ++c) {
        for (Eigen::Index row = 0; row < t.basis().rows(); ++row) w.put_f32(t.basis()(row, c));
    }
    return w.take();
}

PcaTransform decode_pca(std::string_view bytes) {
    ByteReader r(bytes, "PCA file");
    r.expect_magic("LBKP");
    const auto full = r.get<std::uint32_t>();
    const auto reduced = r.get<std::uint32_t>();
    if (full == 0 || reduced == 0 || reduced > full || full > 65536) {
        r.fail("invalid dimensions");
    }
    r.expect_remaining(4 * (static_cast<std::size_t>(full) + static_cast<std::size_t>(full) * reduced));
    Eigen::VectorXd mean(full);
    for (auto& x : mean) x = r.get_finite_f32();
    Eigen::MatrixXd basis(full, reduced);
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
        for (Eigen::Index row = 0; row < basis.rows(); ++row) basis(row, c) = r.get_finite_f32();
    }
    r.expect_end();
    try {
        return PcaTransform(std::move(mean), std::move(basis));
    } catch (const InvalidInput& e) {
        r.fail(e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw DataError("error reading " + path.string());
    return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError("error writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw DataError("cannot move output into place at " + path.string());
    }
}

namespace {

template <typename Fn>
auto with_path(const std::filesystem::path& path, Fn&& fn) {
    try {
        return fn(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace

ObservationFrame read_frame(const std::filesystem::path& path) {
    return with_path(path, [](const std::string& b) { return decode_frame(b); });
}
void write_frame(const std::filesystem::path& path, const ObservationFrame& frame) {
    write_file_atomic(path, encode_frame(frame));
}
LatentMap read_map(const std::filesystem::path& path) {
    return with_path(path, [](const std::string& b) { return decode_map(b); });
}
void write_map(const std::filesystem::path& path, const LatentMap& map) {
    write_file_atomic(path, encode_map(map));
}
QueryDictionary read_dictionary(const std::filesystem::path& path) {
    return with_path(path, [](const std::string& b) { return decode_dictionary(b); });
}
void write_dictionary(const std::filesystem::path& path, const QueryDictionary& dict) {
    write_file_atomic(path, encode_dictionary(dict));
}
PcaTransform read_pca(const std::filesystem::path& path) {
    return with_path(path, [](const std::string& b) { return decode_pca(b); });
}
void write_pca(const std::filesystem::path& path, const PcaTransform& t) {
    write_file_atomic(path, encode_pca(t));
}

std::vector<std::filesystem::path> collect_frame_files(
    const std::vector<std::filesystem::path>& inputs) {
    std::vector<std::filesystem::path> files;
    for (const auto& input : inputs) {
        if (std::filesystem::is_directory(input)) {
            for (const auto& entry : std::filesystem::directory_iterator(input)) {
                if (entry.is_regular_file()) files.push_back(entry.path());
            }
        } else if (std::filesystem::is_regular_file(input)) {
            files.push_back(input);
        } else {
            throw DataError("no such frame file or directory: " + input.string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string_view::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return std::string(s.substr(begin, end - begin + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    in.imbue(std::locale::classic());
    T value{};
    in >> value;
    if (in.fail() || !(in >> std::ws).eof()) {
        throw InvalidInput("config key '" + key + "': cannot parse '" + text + "'");
    }
    return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::string normalized = text;
    std::replace(normalized.begin(), normalized.end(), ',', ' ');
    std::istringstream in(normalized);
    std::vector<T> out;
    std::string token;
    while (in >> token) out.push_back(parse_number<T>(key, token));
    if (out.empty()) throw InvalidInput("config key '" + key + "' has an empty list");
    return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw InvalidInput("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(std::string_view(stripped).substr(0, eq));
        const std::string value = trim(std::string_view(stripped).substr(eq + 1));
        if (key.empty()) {
            throw InvalidInput("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!cfg.values_.emplace(key, value).second) {
            throw InvalidInput("config key '" + key + "' appears twice");
        }
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    return parse(read_file(path));
}

std::optional<std::string> KeyValueConfig::take(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    std::string value = std::move(it->second);
    values_.erase(it);
    return value;
}

double KeyValueConfig::take_double(const std::string& key, double fallback) {
    const auto v = take(key);
    return v ? parse_number<double>(key, *v) : fallback;
}

long long KeyValueConfig::take_int(const std::string& key, long long fallback) {
    const auto v = take(key);
    return v ? parse_number<long long>(key, *v) : fallback;
}

std::vector<double> KeyValueConfig::take_doubles(const std::string& key,
                                                 std::vector<double> fallback) {
    const auto v = take(key);
    return v ? parse_list<double>(key, *v) : fallback;
}

std::vector<long long> KeyValueConfig::take_ints(const std::string& key,
                                                 std::vector<long long> fallback) {
    const auto v = take(key);
    return v ? parse_list<long long>(key, *v) : fallback;
}

void KeyValueConfig::finish() const {
    if (!values_.empty()) {
        throw InvalidInput("unknown config key '" + values_.begin()->first + "'");
    }
}

BuildConfig parse_build_config(KeyValueConfig cfg) {
    BuildConfig out;
    out.map.grid.resolution = cfg.take_double("resolution", out.map.grid.resolution);
    out.map.kernel.length = cfg.take_double("kernel_length", out.map.kernel.length);
    out.map.grid.filter_size =
        static_cast<int>(cfg.take_int("filter_size", out.map.grid.filter_size));
    out.map.latent_dim = static_cast<int>(cfg.take_int("latent_dim", out.map.latent_dim));
    out.map.prior.lam0 = cfg.take_double("prior_lambda", out.map.prior.lam0);
    out.map.prior.psi0 = cfg.take_double("prior_psi", out.map.prior.psi0);
    out.min_depth = cfg.take_double("min_depth", out.min_depth);
    out.max_depth = cfg.take_double("max_depth", out.max_depth);
    cfg.finish();

    out.map.grid.validate();
    out.map.kernel.validate();
    out.map.prior.validate();
    if (out.map.latent_dim < 1) throw InvalidInput("latent_dim must be at least 1");
    if (!(out.min_depth >= 0.0) || !(out.max_depth > out.min_depth)) {
        throw InvalidInput("depth bounds must satisfy 0 <= min_depth < max_depth");
    }
    return out;
}

ExperimentSpec parse_experiment_spec(KeyValueConfig cfg) {
    ExperimentSpec out;
    SceneSpec& s = out.scene;
    const auto extent = cfg.take_ints("extent", {s.extent[0], s.extent[1], s.extent[2]});
    if (extent.size() != 3) throw InvalidInput("extent needs three integers");
    for (int a = 0; a < 3; ++a) s.extent[a] = static_cast<int>(extent[a]);
    s.resolution = cfg.take_double("resolution", s.resolution);
    s.categories = static_cast<int>(cfg.take_int("categories", s.categories));
    s.feature_dim = static_cast<int>(cfg.take_int("feature_dim", s.feature_dim));
    s.frames = static_cast<int>(cfg.take_int("frames", s.frames));
    s.points_per_frame = static_cast<int>(cfg.take_int("points_per_frame", s.points_per_frame));
    s.sigma = cfg.take_double("sigma", s.sigma);
    s.sigma_max = cfg.take_double("sigma_max", s.sigma_max);
    s.noise_patch = static_cast<int>(cfg.take_int("noise_patch", s.noise_patch));
    s.max_anchor_cosine = cfg.take_double("max_anchor_cosine", s.max_anchor_cosine);
    s.seed = static_cast<std::uint64_t>(cfg.take_int("seed", static_cast<long long>(s.seed)));

    out.holdout_fraction = cfg.take_double("holdout_fraction", out.holdout_fraction);
    out.densities = cfg.take_doubles("densities", out.densities);
    std::vector<long long> default_sizes(out.filter_sizes.begin(), out.filter_sizes.end());
    const auto sizes = cfg.take_ints("filter_sizes", default_sizes);
    out.filter_sizes.assign(sizes.begin(), sizes.end());
    out.bins = static_cast<std::size_t>(cfg.take_int("bins", static_cast<long long>(out.bins)));
    out.samples =
        static_cast<std::size_t>(cfg.take_int("samples", static_cast<long long>(out.samples)));
    cfg.finish();

    s.validate();
    if (out.bins < 2) throw InvalidInput("bins must be at least 2");
    return out;
}

ObservationFrame filter_by_depth(const ObservationFrame& frame, double min_depth,
                                 double max_depth) {
    if (!frame.has_range()) return frame;
    std::vector<std::size_t> keep;
    keep.reserve(frame.size());
    for (std::size_t n = 0; n < frame.size(); ++n) {
        const double r = frame.range(n);
        if (r >= min_depth && r <= max_depth) keep.push_back(n);
    }
    return frame.subset(keep);
}

// ---------------------------------------------------------------------------

std::array<std::uint8_t, 3> category_color(std::size_t category) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 12> kPalette{{
        {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
        {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
        {210, 245, 60}, {250, 190, 212}, {0, 128, 128}, {170, 110, 40},
    }};
    if (category < kPalette.size()) return kPalette[category];
    // Knuth multiplicative hash spreads the remaining ids over RGB.
    const auto h = static_cast<std::uint32_t>(category * 2654435761u);
    return {static_cast<std::uint8_t>(h >> 24), static_cast<std::uint8_t>(h >> 16),
            static_cast<std::uint8_t>(h >> 8)};
}

std::array<std::uint8_t, 3> heat_color(double score) {
    const double s = std::clamp(score, -1.0, 1.0);
    const auto level = [](double t) {
        return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
    };
    if (s >= 0.0) return {255, level(1.0 - s), level(1.0 - s)};
    return {level(1.0 + s), level(1.0 + s), 255};
}

std::string to_ascii_ply(const std::vector<ColoredPoint>& points, bool with_score) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (with_score) out << "property float score\n";
    out << "end_header\n";
    out << std::setprecision(9);
    for (const auto& p : points) {
        if (!p.position.allFinite() || (with_score && !(p.score && std::isfinite(*p.score)))) {
            throw InvalidInput("refusing to export a non-finite point");
        }
        out << static_cast<float>(p.position.x()) << ' ' << static_cast<float>(p.position.y())
            << ' ' << static_cast<float>(p.position.z()) << ' ' << int{p.rgb[0]} << ' '
            << int{p.rgb[1]} << ' ' << int{p.rgb[2]};
        if (with_score) out << ' ' << static_cast<float>(*p.score);
        out << '\n';
    }
    return std::move(out).str();
}

}  // namespace latent_bki::io
