#include "latent_bki/voxel_grid.hpp"

#include "latent_bki/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace latent_bki {

namespace {

constexpr std::uint64_t kAxisMask = (std::uint64_t{1} << 21) - 1;

// Coordinates within a few ulps of a face snap onto it, so 0.3 / 0.1 lands in cell 3
// even though the quotient is 2.9999999999999996 in binary floating point.
std::int32_t checked_axis(double scaled, const char* name) {
    const double nearest = std::round(scaled);
    const double cell =
        std::abs(scaled - nearest) <= 1e-9 * std::max(1.0, std::abs(scaled)) ? nearest
                                                                              : std::floor(scaled);
    if (cell < kMinAxisIndex || cell > kMaxAxisIndex) {
        throw InvalidInput(std::string("coordinate outside the addressable grid along ") + name);
    }
    return static_cast<std::int32_t>(cell);
}

std::int32_t sign_extend(std::uint64_t field) {
    const std::uint64_t sign_bit = std::uint64_t{1} << 20;
    return static_cast<std::int32_t>(static_cast<std::int64_t>(field ^ sign_bit) -
                                     static_cast<std::int64_t>(sign_bit));
}

}  // namespace

void GridConfig::validate() const {
    if (!(resolution > 0.0) || !std::isfinite(resolution)) {
        throw InvalidInput("grid resolution must be positive and finite");
    }
    if (filter_size < 1 || filter_size % 2 == 0) {
        throw InvalidInput("filter size must be an odd positive integer");
    }
}

std::int64_t pack_index(const VoxelIndex& v) {
    for (const std::int32_t axis : {v.i, v.j, v.k}) {
        if (axis < kMinAxisIndex || axis > kMaxAxisIndex) {
            throw InvalidInput("voxel index exceeds the 21-bit packed range");
        }
    }
    const auto field = [](std::int32_t a) {
        return static_cast<std::uint64_t>(static_cast<std::int64_t>(a)) & kAxisMask;
    };
    return static_cast<std::int64_t>((field(v.i) << 42) | (field(v.j) << 21) | field(v.k));
}

VoxelIndex unpack_index(std::int64_t key) {
    const auto bits = static_cast<std::uint64_t>(key);
    return {sign_extend((bits >> 42) & kAxisMask), sign_extend((bits >> 21) & kAxisMask),
            sign_extend(bits & kAxisMask)};
}

VoxelIndex world_to_index(const Eigen::Vector3d& p, const GridConfig& cfg) {
    if (!p.allFinite()) {
        throw InvalidInput("non-finite point coordinate");
    }
    return {checked_axis(p.x() / cfg.resolution, "x"), checked_axis(p.y() / cfg.resolution, "y"),
            checked_axis(p.z() / cfg.resolution, "z")};
}

Eigen::Vector3d index_to_centroid(const VoxelIndex& v, const GridConfig& cfg) {
    return {(v.i + 0.5) * cfg.resolution, (v.j + 0.5) * cfg.resolution,
            (v.k + 0.5) * cfg.resolution};
}

std::vector<VoxelIndex> neighbors(const VoxelIndex& v, const GridConfig& cfg) {
    std::vector<VoxelIndex> out;
    out.reserve(static_cast<std::size_t>(cfg.filter_size) * cfg.filter_size * cfg.filter_size);
    for_each_neighbor(v, cfg.filter_size, [&](const VoxelIndex& u) { out.push_back(u); });
    return out;
}

}  // namespace latent_bki
