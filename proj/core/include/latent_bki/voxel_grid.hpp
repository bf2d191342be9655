#pragma once

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <functional>
#include <vector>

namespace latent_bki {

struct VoxelIndex {
    std::int32_t i = 0;
    std::int32_t j = 0;
    std::int32_t k = 0;

    friend auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

struct GridConfig {
    double resolution = 0.1;  // meters per voxel edge
    int filter_size = 3;      // odd neighborhood width, in voxels per axis

    // Throws InvalidInput unless resolution > 0 and filter_size is odd and positive.
    void validate() const;
};

// Each axis is stored as a 21-bit two's complement field.
inline constexpr std::int32_t kMaxAxisIndex = (1 << 20) - 1;
inline constexpr std::int32_t kMinAxisIndex = -(1 << 20);

// Packs (i, j, k) into one 64-bit key; throws InvalidInput if an axis is out of range.
std::int64_t pack_index(const VoxelIndex& v);
VoxelIndex unpack_index(std::int64_t key);

// Cell containing p, with floor semantics (a boundary belongs to the upper cell).
VoxelIndex world_to_index(const Eigen::Vector3d& p, const GridConfig& cfg);

Eigen::Vector3d index_to_centroid(const VoxelIndex& v, const GridConfig& cfg);

// The filter_size^3 cube centered on v in lexicographic (i, j, k) order.
std::vector<VoxelIndex> neighbors(const VoxelIndex& v, const GridConfig& cfg);

template <typename Fn>
void for_each_neighbor(const VoxelIndex& v, int filter_size, Fn&& fn) {
    const int half = filter_size / 2;
    for (int di = -half; di <= half; ++di) {
        for (int dj = -half; dj <= half; ++dj) {
            for (int dk = -half; dk <= half; ++dk) {
                fn(VoxelIndex{v.i + di, v.j + dj, v.k + dk});
            }
        }
    }
}

struct VoxelIndexHash {
    std::size_t operator()(const VoxelIndex& v) const noexcept {
        return static_cast<std::size_t>(v.i) * 73856093u ^
               static_cast<std::size_t>(v.j) * 19349663u ^
               static_cast<std::size_t>(v.k) * 83492791u;
    }
};

}  // namespace latent_bki
