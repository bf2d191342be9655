#pragma once

#include "latent_bki/voxel_grid.hpp"

#include <Eigen/Core>

namespace latent_bki {

struct KernelConfig {
    double length = 0.5;  // support radius in meters

    void validate() const;
};

// Weights below this are treated as no influence at all.
inline constexpr double kMinKernelWeight = 1e-9;

/// Compactly supported sparse kernel:
///   k(d) = (2 + cos(2 pi d / l)(1 - d / l) + sin(2 pi d / l) / (2 pi)) / 3   for d < l
///   k(d) = 0                                                                 otherwise
/// k(0) = 1, k is non-increasing on [0, l] and reaches 0 smoothly at d = l.
double sparse_kernel(double distance, const KernelConfig& cfg);

double point_voxel_weight(const Eigen::Vector3d& p, const VoxelIndex& v, const GridConfig& grid,
                          const KernelConfig& cfg);

}  // namespace latent_bki
