#include "latent_bki/kernel.hpp"

#include "latent_bki/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace latent_bki {

void KernelConfig::validate() const {
    if (!(length > 0.0) || !std::isfinite(length)) {
        throw InvalidInput("kernel length must be positive and finite");
    }
}

double sparse_kernel(double distance, const KernelConfig& cfg) {
    if (!(distance >= 0.0)) {
        throw InvalidInput("kernel distance must be non-negative");
    }
    if (distance >= cfg.length) {
        return 0.0;
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double ratio = distance / cfg.length;
    const double weight =
        (2.0 + std::cos(two_pi * ratio) * (1.0 - ratio) + std::sin(two_pi * ratio) / two_pi) / 3.0;
    // Rounding can push the value a hair outside [0, 1] near either end of the support.
    return std::clamp(weight, 0.0, 1.0);
}

double point_voxel_weight(const Eigen::Vector3d& p, const VoxelIndex& v, const GridConfig& grid,
                          const KernelConfig& cfg) {
    return sparse_kernel((p - index_to_centroid(v, grid)).norm(), cfg);
}

}  // namespace latent_bki
