#pragma once

#include "latent_bki/kernel.hpp"
#include "latent_bki/observation.hpp"
#include "latent_bki/voxel_grid.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace latent_bki {

struct PriorConfig {
    double lam0 = 1e-3;  // prior confidence, shared by the mean and the covariance
    double psi0 = 1e-6;  // prior diagonal of the expected covariance

    void validate() const;
};

struct MapConfig {
    GridConfig grid;
    KernelConfig kernel;
    int latent_dim = 64;
    PriorConfig prior;
};

/// Normal-inverse-Wishart belief of one voxel with a diagonal scale matrix.
struct VoxelState {
    Eigen::VectorXd mu;
    Eigen::VectorXd psi_diag;
    double lam = 0.0;
};

/// Sparse voxel map of normal-inverse-Wishart beliefs over a C-dimensional latent space.
///
/// Every frame is folded in with one conjugate merge per touched voxel. For voxel * the
/// frame contributes kernel mass k = sum_i w_i, weighted mean y = sum_i w_i y_i / k and
/// weighted scatter S = sum_i w_i (y_i - y)^2, after which
///
///   lam'  = lam + k
///   mu'   = (lam mu + k y) / lam'
///   psi'  = psi + S + (lam k / lam') (y - mu)^2
///
/// which is the exact pooled-scatter combination, so the result does not depend on how a
/// point set is split into frames. Statistics accumulate in double precision; `Real` is
/// the storage type (float keeps a voxel at (2C + 1) * 4 bytes).
///
/// Voxels that were never touched are not stored and read as the prior
/// (mu = 0, psi = psi0, lam = lam0).
template <typename Real>
class BasicLatentMap {
public:
    using Scalar = Real;

    BasicLatentMap(const GridConfig& grid, const KernelConfig& kernel, int latent_dim,
                   PriorConfig prior = {});
    explicit BasicLatentMap(const MapConfig& cfg)
        : BasicLatentMap(cfg.grid, cfg.kernel, cfg.latent_dim, cfg.prior) {}

    const GridConfig& grid() const { return grid_; }
    const KernelConfig& kernel() const { return kernel_; }
    const PriorConfig& prior() const { return prior_; }
    int latent_dim() const { return latent_dim_; }
    MapConfig config() const { return {grid_, kernel_, latent_dim_, prior_}; }

    // Worker threads for per-voxel accumulation; results do not depend on the count.
    void set_threads(int threads) { threads_ = threads < 1 ? 1 : threads; }

    /// Folds one frame into the map. Throws InvalidInput on a dimension mismatch or a
    /// non-finite feature; the map is left untouched in that case.
    void update(const ObservationFrame& frame);

    VoxelState voxel(const VoxelIndex& v) const;
    VoxelState prior_state() const;
    bool contains(const VoxelIndex& v) const;
    std::size_t size() const { return slots_.size(); }
    bool empty() const { return slots_.empty(); }

    // Allocated voxels ordered by packed key.
    std::vector<VoxelIndex> indices() const;

    // Overwrites (or allocates) one voxel. Used when loading persisted maps.
    void set_voxel(const VoxelIndex& v, const VoxelState& state);

    // Raw stored payload of an allocated voxel: lam, mu[C], psi[C].
    std::span<const Real> raw(const VoxelIndex& v) const;

    // Bytes reserved for voxel payloads (vector capacity) and an estimate of the hash
    // index: one bucket pointer per bucket plus one node per voxel.
    std::size_t storage_bytes() const { return storage_.capacity() * sizeof(Real); }
    std::size_t index_bytes() const {
        return slots_.bucket_count() * sizeof(void*) +
               slots_.size() * (sizeof(void*) + sizeof(std::pair<const std::int64_t, std::uint32_t>));
    }

    static constexpr std::size_t payload_bytes(int latent_dim) {
        return (2 * static_cast<std::size_t>(latent_dim) + 1) * sizeof(Real);
    }

private:
    std::size_t stride() const { return 2 * static_cast<std::size_t>(latent_dim_) + 1; }
    std::uint32_t slot_for(std::int64_t key);
    void validate_frame(const ObservationFrame& frame) const;

    GridConfig grid_;
    KernelConfig kernel_;
    int latent_dim_;
    PriorConfig prior_;
    int threads_ = 1;
    std::unordered_map<std::int64_t, std::uint32_t> slots_;
    std::vector<Real> storage_;
};

using LatentMap = BasicLatentMap<float>;
using LatentMapF64 = BasicLatentMap<double>;

extern template class BasicLatentMap<float>;
extern template class BasicLatentMap<double>;

}  // namespace latent_bki
