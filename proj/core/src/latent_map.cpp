#include "latent_bki/latent_map.hpp"

#include "latent_bki/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

namespace latent_bki {

namespace {

struct Contribution {
    std::uint32_t bucket;
    std::uint32_t point;
    double weight;
};

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
    if (workers <= 1) {
        for (std::size_t n = 0; n < count; ++n) fn(n);
        return;
    }
    const std::size_t chunk = (count + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t n = begin; n < end; ++n) fn(n);
        });
    }
}

}  // namespace

void PriorConfig::validate() const {
    if (!(lam0 >= 0.0) || !std::isfinite(lam0)) {
        throw InvalidInput("prior confidence must be finite and non-negative");
    }
    if (!(psi0 >= 0.0) || !std::isfinite(psi0)) {
        throw InvalidInput("prior scale must be finite and non-negative");
    }
}

template <typename Real>
BasicLatentMap<Real>::BasicLatentMap(const GridConfig& grid, const KernelConfig& kernel,
                                     int latent_dim, PriorConfig prior)
    : grid_(grid), kernel_(kernel), latent_dim_(latent_dim), prior_(prior) {
    grid_.validate();
    kernel_.validate();
    prior_.validate();
    if (latent_dim < 1) {
        throw InvalidInput("latent dimension must be at least 1");
    }
}

template <typename Real>
VoxelState BasicLatentMap<Real>::prior_state() const {
    return {Eigen::VectorXd::Zero(latent_dim_), Eigen::VectorXd::Constant(latent_dim_, prior_.psi0),
            prior_.lam0};
}

template <typename Real>
bool BasicLatentMap<Real>::contains(const VoxelIndex& v) const {
    return slots_.contains(pack_index(v));
}

template <typename Real>
std::span<const Real> BasicLatentMap<Real>::raw(const VoxelIndex& v) const {
    const auto it = slots_.find(pack_index(v));
    if (it == slots_.end()) {
        return {};
    }
    return {storage_.data() + it->second * stride(), stride()};
}

template <typename Real>
VoxelState BasicLatentMap<Real>::voxel(const VoxelIndex& v) const {
    const auto data = raw(v);
    if (data.empty()) {
        return prior_state();
    }
    const std::size_t c = static_cast<std::size_t>(latent_dim_);
    VoxelState s;
    s.lam = static_cast<double>(data[0]);
    s.mu = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(data.data() + 1, latent_dim_)
               .template cast<double>();
    s.psi_diag =
        Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(data.data() + 1 + c, latent_dim_)
            .template cast<double>();
    return s;
}

template <typename Real>
std::vector<VoxelIndex> BasicLatentMap<Real>::indices() const {
    std::vector<std::int64_t> keys;
    keys.reserve(slots_.size());
    for (const auto& [key, slot] : slots_) keys.push_back(key);
    std::sort(keys.begin(), keys.end());
    std::vector<VoxelIndex> out;
    out.reserve(keys.size());
    for (const std::int64_t key : keys) out.push_back(unpack_index(key));
    return out;
}

template <typename Real>
std::uint32_t BasicLatentMap<Real>::slot_for(std::int64_t key) {
    const auto [it, inserted] = slots_.try_emplace(key, static_cast<std::uint32_t>(slots_.size()));
    if (inserted) {
        storage_.resize(storage_.size() + stride());
        Real* data = storage_.data() + it->second * stride();
        data[0] = static_cast<Real>(prior_.lam0);
        std::fill_n(data + 1, latent_dim_, Real{0});
        std::fill_n(data + 1 + latent_dim_, latent_dim_, static_cast<Real>(prior_.psi0));
    }
    return it->second;
}

template <typename Real>
void BasicLatentMap<Real>::set_voxel(const VoxelIndex& v, const VoxelState& state) {
    if (state.mu.size() != latent_dim_ || state.psi_diag.size() != latent_dim_) {
        throw InvalidInput("voxel state dimension does not match the map");
    }
    if (!(state.lam >= 0.0) || !std::isfinite(state.lam) || !state.mu.allFinite() ||
        !state.psi_diag.allFinite() || (state.psi_diag.array() < 0.0).any()) {
        throw InvalidInput("voxel state must be finite with non-negative lambda and psi");
    }
    const std::uint32_t slot = slot_for(pack_index(v));
    Real* data = storage_.data() + slot * stride();
    data[0] = static_cast<Real>(state.lam);
    for (int c = 0; c < latent_dim_; ++c) {
        data[1 + c] = static_cast<Real>(state.mu[c]);
        data[1 + latent_dim_ + c] = static_cast<Real>(state.psi_diag[c]);
    }
}

template <typename Real>
void BasicLatentMap<Real>::validate_frame(const ObservationFrame& frame) const {
    if (frame.feature_dim() != latent_dim_) {
        throw InvalidInput("frame feature dimension " + std::to_string(frame.feature_dim()) +
                           " does not match map latent dimension " +
                           std::to_string(latent_dim_));
    }
    const auto& features = frame.features();
    if (!std::all_of(features.begin(), features.end(), [](float x) { return std::isfinite(x); })) {
        throw InvalidInput("frame contains a non-finite feature");
    }
    for (const auto& p : frame.positions()) {
        if (!p.allFinite()) {
            throw InvalidInput("frame contains a non-finite position");
        }
    }
}

template <typename Real>
void BasicLatentMap<Real>::update(const ObservationFrame& frame) {
    if (frame.empty()) {
        return;
    }
    validate_frame(frame);
    const std::size_t c = static_cast<std::size_t>(latent_dim_);

    // Bucket every (point, voxel) pair with non-negligible kernel weight. Buckets are
    // numbered in first-touch order, which keeps the merge order deterministic.
    std::unordered_map<std::int64_t, std::uint32_t> bucket_of;
    std::vector<std::int64_t> bucket_keys;
    std::vector<Contribution> contributions;
    contributions.reserve(frame.size() * static_cast<std::size_t>(grid_.filter_size) *
                          grid_.filter_size * grid_.filter_size);
    for (std::size_t n = 0; n < frame.size(); ++n) {
        const Eigen::Vector3d& p = frame.position(n);
        for_each_neighbor(world_to_index(p, grid_), grid_.filter_size, [&](const VoxelIndex& u) {
            const double w = point_voxel_weight(p, u, grid_, kernel_);
            if (w < kMinKernelWeight) {
                return;
            }
            const std::int64_t key = pack_index(u);
            const auto [it, inserted] =
                bucket_of.try_emplace(key, static_cast<std::uint32_t>(bucket_keys.size()));
            if (inserted) bucket_keys.push_back(key);
            contributions.push_back({it->second, static_cast<std::uint32_t>(n), w});
        });
    }
    if (bucket_keys.empty()) {
        return;
    }

    // Stable counting sort by bucket keeps the points of each bucket in input order.
    const std::size_t buckets = bucket_keys.size();
    std::vector<std::size_t> offsets(buckets + 1, 0);
    for (const auto& ct : contributions) ++offsets[ct.bucket + 1];
    for (std::size_t b = 0; b < buckets; ++b) offsets[b + 1] += offsets[b];
    std::vector<Contribution> sorted(contributions.size());
    {
        std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
        for (const auto& ct : contributions) sorted[cursor[ct.bucket]++] = ct;
    }
    contributions.clear();
    contributions.shrink_to_fit();

    std::vector<std::uint32_t> slot(buckets);
    for (std::size_t b = 0; b < buckets; ++b) slot[b] = slot_for(bucket_keys[b]);

    const float* features = frame.features().data();
    parallel_for(buckets, threads_, [&](std::size_t b) {
        const auto begin = sorted.begin() + static_cast<std::ptrdiff_t>(offsets[b]);
        const auto end = sorted.begin() + static_cast<std::ptrdiff_t>(offsets[b + 1]);

        double mass = 0.0;
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(latent_dim_);
        for (auto it = begin; it != end; ++it) {
            mass += it->weight;
            mean += it->weight *
                    Eigen::Map<const Eigen::VectorXf>(features + it->point * c, latent_dim_)
                        .cast<double>();
        }
        mean /= mass;
        Eigen::VectorXd scatter = Eigen::VectorXd::Zero(latent_dim_);
        for (auto it = begin; it != end; ++it) {
            const Eigen::VectorXd dev =
                Eigen::Map<const Eigen::VectorXf>(features + it->point * c, latent_dim_)
                    .cast<double>() -
                mean;
            scatter += it->weight * dev.cwiseAbs2();
        }

        Real* data = storage_.data() + slot[b] * stride();
        const double lam_prev = static_cast<double>(data[0]);
        const double lam_next = lam_prev + mass;
        const double cross = lam_prev * mass / lam_next;
        for (std::size_t d = 0; d < c; ++d) {
            const double mu_prev = static_cast<double>(data[1 + d]);
            const double diff = mean[static_cast<Eigen::Index>(d)] - mu_prev;
            data[1 + d] = static_cast<Real>((lam_prev * mu_prev + mass * mean[d]) / lam_next);
            data[1 + c + d] = static_cast<Real>(static_cast<double>(data[1 + c + d]) +
                                                scatter[d] + cross * diff * diff);
        }
        data[0] = static_cast<Real>(lam_next);
    });
}

template class BasicLatentMap<float>;
template class BasicLatentMap<double>;

}  // namespace latent_bki
