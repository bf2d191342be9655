#include "latent_bki/observation.hpp"

#include "latent_bki/error.hpp"

#include <cmath>

namespace latent_bki {

ObservationFrame::ObservationFrame(int feature_dim, bool has_range, bool has_label)
    : feature_dim_(feature_dim), has_range_(has_range), has_label_(has_label) {
    if (feature_dim < 1) {
        throw InvalidInput("feature dimension must be at least 1");
    }
}

void ObservationFrame::reserve(std::size_t n) {
    positions_.reserve(n);
    features_.reserve(n * static_cast<std::size_t>(feature_dim_));
    if (has_range_) ranges_.reserve(n);
    if (has_label_) labels_.reserve(n);
}

void ObservationFrame::push_back(const Observation& obs) {
    push_back(obs.position, std::span<const float>(obs.feature.data(), obs.feature.size()),
              obs.range, obs.label);
}

void ObservationFrame::push_back(const Eigen::Vector3d& position, std::span<const float> feature,
                                 std::optional<float> range, std::optional<std::uint32_t> label) {
    if (static_cast<int>(feature.size()) != feature_dim_) {
        throw InvalidInput("feature dimension " + std::to_string(feature.size()) +
                           " does not match frame dimension " + std::to_string(feature_dim_));
    }
    if (range.has_value() != has_range_ || label.has_value() != has_label_) {
        throw InvalidInput("observation optional fields do not match the frame layout");
    }
    positions_.push_back(position);
    features_.insert(features_.end(), feature.begin(), feature.end());
    if (range) ranges_.push_back(*range);
    if (label) labels_.push_back(*label);
}

Observation ObservationFrame::at(std::size_t n) const {
    Observation obs;
    obs.position = positions_.at(n);
    obs.feature = feature(n);
    if (has_range_) obs.range = ranges_[n];
    if (has_label_) obs.label = labels_[n];
    return obs;
}

ObservationFrame ObservationFrame::subset(std::span<const std::size_t> indices) const {
    ObservationFrame out(feature_dim_, has_range_, has_label_);
    out.reserve(indices.size());
    for (const std::size_t n : indices) {
        const float* f = features_.data() + n * static_cast<std::size_t>(feature_dim_);
        out.push_back(positions_.at(n), std::span<const float>(f, feature_dim_),
                      has_range_ ? std::optional<float>(ranges_[n]) : std::nullopt,
                      has_label_ ? std::optional<std::uint32_t>(labels_[n]) : std::nullopt);
    }
    return out;
}

}  // namespace latent_bki
