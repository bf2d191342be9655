#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace latent_bki {

struct Observation {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();  // world frame, meters
    Eigen::VectorXf feature;
    std::optional<float> range;
    std::optional<std::uint32_t> label;
};

// One sensor batch, stored structure-of-arrays. Ranges and labels are either present for
// every point or for none.
class ObservationFrame {
public:
    ObservationFrame() = default;
    explicit ObservationFrame(int feature_dim, bool has_range = false, bool has_label = false);

    int feature_dim() const { return feature_dim_; }
    std::size_t size() const { return positions_.size(); }
    bool empty() const { return positions_.empty(); }
    bool has_range() const { return has_range_; }
    bool has_label() const { return has_label_; }

    void reserve(std::size_t n);
    void push_back(const Observation& obs);
    void push_back(const Eigen::Vector3d& position, std::span<const float> feature,
                   std::optional<float> range = std::nullopt,
                   std::optional<std::uint32_t> label = std::nullopt);

    const Eigen::Vector3d& position(std::size_t n) const { return positions_[n]; }
    Eigen::Map<const Eigen::VectorXf> feature(std::size_t n) const {
        return {features_.data() + n * static_cast<std::size_t>(feature_dim_), feature_dim_};
    }
    Eigen::Map<Eigen::VectorXf> feature(std::size_t n) {
        return {features_.data() + n * static_cast<std::size_t>(feature_dim_), feature_dim_};
    }
    float range(std::size_t n) const { return ranges_[n]; }
    std::uint32_t label(std::size_t n) const { return labels_[n]; }
    Observation at(std::size_t n) const;

    const std::vector<Eigen::Vector3d>& positions() const { return positions_; }
    const std::vector<float>& features() const { return features_; }
    const std::vector<float>& ranges() const { return ranges_; }
    const std::vector<std::uint32_t>& labels() const { return labels_; }

    // Copies of the selected points, preserving order.
    ObservationFrame subset(std::span<const std::size_t> indices) const;

private:
    int feature_dim_ = 0;
    bool has_range_ = false;
    bool has_label_ = false;
    std::vector<Eigen::Vector3d> positions_;
    std::vector<float> features_;
    std::vector<float> ranges_;
    std::vector<std::uint32_t> labels_;
};

}  // namespace latent_bki
