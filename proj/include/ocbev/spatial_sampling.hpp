#pragma once

// Pillar reference points over global and adaptive local height ranges, and
// their projection into every camera.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ocbev/autodiff.hpp"
#include "ocbev/geometry.hpp"
#include "ocbev/parameters.hpp"

namespace ocbev {

struct SamplingDefaults {
    static constexpr double kGlobalZMin = -5.0;
    static constexpr double kGlobalZMax = 3.0;
    static constexpr double kLocalZMin = -2.0;
    static constexpr double kLocalZMax = 2.0;
    static constexpr double kMaxHeightOffset = 1.0;
    static constexpr std::size_t kPillarPoints = 4;

    static HeightRange global_range() { return {kGlobalZMin, kGlobalZMax}; }
    static HeightRange local_range() { return {kLocalZMin, kLocalZMax}; }
};

/// z_k = z_min + (k + 0.5) * span / n, k = 0..n-1.
std::vector<double> pillar_heights(const HeightRange& range, std::size_t n);

struct CameraHit {
    std::uint32_t camera = 0;
    Vec2 uv;      // normalized image coordinate in [0,1)^2
    Vec2 duv_dz;  // derivative of uv with respect to the point's ego z
};

class ReferencePointSet {
public:
    ReferencePointSet(BEVGrid grid, HeightRange range, std::vector<double> heights);

    const BEVGrid& grid() const { return grid_; }
    const HeightRange& range() const { return range_; }
    const std::vector<double>& heights() const { return heights_; }
    std::size_t points_per_cell() const { return heights_.size(); }

    std::span<const CameraHit> hits(std::size_t cell, std::size_t k) const;
    std::size_t hit_count(std::size_t cell) const;
    /// Row of the first hit of (cell, k) in reference_locations().
    std::size_t hit_begin(std::size_t cell, std::size_t k) const { return offsets_.at(cell * heights_.size() + k); }
    bool visible(std::size_t cell, std::size_t k) const { return !hits(cell, k).empty(); }
    std::size_t total_hits() const { return hits_.size(); }

    /// Appends the hits of the next (cell, point) slot; slots are filled in order.
    void push_slot(std::span<const CameraHit> slot_hits);
    bool complete() const { return offsets_.size() == grid_.cell_count() * heights_.size() + 1; }

private:
    BEVGrid grid_;
    HeightRange range_;
    std::vector<double> heights_;
    std::vector<std::size_t> offsets_{0};
    std::vector<CameraHit> hits_;
};

ReferencePointSet build_reference_points(const BEVGrid& grid, std::span<const CameraModel> cams,
                                         const HeightRange& range, std::size_t n);

/// Adaptive local range: base range shifted by an offset bounded by max_offset.
struct AdaptiveHeightState {
    HeightRange base = SamplingDefaults::local_range();
    double offset = 0.0;
    double max_offset = SamplingDefaults::kMaxHeightOffset;

    HeightRange adapted() const { return base.shifted(offset); }
};

/// Height-offset head: global average pool over cells -> affine -> max_offset * tanh.
class HeightOffsetHead {
public:
    HeightOffsetHead() = default;
    HeightOffsetHead(nn::ParameterStore& store, std::string prefix, std::size_t channels,
                     double max_offset = SamplingDefaults::kMaxHeightOffset);

    /// `bev` is cell-major [cells, C]; returns a [1, 1] offset in meters.
    nn::Var forward(const nn::ParameterStore& store, const nn::Var& bev) const;

    double max_offset() const { return max_offset_; }

private:
    std::string prefix_;
    double max_offset_ = SamplingDefaults::kMaxHeightOffset;
};

/// Reference locations of every hit as a [hits, 2] tensor. When `height_offset`
/// is given the locations are differentiable with respect to it through the
/// stored d(uv)/dz derivatives.
nn::Var reference_locations(const ReferencePointSet& refs, const nn::Var* height_offset = nullptr);

}  // namespace ocbev
