#pragma once

// Object aligned temporal fusion: ego-motion index alignment between two BEV
// grids, followed by object-level feature transport along predicted motion.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ocbev/geometry.hpp"

namespace ocbev {

/// Channel-major BEV feature, values laid out as C x (rows * cols).
class BEVFeature {
public:
    BEVFeature(BEVGrid grid, std::size_t channels, double timestamp = 0.0);
    BEVFeature(BEVGrid grid, std::size_t channels, std::vector<double> values, double timestamp = 0.0);

    const BEVGrid& grid() const { return grid_; }
    std::size_t channels() const { return channels_; }
    std::size_t cells() const { return grid_.cell_count(); }
    double timestamp() const { return timestamp_; }
    void set_timestamp(double t) { timestamp_ = t; }

    /// Flattened C x (H*W) view.
    std::span<double> flat() { return values_; }
    std::span<const double> flat() const { return values_; }
    std::span<double> channel(std::size_t c) { return flat().subspan(c * cells(), cells()); }
    std::span<const double> channel(std::size_t c) const { return flat().subspan(c * cells(), cells()); }

    double& at(std::size_t c, std::size_t cell) { return values_[c * cells() + cell]; }
    double at(std::size_t c, std::size_t cell) const { return values_[c * cells() + cell]; }
    double& at(std::size_t c, int row, int col) { return at(c, static_cast<std::size_t>(row) * grid_.cols() + col); }
    double at(std::size_t c, int row, int col) const {
        return at(c, static_cast<std::size_t>(row) * grid_.cols() + col);
    }

    bool all_finite() const;
    bool same_shape(const BEVFeature& o) const;

private:
    BEVGrid grid_;
    std::size_t channels_;
    std::vector<double> values_;
    double timestamp_;
};

struct IndexPair {
    std::size_t source;  // flat index in the previous grid
    std::size_t target;  // flat index in the current grid

    friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Ego-motion alignment. Pairs are sorted by target index and targets are unique.
struct AlignmentMapping {
    std::vector<IndexPair> pairs;
    std::size_t size() const { return pairs.size(); }
};

struct ObjectMotion {
    Vec2 position;      // frame t', meters
    Vec2 velocity;      // m/s, frame t' axes
    std::size_t source; // flat index of `position` in the t' grid
};

class ObjectMotionRecord {
public:
    static constexpr double kDefaultMaxSpeed = 40.0;

    ObjectMotionRecord() = default;
    /// Validates every object against `grid` and `max_speed`; throws ocbev::Error otherwise.
    ObjectMotionRecord(const BEVGrid& grid, std::vector<Vec2> positions, std::vector<Vec2> velocities,
                       double max_speed = kDefaultMaxSpeed);

    /// Keeps only objects inside the grid, clamping speeds to max_speed.
    static ObjectMotionRecord from_detections(const BEVGrid& grid, std::span<const Vec2> positions,
                                              std::span<const Vec2> velocities,
                                              double max_speed = kDefaultMaxSpeed);

    const std::vector<ObjectMotion>& objects() const { return objects_; }
    std::size_t size() const { return objects_.size(); }
    bool empty() const { return objects_.empty(); }

private:
    std::vector<ObjectMotion> objects_;
};

struct FusionOptions {
    bool ego = true;
    bool object = true;
    std::size_t max_aligned_objects = 30;
};

AlignmentMapping ego_overlap_mapping(const BEVGrid& grid_prev, const BEVGrid& grid_cur,
                                     const PlanarPose& prev_to_cur);

BEVFeature fuse_ego(const BEVFeature& prev, const BEVFeature& cur, const PlanarPose& prev_to_cur);

/// Object-level (source, target) pairs after capping, dropping and collision resolution.
std::vector<IndexPair> predict_object_targets(const ObjectMotionRecord& rec, const PlanarPose& prev_to_cur,
                                              double dt, const BEVGrid& grid,
                                              std::size_t max_aligned_objects = 30);

BEVFeature fuse_object(const BEVFeature& prev, const BEVFeature& base, const ObjectMotionRecord& rec,
                       const PlanarPose& prev_to_cur, double dt, std::size_t max_aligned_objects = 30);

/// Ego fusion followed by the object override. Returns `cur` when `prev` is null.
BEVFeature object_aligned_temporal_fusion(const BEVFeature* prev, const BEVFeature& cur,
                                          const ObjectMotionRecord& rec, const PlanarPose& prev_to_cur,
                                          double dt, const FusionOptions& opts = {});

/// Precomputed fusion recipe, applied to raw channel-major or cell-major buffers.
/// The network uses this to run the same fusion inside its autodiff graph.
struct FusionPlan {
    bool has_prev = false;
    bool ego = true;
    AlignmentMapping ego_pairs;
    std::vector<IndexPair> object_pairs;

    /// Per target cell: true when the cell's value no longer depends on `cur`.
    std::vector<char> overridden(std::size_t cells) const;
};

FusionPlan plan_fusion(const BEVGrid& grid, bool has_prev, const ObjectMotionRecord& rec,
                       const PlanarPose& prev_to_cur, double dt, const FusionOptions& opts);

/// Applies a plan to cell-major (cells x channels) buffers; `out` has the shape of `cur`.
void apply_fusion_cell_major(const FusionPlan& plan, std::span<const double> prev,
                             std::span<const double> cur, std::size_t channels, std::span<double> out);

}  // namespace ocbev
