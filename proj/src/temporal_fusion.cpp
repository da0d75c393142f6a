#include "ocbev/temporal_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ocbev/error.hpp"
#include "ocbev/kernels.hpp"

namespace ocbev {

BEVFeature::BEVFeature(BEVGrid grid, std::size_t channels, double timestamp)
    : grid_(grid), channels_(channels), values_(channels * grid.cell_count(), 0.0), timestamp_(timestamp) {}

BEVFeature::BEVFeature(BEVGrid grid, std::size_t channels, std::vector<double> values, double timestamp)
    : grid_(grid), channels_(channels), values_(std::move(values)), timestamp_(timestamp) {
    if (values_.size() != channels_ * grid_.cell_count()) {
        throw ShapeError("BEVFeature: value count " + std::to_string(values_.size()) + " does not match " +
                         std::to_string(channels_) + " x " + std::to_string(grid_.cell_count()));
    }
}

bool BEVFeature::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool BEVFeature::same_shape(const BEVFeature& o) const {
    return channels_ == o.channels_ && grid_.same_layout(o.grid_);
}

// ---------------------------------------------------------------------------

ObjectMotionRecord::ObjectMotionRecord(const BEVGrid& grid, std::vector<Vec2> positions,
                                       std::vector<Vec2> velocities, double max_speed) {
    if (positions.size() != velocities.size()) {
        throw ShapeError("ObjectMotionRecord: positions and velocities differ in length");
    }
    objects_.reserve(positions.size());
    for (std::size_t m = 0; m < positions.size(); ++m) {
        const auto idx = grid.coord_to_index(positions[m]);
        if (!idx) throw Error("ObjectMotionRecord: object " + std::to_string(m) + " lies outside the grid");
        if (norm(velocities[m]) > max_speed) {
            throw Error("ObjectMotionRecord: object " + std::to_string(m) + " exceeds the speed limit");
        }
        objects_.push_back({positions[m], velocities[m], *idx});
    }
}

ObjectMotionRecord ObjectMotionRecord::from_detections(const BEVGrid& grid, std::span<const Vec2> positions,
                                                       std::span<const Vec2> velocities, double max_speed) {
    std::vector<Vec2> keep_p;
    std::vector<Vec2> keep_v;
    for (std::size_t m = 0; m < positions.size() && m < velocities.size(); ++m) {
        if (!grid.contains(positions[m])) continue;
        Vec2 v = velocities[m];
        const double speed = norm(v);
        if (!std::isfinite(speed)) continue;
        if (speed > max_speed) v = (max_speed / speed) * v;
        keep_p.push_back(positions[m]);
        keep_v.push_back(v);
    }
    return ObjectMotionRecord(grid, std::move(keep_p), std::move(keep_v), max_speed);
}

// ---------------------------------------------------------------------------

AlignmentMapping ego_overlap_mapping(const BEVGrid& grid_prev, const BEVGrid& grid_cur,
                                     const PlanarPose& pose) {
    if (!grid_prev.same_layout(grid_cur)) throw ShapeError("ego_overlap_mapping: grid layouts differ");

    const std::size_t cells = grid_cur.cell_count();
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> source(cells, none);
    std::vector<double> best(cells, std::numeric_limits<double>::infinity());

    // Several rotated source centers can land in one target cell; the one
    // closest to the target center wins, then the lower source index.
    for (std::size_t i = 0; i < grid_prev.cell_count(); ++i) {
        const Vec2 moved = pose.apply(grid_prev.index_to_coord(i));
        const auto j = grid_cur.coord_to_index(moved);
        if (!j) continue;
        const Vec2 d = moved - grid_cur.index_to_coord(*j);
        const double dist2 = d.x * d.x + d.y * d.y;
        if (dist2 < best[*j]) {
            best[*j] = dist2;
            source[*j] = i;
        }
    }

    AlignmentMapping out;
    for (std::size_t j = 0; j < cells; ++j) {
        if (source[j] != none) out.pairs.push_back({source[j], j});
    }
    return out;
}

BEVFeature fuse_ego(const BEVFeature& prev, const BEVFeature& cur, const PlanarPose& pose) {
    if (!prev.same_shape(cur)) throw ShapeError("fuse_ego: feature shapes differ");
    const AlignmentMapping mapping = ego_overlap_mapping(prev.grid(), cur.grid(), pose);

    BEVFeature aligned(cur.grid(), cur.channels(), cur.timestamp());
    for (std::size_t c = 0; c < cur.channels(); ++c) {
        auto dst = aligned.channel(c);
        const auto src = prev.channel(c);
        for (const auto& [i, j] : mapping.pairs) dst[j] = src[i];
    }
    kernels::add(aligned.flat().data(), cur.flat().data(), aligned.flat().data(), aligned.flat().size());
    return aligned;
}

std::vector<IndexPair> predict_object_targets(const ObjectMotionRecord& rec, const PlanarPose& pose, double dt,
                                              const BEVGrid& grid, std::size_t max_aligned_objects) {
    if (!(dt > 0.0)) throw Error("predict_object_targets: dt must be positive");

    const auto& objs = rec.objects();
    std::vector<std::size_t> order(objs.size());
    std::iota(order.begin(), order.end(), 0);
    auto faster = [&](std::size_t a, std::size_t b) {
        const double sa = norm(objs[a].velocity);
        const double sb = norm(objs[b].velocity);
        if (sa != sb) return sa > sb;
        if (objs[a].source != objs[b].source) return objs[a].source < objs[b].source;
        return a < b;
    };
    std::stable_sort(order.begin(), order.end(), faster);
    if (order.size() > max_aligned_objects) order.resize(max_aligned_objects);

    // `order` is fastest-first, so the first claim on a target cell is the winner.
    std::vector<IndexPair> pairs;
    std::vector<char> taken(grid.cell_count(), 0);
    for (std::size_t m : order) {
        const Vec2 predicted = objs[m].position + dt * objs[m].velocity;
        const auto moved_idx = grid.coord_to_index(predicted);
        if (!moved_idx) continue;
        const auto target = grid.coord_to_index(pose.apply(grid.index_to_coord(*moved_idx)));
        if (!target || taken[*target]) continue;
        taken[*target] = 1;
        pairs.push_back({objs[m].source, *target});
    }
    return pairs;
}

BEVFeature fuse_object(const BEVFeature& prev, const BEVFeature& base, const ObjectMotionRecord& rec,
                       const PlanarPose& pose, double dt, std::size_t max_aligned_objects) {
    if (!prev.same_shape(base)) throw ShapeError("fuse_object: feature shapes differ");
    BEVFeature out = base;
    if (rec.empty()) return out;
    const auto pairs = predict_object_targets(rec, pose, dt, base.grid(), max_aligned_objects);
    for (std::size_t c = 0; c < out.channels(); ++c) {
        auto dst = out.channel(c);
        const auto src = prev.channel(c);
        for (const auto& [i, j] : pairs) dst[j] = src[i];
    }
    return out;
}

BEVFeature object_aligned_temporal_fusion(const BEVFeature* prev, const BEVFeature& cur,
                                          const ObjectMotionRecord& rec, const PlanarPose& pose, double dt,
                                          const FusionOptions& opts) {
    if (prev == nullptr) return cur;
    if (!prev->same_shape(cur)) throw ShapeError("object_aligned_temporal_fusion: feature shapes differ");
    const BEVFeature base = opts.ego ? fuse_ego(*prev, cur, pose) : cur;
    if (!opts.object) return base;
    return fuse_object(*prev, base, rec, pose, dt, opts.max_aligned_objects);
}

// ---------------------------------------------------------------------------

std::vector<char> FusionPlan::overridden(std::size_t cells) const {
    std::vector<char> mask(cells, 0);
    for (const auto& p : object_pairs) mask[p.target] = 1;
    return mask;
}

FusionPlan plan_fusion(const BEVGrid& grid, bool has_prev, const ObjectMotionRecord& rec,
                       const PlanarPose& pose, double dt, const FusionOptions& opts) {
    FusionPlan plan;
    plan.has_prev = has_prev;
    plan.ego = opts.ego;
    if (!has_prev) return plan;
    if (opts.ego) plan.ego_pairs = ego_overlap_mapping(grid, grid, pose);
    if (opts.object && !rec.empty()) {
        plan.object_pairs = predict_object_targets(rec, pose, dt, grid, opts.max_aligned_objects);
    }
    return plan;
}

void apply_fusion_cell_major(const FusionPlan& plan, std::span<const double> prev, std::span<const double> cur,
                             std::size_t channels, std::span<double> out) {
    if (cur.size() != out.size() || (plan.has_prev && prev.size() != cur.size())) {
        throw ShapeError("apply_fusion_cell_major: buffer sizes differ");
    }
    std::copy(cur.begin(), cur.end(), out.begin());
    if (!plan.has_prev) return;
    if (plan.ego) {
        for (const auto& [i, j] : plan.ego_pairs.pairs) {
            kernels::add(out.data() + j * channels, prev.data() + i * channels, out.data() + j * channels,
                         channels);
        }
    }
    for (const auto& [i, j] : plan.object_pairs) {
        std::copy_n(prev.data() + i * channels, channels, out.data() + j * channels);
    }
}

}  // namespace ocbev
