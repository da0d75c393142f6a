#pragma once

// 3D boxes and their 10-value regression code:
//   (u, v, z, log l, log w, log h, sin yaw, cos yaw, vx, vy)
// with (u, v) the grid-normalized planar center.

#include <array>
#include <cstddef>
#include <span>

#include "ocbev/geometry.hpp"

namespace ocbev {

inline constexpr std::size_t kBoxCodeSize = 10;
using BoxCode = std::array<double, kBoxCodeSize>;

struct DetectionBox {
    int cls = 0;
    double score = 1.0;
    double x = 0.0, y = 0.0, z = 0.0;
    double l = 1.0, w = 1.0, h = 1.0;
    double yaw = 0.0;
    double vx = 0.0, vy = 0.0;

    Vec2 center() const { return {x, y}; }
    Vec2 velocity() const { return {vx, vy}; }
};

/// Throws ocbev::Error for non-positive sizes or a score outside [0,1].
void validate_box(const DetectionBox& b);

BoxCode encode_box(const DetectionBox& b, const BEVGrid& grid);

/// Per-component loss weights: the normalized center is scaled back to meters
/// so a metre of position error counts like one unit of the other components.
BoxCode box_code_weights(const BEVGrid& grid, double velocity_weight = 0.2);

/// Inverse of encode_box; yaw is recovered with atan2(sin, cos).
DetectionBox decode_box(std::span<const double> code, const BEVGrid& grid, int cls = 0, double score = 1.0);

}  // namespace ocbev
