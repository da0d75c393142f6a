#include "ocbev/boxes.hpp"

#include <cmath>
#include <string>

#include "ocbev/error.hpp"

namespace ocbev {

void validate_box(const DetectionBox& b) {
    if (!(b.l > 0.0 && b.w > 0.0 && b.h > 0.0)) throw Error("box sizes must be positive");
    if (!(b.score >= 0.0 && b.score <= 1.0)) throw Error("box score " + std::to_string(b.score) + " outside [0,1]");
}

BoxCode encode_box(const DetectionBox& b, const BEVGrid& grid) {
    const Vec2 uv = grid.normalize(b.center());
    return {uv.x, uv.y, b.z, std::log(b.l), std::log(b.w), std::log(b.h), std::sin(b.yaw), std::cos(b.yaw), b.vx, b.vy};
}

BoxCode box_code_weights(const BEVGrid& grid, double velocity_weight) {
    const double wx = grid.x_max() - grid.x_min(), wy = grid.y_max() - grid.y_min();
    return {wx, wy, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, velocity_weight, velocity_weight};
}

DetectionBox decode_box(std::span<const double> code, const BEVGrid& grid, int cls, double score) {
    if (code.size() != kBoxCodeSize) throw ShapeError("decode_box: expected 10 values");
    DetectionBox b;
    b.cls = cls;
    b.score = score;
    const Vec2 c = grid.denormalize({code[0], code[1]});
    b.x = c.x;
    b.y = c.y;
    b.z = code[2];
    b.l = std::exp(code[3]);
    b.w = std::exp(code[4]);
    b.h = std::exp(code[5]);
    b.yaw = std::atan2(code[6], code[7]);
    b.vx = code[8];
    b.vy = code[9];
    return b;
}

}  // namespace ocbev
