#include "ocbev/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>

#include "ocbev/error.hpp"

namespace ocbev {

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    a = std::fmod(a, two_pi);
    if (a <= -std::numbers::pi) a += two_pi;
    if (a > std::numbers::pi) a -= two_pi;
    return a;
}

// ---------------------------------------------------------------------------

BEVGrid::BEVGrid(int rows, int cols, double x_min, double x_max, double y_min, double y_max)
    : rows_(rows), cols_(cols), x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max) {
    if (rows <= 0 || cols <= 0) throw Error("BEVGrid: rows and cols must be positive");
    if (!(x_max > x_min) || !(y_max > y_min)) throw Error("BEVGrid: empty extent");
    const double sx = (x_max - x_min) / cols;
    const double sy = (y_max - y_min) / rows;
    if (std::abs(sx - sy) > 1e-9 * std::max(sx, sy)) {
        throw Error("BEVGrid: cells must be square (" + std::to_string(sx) + " vs " +
                    std::to_string(sy) + ")");
    }
}

BEVGrid BEVGrid::square(int size, double half_extent) {
    return BEVGrid(size, size, -half_extent, half_extent, -half_extent, half_extent);
}

bool BEVGrid::contains(Vec2 p) const {
    return p.x >= x_min_ && p.x < x_max_ && p.y >= y_min_ && p.y < y_max_;
}

std::optional<std::size_t> BEVGrid::coord_to_index(Vec2 p) const {
    if (!contains(p)) return std::nullopt;
    // Scaling by the fraction of the extent keeps exact results on binary-friendly extents.
    const double tx = (p.x - x_min_) / (x_max_ - x_min_) * cols_;
    const double ty = (p.y - y_min_) / (y_max_ - y_min_) * rows_;
    const int col = std::min(static_cast<int>(std::floor(tx)), cols_ - 1);
    const int row = std::min(static_cast<int>(std::floor(ty)), rows_ - 1);
    return static_cast<std::size_t>(row) * cols_ + col;
}

Vec2 BEVGrid::index_to_coord(std::size_t k) const {
    if (k >= cell_count()) {
        throw Error("BEVGrid::index_to_coord: index " + std::to_string(k) + " out of range");
    }
    const auto row = static_cast<double>(k / cols_);
    const auto col = static_cast<double>(k % cols_);
    return {x_min_ + (col + 0.5) * (x_max_ - x_min_) / cols_,
            y_min_ + (row + 0.5) * (y_max_ - y_min_) / rows_};
}

Vec2 BEVGrid::normalize(Vec2 p) const {
    return {(p.x - x_min_) / (x_max_ - x_min_), (p.y - y_min_) / (y_max_ - y_min_)};
}

Vec2 BEVGrid::denormalize(Vec2 uv) const {
    return {x_min_ + uv.x * (x_max_ - x_min_), y_min_ + uv.y * (y_max_ - y_min_)};
}

bool BEVGrid::same_layout(const BEVGrid& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && x_min_ == o.x_min_ && x_max_ == o.x_max_ &&
           y_min_ == o.y_min_ && y_max_ == o.y_max_;
}

// ---------------------------------------------------------------------------

PlanarPose::PlanarPose(double yaw, double tx, double ty) : yaw_(wrap_angle(yaw)), tx_(tx), ty_(ty) {}

Vec2 PlanarPose::apply(Vec2 p) const {
    const double c = std::cos(yaw_);
    const double s = std::sin(yaw_);
    return {c * p.x - s * p.y + tx_, s * p.x + c * p.y + ty_};
}

PlanarPose PlanarPose::inverse() const {
    const double c = std::cos(yaw_);
    const double s = std::sin(yaw_);
    // -R^T t
    return {-yaw_, -(c * tx_ + s * ty_), -(-s * tx_ + c * ty_)};
}

PlanarPose compose(const PlanarPose& a, const PlanarPose& b) {
    const Vec2 t = a.apply({b.tx_, b.ty_});
    return {a.yaw_ + b.yaw_, t.x, t.y};
}

// ---------------------------------------------------------------------------

HeightRange::HeightRange(double lo, double hi) : z_min(lo), z_max(hi) {
    if (!(lo < hi)) throw Error("HeightRange: z_min must be below z_max");
}

// ---------------------------------------------------------------------------

CameraModel::CameraModel(double fx, double fy, double cx, double cy, int width, int height,
                         const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : fx_(fx), fy_(fy), cx_(cx), cy_(cy), width_(width), height_(height), rotation_(rotation),
      translation_(translation) {
    if (fx <= 0 || fy <= 0 || width <= 0 || height <= 0) {
        throw Error("CameraModel: focal lengths and image size must be positive");
    }
    const Eigen::Matrix3d gram = rotation * rotation.transpose();
    if (!gram.isApprox(Eigen::Matrix3d::Identity(), 1e-6) ||
        std::abs(rotation.determinant() - 1.0) > 1e-6) {
        throw Error("CameraModel: rotation must be orthonormal with determinant +1");
    }
}

CameraModel CameraModel::looking_along(double yaw, const Eigen::Vector3d& position, double fx,
                                       double fy, double cx, double cy, int width, int height) {
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    Eigen::Matrix3d r;
    r << s, -c, 0.0,   // camera x: right of the viewing direction
        0.0, 0.0, -1.0,  // camera y: down
        c, s, 0.0;       // camera z: viewing direction
    return CameraModel(fx, fy, cx, cy, width, height, r, -r * position);
}

Eigen::Vector3d CameraModel::to_camera(const Eigen::Vector3d& p) const {
    return rotation_ * p + translation_;
}

std::optional<Projection> CameraModel::project(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = to_camera(p);
    if (q.z() <= kMinDepth) return std::nullopt;
    const Vec2 px{cx_ + fx_ * q.x() / q.z(), cy_ + fy_ * q.y() / q.z()};
    if (px.x < 0.0 || px.x >= width_ || px.y < 0.0 || px.y >= height_) return std::nullopt;
    return Projection{px, q.z()};
}

Vec2 CameraModel::pixel_derivative_z(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = to_camera(p);
    const Eigen::Vector3d dq = rotation_.col(2);
    const double iz = 1.0 / q.z();
    return {fx_ * (dq.x() * iz - q.x() * dq.z() * iz * iz),
            fy_ * (dq.y() * iz - q.y() * dq.z() * iz * iz)};
}

}  // namespace ocbev
