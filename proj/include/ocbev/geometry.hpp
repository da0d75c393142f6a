#pragma once

// Coordinate conventions used throughout the project.
//
//  * Ego frame: x forward, y left, z up (meters).
//  * Camera frame: x right, y down, z forward.
//  * BEV grid: columns run along ego x, rows along ego y. Cells are half-open
//    [lo, hi) on both axes, so a point exactly on x_max or y_max is outside.
//  * PlanarPose T maps point coordinates expressed in frame t' into frame t.
//    Pure forward ego motion of d meters yields translation (-d, 0).

#include <Eigen/Core>
#include <cstddef>
#include <optional>

namespace ocbev {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double norm(Vec2 v);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double radians);

class BEVGrid {
public:
    /// Square cells are required: (x_max - x_min) / cols == (y_max - y_min) / rows.
    BEVGrid(int rows, int cols, double x_min, double x_max, double y_min, double y_max);

    /// Square grid of `size` x `size` cells over [-half_extent, half_extent]^2.
    static BEVGrid square(int size, double half_extent);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t cell_count() const { return static_cast<std::size_t>(rows_) * cols_; }
    double x_min() const { return x_min_; }
    double x_max() const { return x_max_; }
    double y_min() const { return y_min_; }
    double y_max() const { return y_max_; }
    double cell_size() const { return (x_max_ - x_min_) / cols_; }

    bool contains(Vec2 p) const;
    std::optional<std::size_t> coord_to_index(Vec2 p) const;
    /// Center of cell k; throws ocbev::Error for k outside [0, cell_count()).
    Vec2 index_to_coord(std::size_t k) const;

    /// Metric point to [0,1)^2 grid coordinates (u along columns, v along rows).
    Vec2 normalize(Vec2 p) const;
    Vec2 denormalize(Vec2 uv) const;

    bool same_layout(const BEVGrid& other) const;

private:
    int rows_;
    int cols_;
    double x_min_, x_max_, y_min_, y_max_;
};

class PlanarPose {
public:
    PlanarPose() = default;
    PlanarPose(double yaw, double tx, double ty);

    static PlanarPose identity() { return {}; }

    double yaw() const { return yaw_; }
    double tx() const { return tx_; }
    double ty() const { return ty_; }

    Vec2 apply(Vec2 p) const;
    PlanarPose inverse() const;

    /// compose(a, b).apply(p) == a.apply(b.apply(p)).
    friend PlanarPose compose(const PlanarPose& a, const PlanarPose& b);

private:
    double yaw_ = 0.0;
    double tx_ = 0.0;
    double ty_ = 0.0;
};

inline Vec2 apply_planar(const PlanarPose& pose, Vec2 p) { return pose.apply(p); }

struct HeightRange {
    double z_min = 0.0;
    double z_max = 0.0;

    HeightRange() = default;
    HeightRange(double lo, double hi);

    HeightRange shifted(double dz) const { return {z_min + dz, z_max + dz}; }
    double span() const { return z_max - z_min; }
};

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
};

class CameraModel {
public:
    static constexpr double kMinDepth = 1e-4;

    /// `rotation`/`translation` map ego-frame points into the camera frame.
    CameraModel(double fx, double fy, double cx, double cy, int width, int height,
                const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

    /// Camera mounted at `position` (ego frame) looking horizontally along `yaw`.
    static CameraModel looking_along(double yaw, const Eigen::Vector3d& position, double fx,
                                     double fy, double cx, double cy, int width, int height);

    double fx() const { return fx_; }
    double fy() const { return fy_; }
    double cx() const { return cx_; }
    double cy() const { return cy_; }
    int width() const { return width_; }
    int height() const { return height_; }
    const Eigen::Matrix3d& rotation() const { return rotation_; }
    const Eigen::Vector3d& translation() const { return translation_; }

    Eigen::Vector3d to_camera(const Eigen::Vector3d& ego_point) const;

    /// Pixel and depth, or nullopt when behind the camera or outside the image.
    std::optional<Projection> project(const Eigen::Vector3d& ego_point) const;

    /// d(pixel)/d(ego z) at a point in front of the camera.
    Vec2 pixel_derivative_z(const Eigen::Vector3d& ego_point) const;

private:
    double fx_, fy_, cx_, cy_;
    int width_, height_;
    Eigen::Matrix3d rotation_;
    Eigen::Vector3d translation_;
};

inline std::optional<Projection> project_to_camera(const CameraModel& cam, const Eigen::Vector3d& p) {
    return cam.project(p);
}

}  // namespace ocbev
