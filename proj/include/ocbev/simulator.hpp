#pragma once

// Synthetic driving scenes: an ego vehicle with piecewise-constant yaw rate,
// constant-velocity objects, a ring of horizontal cameras, and rendered
// stand-in image features (class-signature Gaussian splats).
//
// Global ego pose G_t maps ego-frame coordinates to the world frame, so the
// relative pose t' -> t is compose(inverse(G_t), G_t').

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "ocbev/geometry.hpp"
#include "ocbev/network.hpp"

namespace ocbev {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct ClassPrior {
    std::string name;
    double length = 1.0, width = 1.0, height = 1.0;
    Range speed;
};

struct RigSpec {
    int cameras = 6;
    double spacing_deg = 60.0;
    double hfov_deg = 70.0;
    int image_width = 168;
    int image_height = 104;
    int stride = 8;  // image pixels per feature pixel
    double mount_height = 0.0;

    int feature_width() const { return image_width / stride; }
    int feature_height() const { return image_height / stride; }
    std::vector<CameraModel> build() const;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int frames = 4;
    double dt = 0.5;
    int min_objects = 3;
    int max_objects = 8;
    std::vector<ClassPrior> classes = default_classes();
    Range spawn_radius{2.5, 9.5};
    double min_separation = 3.0;
    Range ego_speed{0.0, 6.0};
    Range ego_yaw_rate{-0.3, 0.3};
    int yaw_rate_period = 4;  // frames between yaw-rate changes
    double ground_z = -1.8;
    RigSpec rig;
    int feature_channels = 8;
    double feature_noise = 0.02;
    double splat_sigma = 0.8;  // meters; image-space sigma is splat_sigma * f / depth

    static std::vector<ClassPrior> default_classes();
    /// Throws ocbev::Error on invalid settings.
    void validate() const;
};

struct ObjectTruth {
    int cls = 0;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();  // ego frame
    Eigen::Vector3d size = Eigen::Vector3d::Ones();    // l, w, h
    double yaw = 0.0;                                  // ego frame
    Vec2 velocity;                                     // world velocity in ego axes, m/s
    int track_id = 0;
};

struct FrameRecord {
    double timestamp = 0.0;
    PlanarPose ego_pose;  // ego -> world
    std::vector<ObjectTruth> objects;
    ImageFeatureSet features;
    PlanarPose prev_to_cur;  // identity for the first frame
};

struct Scene {
    SceneSpec spec;
    std::vector<FrameRecord> frames;
};

/// Deterministic given spec.seed; features included.
Scene generate_scene(const SceneSpec& spec);

/// Renders one frame's features. Values are rounded to 32-bit floats so a
/// scene reloaded from disk is identical to the generated one.
ImageFeatureSet render_features(const std::vector<ObjectTruth>& objects, const std::vector<CameraModel>& cams,
                                const SceneSpec& spec, std::uint64_t noise_seed);

/// Fixed positive per-class channel signatures (class-major, classes x channels).
std::vector<double> class_signatures(std::size_t classes, std::size_t channels);

/// Planar center/velocity record of the objects inside `grid`.
ObjectMotionRecord motion_record(const std::vector<ObjectTruth>& objects, const BEVGrid& grid);
std::vector<DetectionBox> truth_boxes(const std::vector<ObjectTruth>& objects, const BEVGrid& grid);

nlohmann::json spec_to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);

/// Writes <dir>/<stem>.json plus one OCBT sidecar per frame and camera.
void save_scene(const Scene& scene, const std::filesystem::path& dir, const std::string& stem);
Scene load_scene(const std::filesystem::path& json_path);

}  // namespace ocbev
