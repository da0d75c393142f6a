#pragma once

// Minimal nuScenes-style metadata: ego_pose and calibrated_sensor tables,
// and the zero-based temporal queue built from consecutive ego poses.
//
// Yaw of a unit quaternion (w, x, y, z) is the heading of its rotated x axis
// projected onto the ground plane: atan2(2(wz + xy), 1 - 2(y^2 + z^2)).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocbev/geometry.hpp"

namespace ocbev {

struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const;
    double yaw() const;
    /// True when the rotation has a roll or pitch component beyond `tol` radians.
    bool tilted(double tol = 1e-6) const;

    friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

struct PoseRecord {
    std::string token;
    std::int64_t timestamp = 0;  // microseconds
    std::array<double, 3> translation{};
    Quaternion rotation;

    friend bool operator==(const PoseRecord&, const PoseRecord&) = default;
};

struct CalibrationRecord {
    std::string token;
    std::string channel;
    std::array<double, 3> translation{};
    Quaternion rotation;
    std::optional<std::array<double, 9>> intrinsic;  // row-major 3x3

    friend bool operator==(const CalibrationRecord&, const CalibrationRecord&) = default;
};

struct Metadata {
    std::vector<PoseRecord> poses;
    std::vector<CalibrationRecord> calibrations;
    std::vector<std::string> warnings;
};

/// Throws ocbev::ParseError naming the offending path, e.g. "ego_pose[2].translation".
Metadata parse_metadata(const std::string& text);
nlohmann::json metadata_to_json(const Metadata& m);

struct QueueSample {
    std::string token;
    double timestamp = 0.0;  // seconds since the first sample
    Vec2 position;           // zero-based
    double yaw = 0.0;        // relative to the first sample
    std::vector<std::string> calibrations;
};

struct SequenceQueue {
    std::vector<QueueSample> samples;
    /// relative[k] maps frame k coordinates into frame k + 1.
    std::vector<PlanarPose> relative;
    bool short_queue = false;
    std::vector<std::string> warnings;

    /// Zero-based pose of the last sample rebuilt from the relative poses.
    PlanarPose compose_relative() const;
};

struct QueueOptions {
    std::size_t queue_length = 4;
    /// Rotate displacements into the first sample's heading (false: translate only).
    bool rotate_to_first = true;
};

/// Uses the first queue_length records, which must have strictly increasing timestamps.
SequenceQueue build_sequence_queue(const std::vector<PoseRecord>& records, const QueueOptions& opts = {},
                                   const std::vector<CalibrationRecord>& calibrations = {});

/// Queue serialized in the scene-file layout (no objects, no feature sidecars).
nlohmann::json queue_to_scene_json(const SequenceQueue& q);

}  // namespace ocbev
