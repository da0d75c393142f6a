#include "ocbev/ingest.hpp"

#include <algorithm>
#include <cmath>

#include "ocbev/error.hpp"
#include "ocbev/simulator.hpp"

namespace ocbev {

using nlohmann::json;

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

double Quaternion::yaw() const { return std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)); }

bool Quaternion::tilted(double tol) const {
    const double roll = std::atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y));
    const double pitch = std::asin(std::clamp(2.0 * (w * y - z * x), -1.0, 1.0));
    return std::abs(roll) > tol || std::abs(pitch) > tol;
}

namespace {

const json& require(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw ParseError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(path + "." + key + ": missing required key");
    return *it;
}

double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ParseError(path + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ParseError(path + ": non-finite number");
    return d;
}

std::string string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ParseError(path + ": expected a string");
    return v.get<std::string>();
}

template <std::size_t N>
std::array<double, N> numbers(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != N) {
        throw ParseError(path + ": expected an array of " + std::to_string(N) + " numbers");
    }
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = number(v[i], path + "[" + std::to_string(i) + "]");
    return out;
}

Quaternion quaternion(const json& v, const std::string& path) {
    const auto q = numbers<4>(v, path);
    Quaternion out{q[0], q[1], q[2], q[3]};
    const double n = out.norm();
    if (!(n > 1e-12)) throw ParseError(path + ": zero quaternion");
    if (std::abs(n - 1.0) > 1e-12) out = {q[0] / n, q[1] / n, q[2] / n, q[3] / n};
    return out;
}

json quaternion_json(const Quaternion& q) { return {q.w, q.x, q.y, q.z}; }

}  // namespace

Metadata parse_metadata(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("metadata: malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("metadata: top level must be an object");
    Metadata m;
    const json& poses = require(doc, "ego_pose", "$");
    if (!poses.is_array()) throw ParseError("$.ego_pose: expected an array");
    bool tilted = false;
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const std::string path = "ego_pose[" + std::to_string(i) + "]";
        const json& r = poses[i];
        PoseRecord p;
        p.token = string(require(r, "token", path), path + ".token");
        const json& ts = require(r, "timestamp", path);
        if (!ts.is_number_integer()) throw ParseError(path + ".timestamp: expected an integer (microseconds)");
        p.timestamp = ts.get<std::int64_t>();
        p.translation = numbers<3>(require(r, "translation", path), path + ".translation");
        p.rotation = quaternion(require(r, "rotation", path), path + ".rotation");
        tilted = tilted || p.rotation.tilted();
        m.poses.push_back(std::move(p));
    }
    if (tilted) m.warnings.push_back("ego_pose: roll/pitch discarded (planar motion assumed)");
    if (auto it = doc.find("calibrated_sensor"); it != doc.end()) {
        if (!it->is_array()) throw ParseError("$.calibrated_sensor: expected an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string path = "calibrated_sensor[" + std::to_string(i) + "]";
            const json& r = (*it)[i];
            CalibrationRecord c;
            c.token = string(require(r, "token", path), path + ".token");
            if (auto ch = r.find("channel"); ch != r.end()) c.channel = string(*ch, path + ".channel");
            c.translation = numbers<3>(require(r, "translation", path), path + ".translation");
            c.rotation = quaternion(require(r, "rotation", path), path + ".rotation");
            if (auto k = r.find("camera_intrinsic"); k != r.end() && !k->empty()) {
                if (!k->is_array() || k->size() != 3) {
                    throw ParseError(path + ".camera_intrinsic: expected a 3x3 matrix");
                }
                std::array<double, 9> K{};
                for (std::size_t row = 0; row < 3; ++row) {
                    const auto vals = numbers<3>((*k)[row], path + ".camera_intrinsic[" + std::to_string(row) + "]");
                    std::copy(vals.begin(), vals.end(), K.begin() + static_cast<std::ptrdiff_t>(row * 3));
                }
                c.intrinsic = K;
            }
            m.calibrations.push_back(std::move(c));
        }
    }
    return m;
}

json metadata_to_json(const Metadata& m) {
    json poses = json::array();
    for (const auto& p : m.poses) {
        poses.push_back({{"token", p.token},
                         {"timestamp", p.timestamp},
                         {"translation", p.translation},
                         {"rotation", quaternion_json(p.rotation)}});
    }
    json cals = json::array();
    for (const auto& c : m.calibrations) {
        json r = {{"token", c.token},
                  {"channel", c.channel},
                  {"translation", c.translation},
                  {"rotation", quaternion_json(c.rotation)}};
        if (c.intrinsic) {
            const auto& K = *c.intrinsic;
            r["camera_intrinsic"] = {{K[0], K[1], K[2]}, {K[3], K[4], K[5]}, {K[6], K[7], K[8]}};
        } else {
            r["camera_intrinsic"] = json::array();
        }
        cals.push_back(std::move(r));
    }
    return {{"ego_pose", poses}, {"calibrated_sensor", cals}};
}

PlanarPose SequenceQueue::compose_relative() const {
    PlanarPose first_to_last;
    for (const auto& r : relative) first_to_last = compose(r, first_to_last);
    return first_to_last.inverse();
}

SequenceQueue build_sequence_queue(const std::vector<PoseRecord>& records, const QueueOptions& opts,
                                   const std::vector<CalibrationRecord>& calibrations) {
    if (opts.queue_length == 0) throw Error("build_sequence_queue: queue length must be positive");
    if (records.empty()) throw Error("build_sequence_queue: no pose records");
    SequenceQueue q;
    const std::size_t n = std::min(opts.queue_length, records.size());
    if (n < opts.queue_length) {
        q.short_queue = true;
        q.warnings.push_back("only " + std::to_string(records.size()) + " records for a queue of " +
                             std::to_string(opts.queue_length));
    }
    for (std::size_t k = 1; k < n; ++k) {
        if (records[k].timestamp <= records[k - 1].timestamp) {
            throw Error("build_sequence_queue: timestamps must be strictly increasing (record " + std::to_string(k) +
                        ")");
        }
    }
    std::vector<std::string> cal_tokens;
    for (const auto& c : calibrations) cal_tokens.push_back(c.token);

    const auto& first = records[0];
    const double yaw0 = first.rotation.yaw();
    const double c0 = std::cos(yaw0), s0 = std::sin(yaw0);
    std::vector<PlanarPose> global;
    for (std::size_t k = 0; k < n; ++k) {
        const auto& r = records[k];
        if (r.rotation.tilted()) {
            if (q.warnings.empty() || q.warnings.back() != "roll/pitch discarded") {
                q.warnings.push_back("roll/pitch discarded");
            }
        }
        const double dx = r.translation[0] - first.translation[0];
        const double dy = r.translation[1] - first.translation[1];
        QueueSample s;
        s.token = r.token;
        s.timestamp = static_cast<double>(r.timestamp - first.timestamp) * 1e-6;
        s.position = opts.rotate_to_first ? Vec2{c0 * dx + s0 * dy, -s0 * dx + c0 * dy} : Vec2{dx, dy};
        s.yaw = wrap_angle(r.rotation.yaw() - yaw0);
        s.calibrations = cal_tokens;
        if (k == 0) s.position = {0.0, 0.0};
        q.samples.push_back(std::move(s));
        global.emplace_back(r.rotation.yaw(), r.translation[0], r.translation[1]);
    }
    for (std::size_t k = 1; k < n; ++k) {
        if (opts.rotate_to_first) {
            const PlanarPose a(q.samples[k - 1].yaw, q.samples[k - 1].position.x, q.samples[k - 1].position.y);
            const PlanarPose b(q.samples[k].yaw, q.samples[k].position.x, q.samples[k].position.y);
            q.relative.push_back(compose(b.inverse(), a));
        } else {
            q.relative.push_back(compose(global[k].inverse(), global[k - 1]));
        }
    }
    return q;
}

json queue_to_scene_json(const SequenceQueue& q) {
    SceneSpec spec;
    spec.frames = static_cast<int>(q.samples.size());
    if (q.samples.size() > 1) spec.dt = q.samples.back().timestamp / static_cast<double>(q.samples.size() - 1);
    json frames = json::array();
    json tokens = json::array();
    for (const auto& s : q.samples) {
        frames.push_back({{"timestamp", s.timestamp},
                          {"ego_pose", {{"yaw", s.yaw}, {"x", s.position.x}, {"y", s.position.y}}},
                          {"objects", json::array()},
                          {"features", json::array()}});
        tokens.push_back({{"token", s.token}, {"calibrations", s.calibrations}});
    }
    return {{"spec", spec_to_json(spec)},
            {"frames", frames},
            {"ingest", {{"samples", tokens}, {"short_queue", q.short_queue}, {"warnings", q.warnings}}}};
}

}  // namespace ocbev
