#include "ocbev/simulator.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ocbev/error.hpp"
#include "ocbev/tensor_io.hpp"

namespace ocbev {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, Range r) {
    if (r.hi <= r.lo) return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

Vec2 rotate(Vec2 p, double yaw) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

struct WorldObject {
    int cls;
    Vec2 position0;  // world, at t = 0
    Vec2 velocity;   // world
    double yaw;      // world
    int track_id;
};

}  // namespace

std::vector<CameraModel> RigSpec::build() const {
    if (cameras < 1 || image_width < 1 || image_height < 1 || stride < 1) throw Error("RigSpec: invalid sizes");
    if (!(hfov_deg > 0.0 && hfov_deg < 180.0)) throw Error("RigSpec: field of view must lie in (0, 180) degrees");
    const double f = 0.5 * image_width / std::tan(0.5 * hfov_deg * kPi / 180.0);
    std::vector<CameraModel> cams;
    for (int k = 0; k < cameras; ++k) {
        const double yaw = wrap_angle(k * spacing_deg * kPi / 180.0);
        cams.push_back(CameraModel::looking_along(yaw, Eigen::Vector3d(0.0, 0.0, mount_height), f, f,
                                                  0.5 * image_width, 0.5 * image_height, image_width,
                                                  image_height));
    }
    return cams;
}

std::vector<ClassPrior> SceneSpec::default_classes() {
    return {{"car", 4.5, 1.9, 1.6, {0.0, 14.0}},
            {"truck", 7.0, 2.5, 3.0, {0.0, 10.0}},
            {"pedestrian", 0.7, 0.7, 1.75, {0.0, 2.0}}};
}

void SceneSpec::validate() const {
    if (frames < 1) throw Error("SceneSpec: need at least one frame");
    if (!(dt > 0.0)) throw Error("SceneSpec: dt must be positive");
    if (min_objects < 0 || max_objects < min_objects) throw Error("SceneSpec: invalid object count range");
    if (classes.empty()) throw Error("SceneSpec: need at least one class");
    for (const auto& c : classes) {
        if (!(c.length > 0 && c.width > 0 && c.height > 0)) throw Error("SceneSpec: class sizes must be positive");
        if (c.speed.lo < 0 || c.speed.hi < c.speed.lo) throw Error("SceneSpec: invalid speed range");
    }
    if (spawn_radius.lo < 0 || spawn_radius.hi <= spawn_radius.lo) throw Error("SceneSpec: invalid spawn radius");
    if (ego_speed.lo < 0 || ego_speed.hi < ego_speed.lo) throw Error("SceneSpec: invalid ego speed range");
    if (ego_yaw_rate.hi < ego_yaw_rate.lo) throw Error("SceneSpec: invalid yaw-rate range");
    if (yaw_rate_period < 1) throw Error("SceneSpec: yaw-rate period must be positive");
    if (feature_channels < 1) throw Error("SceneSpec: need at least one feature channel");
    if (feature_noise < 0.0 || !(splat_sigma > 0.0)) throw Error("SceneSpec: invalid noise or splat sigma");
    if (rig.feature_width() < 1 || rig.feature_height() < 1) throw Error("SceneSpec: image smaller than stride");
}

std::vector<double> class_signatures(std::size_t classes, std::size_t channels) {
    std::mt19937_64 rng(0x5167a7u);
    std::uniform_real_distribution<double> dist(0.2, 1.0);
    std::vector<double> sig(classes * channels);
    for (auto& v : sig) v = dist(rng);
    return sig;
}

ImageFeatureSet render_features(const std::vector<ObjectTruth>& objects, const std::vector<CameraModel>& cams,
                                const SceneSpec& spec, std::uint64_t noise_seed) {
    const std::size_t C = static_cast<std::size_t>(spec.feature_channels);
    const std::size_t H = static_cast<std::size_t>(spec.rig.feature_height());
    const std::size_t W = static_cast<std::size_t>(spec.rig.feature_width());
    const double stride = spec.rig.stride;
    // The last two channels carry the heading when there is room for them.
    const std::size_t yaw_channels = C >= 4 ? 2 : 0;
    const std::size_t sig_channels = C - yaw_channels;
    const std::vector<double> sig = class_signatures(spec.classes.size(), C);

    ImageFeatureSet out(cams.size(), C, H, W);
    for (std::size_t cam = 0; cam < cams.size(); ++cam) {
        for (const auto& obj : objects) {
            const auto proj = cams[cam].project(obj.center);
            if (!proj) continue;
            const double fx = proj->pixel.x / stride - 0.5;
            const double fy = proj->pixel.y / stride - 0.5;
            const double sigma = std::max(0.5, spec.splat_sigma * cams[cam].fx() / proj->depth / stride);
            const double inv = 1.0 / (2.0 * sigma * sigma);
            std::vector<double> pattern(C);
            for (std::size_t c = 0; c < sig_channels; ++c) pattern[c] = sig[obj.cls * C + c];
            if (yaw_channels) {
                pattern[C - 2] = 0.5 * (1.0 + std::cos(obj.yaw));
                pattern[C - 1] = 0.5 * (1.0 + std::sin(obj.yaw));
            }
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) {
                    const double dx = static_cast<double>(x) - fx, dy = static_cast<double>(y) - fy;
                    const double g = std::exp(-(dx * dx + dy * dy) * inv);
                    if (g < 1e-12) continue;
                    for (std::size_t c = 0; c < C; ++c) out.at(cam, c, y, x) += g * pattern[c];
                }
            }
        }
    }
    if (spec.feature_noise > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> noise(0.0, spec.feature_noise);
        for (auto& m : out.maps)
            for (auto& v : m) v += noise(rng);
    }
    for (auto& m : out.maps)
        for (auto& v : m) v = static_cast<double>(static_cast<float>(v));
    return out;
}

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    Scene scene;
    scene.spec = spec;

    // Ego trajectory with exact arc integration.
    std::vector<PlanarPose> poses;
    {
        double yaw = uniform(rng, {-kPi, kPi});
        double x = uniform(rng, {-100.0, 100.0});
        double y = uniform(rng, {-100.0, 100.0});
        const double speed = uniform(rng, spec.ego_speed);
        double rate = 0.0;
        for (int f = 0; f < spec.frames; ++f) {
            poses.emplace_back(yaw, x, y);
            if (f % spec.yaw_rate_period == 0) rate = uniform(rng, spec.ego_yaw_rate);
            const double next = yaw + rate * spec.dt;
            if (std::abs(rate) > 1e-12) {
                x += speed / rate * (std::sin(next) - std::sin(yaw));
                y -= speed / rate * (std::cos(next) - std::cos(yaw));
            } else {
                x += speed * spec.dt * std::cos(yaw);
                y += speed * spec.dt * std::sin(yaw);
            }
            yaw = wrap_angle(next);
        }
    }

    // Objects spawned around the ego pose of the middle frame.
    const int mid = spec.frames / 2;
    const double t_mid = mid * spec.dt;
    std::vector<WorldObject> world;
    const int count = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
    std::vector<Vec2> placed;
    for (int i = 0, attempts = 0; i < count && attempts < 1000; ++attempts) {
        const double r = uniform(rng, spec.spawn_radius);
        const double bearing = uniform(rng, {-kPi, kPi});
        const Vec2 local{r * std::cos(bearing), r * std::sin(bearing)};
        bool clear = true;
        for (Vec2 q : placed) clear = clear && norm(q - local) >= spec.min_separation;
        const int cls = std::uniform_int_distribution<int>(0, static_cast<int>(spec.classes.size()) - 1)(rng);
        const double heading = uniform(rng, {-kPi, kPi});
        const double speed = uniform(rng, spec.classes[cls].speed);
        if (!clear) continue;
        placed.push_back(local);
        const Vec2 at_mid = poses[mid].apply(local);
        const Vec2 vel = speed * Vec2{std::cos(heading), std::sin(heading)};
        world.push_back({cls, at_mid - t_mid * vel, vel, heading, i});
        ++i;
    }

    const std::vector<CameraModel> cams = spec.rig.build();
    for (int f = 0; f < spec.frames; ++f) {
        FrameRecord fr;
        fr.timestamp = f * spec.dt;
        fr.ego_pose = poses[f];
        fr.prev_to_cur = f == 0 ? PlanarPose::identity() : compose(poses[f].inverse(), poses[f - 1]);
        const PlanarPose to_ego = poses[f].inverse();
        for (const auto& w : world) {
            const ClassPrior& prior = spec.classes[w.cls];
            ObjectTruth o;
            o.cls = w.cls;
            const Vec2 p = to_ego.apply(w.position0 + fr.timestamp * w.velocity);
            o.center = {p.x, p.y, spec.ground_z + 0.5 * prior.height};
            o.size = {prior.length, prior.width, prior.height};
            o.yaw = wrap_angle(w.yaw - poses[f].yaw());
            o.velocity = rotate(w.velocity, -poses[f].yaw());
            o.track_id = w.track_id;
            fr.objects.push_back(o);
        }
        fr.features = render_features(fr.objects, cams, spec, spec.seed * 1000003ULL + static_cast<std::uint64_t>(f));
        scene.frames.push_back(std::move(fr));
    }
    return scene;
}

ObjectMotionRecord motion_record(const std::vector<ObjectTruth>& objects, const BEVGrid& grid) {
    std::vector<Vec2> pos, vel;
    for (const auto& o : objects) {
        pos.push_back({o.center.x(), o.center.y()});
        vel.push_back(o.velocity);
    }
    return ObjectMotionRecord::from_detections(grid, pos, vel);
}

std::vector<DetectionBox> truth_boxes(const std::vector<ObjectTruth>& objects, const BEVGrid& grid) {
    std::vector<DetectionBox> out;
    for (const auto& o : objects) {
        if (!grid.contains({o.center.x(), o.center.y()})) continue;
        DetectionBox b;
        b.cls = o.cls;
        b.score = 1.0;
        b.x = o.center.x();
        b.y = o.center.y();
        b.z = o.center.z();
        b.l = o.size.x();
        b.w = o.size.y();
        b.h = o.size.z();
        b.yaw = o.yaw;
        b.vx = o.velocity.x;
        b.vy = o.velocity.y;
        out.push_back(b);
    }
    return out;
}

// ---- serialization ---------------------------------------------------------

using nlohmann::json;

json spec_to_json(const SceneSpec& s) {
    json classes = json::array();
    for (const auto& c : s.classes) {
        classes.push_back({{"name", c.name},
                           {"size", {c.length, c.width, c.height}},
                           {"speed", {c.speed.lo, c.speed.hi}}});
    }
    return {{"seed", s.seed},
            {"frames", s.frames},
            {"dt", s.dt},
            {"objects", {s.min_objects, s.max_objects}},
            {"classes", classes},
            {"spawn_radius", {s.spawn_radius.lo, s.spawn_radius.hi}},
            {"min_separation", s.min_separation},
            {"ego_speed", {s.ego_speed.lo, s.ego_speed.hi}},
            {"ego_yaw_rate", {s.ego_yaw_rate.lo, s.ego_yaw_rate.hi}},
            {"yaw_rate_period", s.yaw_rate_period},
            {"ground_z", s.ground_z},
            {"rig",
             {{"cameras", s.rig.cameras},
              {"spacing_deg", s.rig.spacing_deg},
              {"hfov_deg", s.rig.hfov_deg},
              {"image_width", s.rig.image_width},
              {"image_height", s.rig.image_height},
              {"stride", s.rig.stride},
              {"mount_height", s.rig.mount_height}}},
            {"feature_channels", s.feature_channels},
            {"feature_noise", s.feature_noise},
            {"splat_sigma", s.splat_sigma}};
}

namespace {

Range range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

SceneSpec spec_from_json(const json& j) {
    SceneSpec s;
    try {
        read_opt(j, "seed", s.seed);
        read_opt(j, "frames", s.frames);
        read_opt(j, "dt", s.dt);
        if (j.contains("objects")) {
            s.min_objects = j.at("objects").at(0).get<int>();
            s.max_objects = j.at("objects").at(1).get<int>();
        }
        if (j.contains("classes")) {
            s.classes.clear();
            for (const auto& c : j.at("classes")) {
                ClassPrior p;
                p.name = c.at("name").get<std::string>();
                p.length = c.at("size").at(0).get<double>();
                p.width = c.at("size").at(1).get<double>();
                p.height = c.at("size").at(2).get<double>();
                p.speed = range_from(c.at("speed"));
                s.classes.push_back(p);
            }
        }
        if (j.contains("spawn_radius")) s.spawn_radius = range_from(j.at("spawn_radius"));
        read_opt(j, "min_separation", s.min_separation);
        if (j.contains("ego_speed")) s.ego_speed = range_from(j.at("ego_speed"));
        if (j.contains("ego_yaw_rate")) s.ego_yaw_rate = range_from(j.at("ego_yaw_rate"));
        read_opt(j, "yaw_rate_period", s.yaw_rate_period);
        read_opt(j, "ground_z", s.ground_z);
        if (j.contains("rig")) {
            const json& r = j.at("rig");
            read_opt(r, "cameras", s.rig.cameras);
            read_opt(r, "spacing_deg", s.rig.spacing_deg);
            read_opt(r, "hfov_deg", s.rig.hfov_deg);
            read_opt(r, "image_width", s.rig.image_width);
            read_opt(r, "image_height", s.rig.image_height);
            read_opt(r, "stride", s.rig.stride);
            read_opt(r, "mount_height", s.rig.mount_height);
        }
        read_opt(j, "feature_channels", s.feature_channels);
        read_opt(j, "feature_noise", s.feature_noise);
        read_opt(j, "splat_sigma", s.splat_sigma);
    } catch (const json::exception& e) {
        throw ParseError(std::string("scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

void save_scene(const Scene& scene, const std::filesystem::path& dir, const std::string& stem) {
    json frames = json::array();
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        const FrameRecord& fr = scene.frames[f];
        json objects = json::array();
        for (const auto& o : fr.objects) {
            objects.push_back({{"cls", o.cls},
                               {"center", {o.center.x(), o.center.y(), o.center.z()}},
                               {"size", {o.size.x(), o.size.y(), o.size.z()}},
                               {"yaw", o.yaw},
                               {"velocity", {o.velocity.x, o.velocity.y}},
                               {"track_id", o.track_id}});
        }
        json sidecars = json::array();
        const ImageFeatureSet& feats = fr.features;
        for (std::size_t cam = 0; cam < feats.cameras(); ++cam) {
            const std::string name = stem + "_f" + std::to_string(f) + "_cam" + std::to_string(cam) + ".ocbt";
            write_ocbt(dir / name, nn::Tensor({feats.channels, feats.height, feats.width}, feats.maps[cam]));
            sidecars.push_back(name);
        }
        frames.push_back({{"timestamp", fr.timestamp},
                          {"ego_pose", {{"yaw", fr.ego_pose.yaw()}, {"x", fr.ego_pose.tx()}, {"y", fr.ego_pose.ty()}}},
                          {"objects", objects},
                          {"features", sidecars}});
    }
    json doc = {{"spec", spec_to_json(scene.spec)}, {"frames", frames}};
    write_file(dir / (stem + ".json"), doc.dump(1) + "\n");
}

Scene load_scene(const std::filesystem::path& json_path) {
    json doc;
    try {
        doc = json::parse(read_file(json_path));
    } catch (const json::parse_error& e) {
        throw ParseError("scene '" + json_path.string() + "': " + e.what());
    }
    Scene scene;
    scene.spec = spec_from_json(doc.at("spec"));
    const auto dir = json_path.parent_path();
    try {
        const json& frames = doc.at("frames");
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const json& jf = frames[f];
            FrameRecord fr;
            fr.timestamp = jf.at("timestamp").get<double>();
            const json& p = jf.at("ego_pose");
            fr.ego_pose = PlanarPose(p.at("yaw").get<double>(), p.at("x").get<double>(), p.at("y").get<double>());
            fr.prev_to_cur =
                f == 0 ? PlanarPose::identity() : compose(fr.ego_pose.inverse(), scene.frames[f - 1].ego_pose);
            for (const json& o : jf.at("objects")) {
                ObjectTruth t;
                t.cls = o.at("cls").get<int>();
                t.center = {o.at("center").at(0).get<double>(), o.at("center").at(1).get<double>(),
                            o.at("center").at(2).get<double>()};
                t.size = {o.at("size").at(0).get<double>(), o.at("size").at(1).get<double>(),
                          o.at("size").at(2).get<double>()};
                t.yaw = o.at("yaw").get<double>();
                t.velocity = {o.at("velocity").at(0).get<double>(), o.at("velocity").at(1).get<double>()};
                t.track_id = o.at("track_id").get<int>();
                if (t.cls < 0 || t.cls >= static_cast<int>(scene.spec.classes.size())) {
                    throw ParseError("scene '" + json_path.string() + "': frame " + std::to_string(f) +
                                     " has an unknown class id");
                }
                fr.objects.push_back(t);
            }
            const json& sidecars = jf.at("features");
            for (std::size_t cam = 0; cam < sidecars.size(); ++cam) {
                nn::Tensor t = read_ocbt(dir / sidecars[cam].get<std::string>());
                if (t.rank() != 3) throw ParseError("scene sidecar must be a rank-3 tensor");
                if (cam == 0) fr.features = ImageFeatureSet(sidecars.size(), t.dim(0), t.dim(1), t.dim(2));
                if (t.dim(0) != fr.features.channels || t.dim(1) != fr.features.height ||
                    t.dim(2) != fr.features.width) {
                    throw ParseError("scene sidecars disagree on feature shape");
                }
                fr.features.maps[cam] = t.storage();
            }
            scene.frames.push_back(std::move(fr));
        }
    } catch (const json::exception& e) {
        throw ParseError("scene '" + json_path.string() + "': " + e.what());
    }
    return scene;
}

}  // namespace ocbev
