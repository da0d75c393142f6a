#include <cmath>
#include <numbers>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/ingest.hpp"

using namespace ocbev;

namespace {

PoseRecord pose(std::int64_t t_us, double x, double y, double yaw) {
    PoseRecord p;
    p.token = "p" + std::to_string(t_us);
    p.timestamp = t_us;
    p.translation = {x, y, 0.0};
    p.rotation = {std::cos(yaw / 2), 0, 0, std::sin(yaw / 2)};
    return p;
}

}  // namespace

TEST_CASE("quaternion yaw") {
    CHECK(Quaternion{}.yaw() == 0.0);
    CHECK(Quaternion{0.7071, 0, 0, 0.7071}.yaw() == doctest::Approx(std::numbers::pi / 2).epsilon(1e-4));
    CHECK(Quaternion{std::sqrt(0.5), 0, 0, std::sqrt(0.5)}.yaw() == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    CHECK_FALSE(Quaternion{0.7071, 0, 0, 0.7071}.tilted(1e-3));
    CHECK(Quaternion{std::cos(0.1), std::sin(0.1), 0, 0}.tilted());
}

TEST_CASE("metadata parsing") {
    const std::string ok = R"({"ego_pose": [
        {"token": "a", "timestamp": 0, "translation": [1, 2, 0], "rotation": [1, 0, 0, 0]},
        {"token": "b", "timestamp": 500000, "translation": [2, 2, 0], "rotation": [2, 0, 0, 0]}],
      "calibrated_sensor": [{"token": "c", "channel": "CAM_FRONT", "translation": [0, 0, 1.5],
        "rotation": [1, 0, 0, 0], "camera_intrinsic": [[500, 0, 320], [0, 500, 240], [0, 0, 1]]}]})";
    const Metadata m = parse_metadata(ok);
    REQUIRE(m.poses.size() == 2);
    CHECK(m.poses[1].rotation == Quaternion{1, 0, 0, 0});  // normalized
    REQUIRE(m.calibrations.size() == 1);
    CHECK((*m.calibrations[0].intrinsic)[2] == 320.0);
    CHECK(parse_metadata(metadata_to_json(m).dump()).poses == m.poses);

    auto message = [](const std::string& text) {
        try {
            parse_metadata(text);
        } catch (const ParseError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message(R"({"ego_pose": [{"token": "a", "timestamp": 0, "rotation": [1,0,0,0]}]})")
              .find("ego_pose[0].translation") != std::string::npos);
    CHECK(message("{not json").find("malformed") != std::string::npos);
    CHECK(message(R"({"ego_pose": [{"token": "a", "timestamp": 0, "translation": [1, 2], "rotation": [1,0,0,0]}]})")
              .find("ego_pose[0].translation") != std::string::npos);
    CHECK(message(R"({"ego_pose": [{"token": "a", "timestamp": 0, "translation": [1, 2, 3], "rotation": [0,0,0,0]}]})")
              .find("ego_pose[0].rotation") != std::string::npos);
    CHECK(message(R"({"poses": []})").find("ego_pose") != std::string::npos);
}

TEST_CASE("queue examples") {
    {
        const std::vector<PoseRecord> same(4, pose(0, 3, 4, 0.7));
        std::vector<PoseRecord> rs = same;
        for (int k = 0; k < 4; ++k) rs[k].timestamp = k * 500000;
        const auto q = build_sequence_queue(rs);
        for (const auto& s : q.samples) {
            CHECK(s.position == Vec2{0, 0});
            CHECK(s.yaw == 0.0);
        }
        for (const auto& r : q.relative) {
            CHECK(r.yaw() == 0.0);
            CHECK(r.tx() == 0.0);
            CHECK(r.ty() == 0.0);
        }
    }
    {
        std::vector<PoseRecord> rs;
        for (int k = 0; k < 4; ++k) rs.push_back(pose(k * 500000, 10.0 + k, -2.0, 0.0));
        const auto q = build_sequence_queue(rs);
        for (int k = 0; k < 4; ++k) CHECK(q.samples[k].position == Vec2{static_cast<double>(k), 0.0});
        CHECK(q.samples[3].timestamp == 1.5);
        for (const auto& r : q.relative) {
            CHECK(r.tx() == doctest::Approx(-1.0).epsilon(1e-15));
            CHECK(r.ty() == doctest::Approx(0.0));
        }
    }
    {
        std::vector<PoseRecord> rs;
        for (int k = 0; k < 4; ++k) rs.push_back(pose(k * 500000, 5.0, 1.0 + 2.0 * k, std::numbers::pi / 2));
        const auto q = build_sequence_queue(rs);
        for (int k = 0; k < 4; ++k) {
            CHECK(q.samples[k].position.x == doctest::Approx(2.0 * k).epsilon(1e-12));
            CHECK(std::abs(q.samples[k].position.y) < 1e-12);
        }
    }
}

TEST_CASE("queue edge cases") {
    std::vector<PoseRecord> rs{pose(0, 0, 0, 0), pose(500000, 1, 0, 0)};
    const auto q = build_sequence_queue(rs);
    CHECK(q.short_queue);
    CHECK(q.samples.size() == 2);
    CHECK_FALSE(q.warnings.empty());
    rs[1].timestamp = 0;
    CHECK_THROWS_AS(build_sequence_queue(rs), Error);
    CHECK_THROWS_AS(build_sequence_queue({}), Error);
    std::vector<PoseRecord> tilted{pose(0, 0, 0, 0), pose(1, 1, 0, 0)};
    tilted[1].rotation = {std::cos(0.05), std::sin(0.05), 0, 0};
    const auto t = build_sequence_queue(tilted, {.queue_length = 2});
    CHECK(std::find(t.warnings.begin(), t.warnings.end(), "roll/pitch discarded") != t.warnings.end());
}

TEST_CASE("relative poses compose to the final zero-based pose") {
    std::vector<PoseRecord> rs;
    for (int k = 0; k < 6; ++k) rs.push_back(pose(k * 100000, 3 * std::cos(0.4 * k), 3 * std::sin(0.4 * k), 0.4 * k + 1.0));
    for (bool rotate : {true, false}) {
        const auto q = build_sequence_queue(rs, {.queue_length = 6, .rotate_to_first = rotate});
        const PlanarPose last = q.compose_relative();
        CHECK(wrap_angle(last.yaw() - q.samples.back().yaw) == doctest::Approx(0.0).epsilon(1e-12));
        if (rotate) {
            CHECK(std::abs(last.tx() - q.samples.back().position.x) < 1e-9);
            CHECK(std::abs(last.ty() - q.samples.back().position.y) < 1e-9);
        }
    }
    const auto scene = queue_to_scene_json(build_sequence_queue(rs, {.queue_length = 6}));
    CHECK(scene["frames"].size() == 6);
}
