#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/gradcheck.hpp"
#include "ocbev/ops.hpp"
#include "ocbev/spatial_sampling.hpp"

using namespace ocbev;

namespace {

CameraModel forward_camera(double yaw, double fx = 100.0) {
    return CameraModel::looking_along(yaw, Eigen::Vector3d(0, 0, 0), fx, fx, 64.0, 32.0, 128, 64);
}

}  // namespace

TEST_CASE("pillar heights") {
    CHECK(pillar_heights({-5, 3}, 4) == std::vector<double>{-4, -2, 0, 2});
    CHECK(pillar_heights({-2, 2}, 1) == std::vector<double>{0});
    const auto shifted = pillar_heights(HeightRange(-2, 2).shifted(0.5), 4);
    const std::vector<double> expect{-1, 0, 1, 2};
    for (std::size_t k = 0; k < 4; ++k) CHECK(shifted[k] == doctest::Approx(expect[k]).epsilon(1e-15));
    CHECK_THROWS_AS(pillar_heights({-2, 2}, 0), Error);

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int i = 0; i < 100; ++i) {
        const double dh = d(rng);
        const auto base = pillar_heights(SamplingDefaults::local_range(), 4);
        const auto moved = pillar_heights(SamplingDefaults::local_range().shifted(dh), 4);
        for (std::size_t k = 0; k < 4; ++k) CHECK(moved[k] - base[k] == doctest::Approx(dh).epsilon(1e-12));
    }
}

TEST_CASE("reference points for one forward camera") {
    const CameraModel cam = forward_camera(0.0);
    // 3x3 grid on [9,12]x[-1.5,1.5]: the middle cell sits on the optical axis.
    const BEVGrid g(3, 3, 9.0, 12.0, -1.5, 1.5);
    const auto refs = build_reference_points(g, std::span(&cam, 1), {-1, 1}, 1);
    REQUIRE(refs.complete());
    const auto hits = refs.hits(4, 0);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].uv.x == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(hits[0].uv.y == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(refs.hit_begin(4, 0) < refs.total_hits());

    const BEVGrid behind(2, 2, -12.0, -8.0, -2.0, 2.0);
    const auto none = build_reference_points(behind, std::span(&cam, 1), {-5, 3}, 4);
    for (std::size_t c = 0; c < behind.cell_count(); ++c) CHECK(none.hit_count(c) == 0);
    CHECK_THROWS_AS(build_reference_points(g, std::span<const CameraModel>{}, {-1, 1}, 1), Error);
}

TEST_CASE("six-camera rig visibility follows per-camera frustums") {
    std::vector<CameraModel> cams;
    for (int k = 0; k < 6; ++k) cams.push_back(forward_camera(k * std::numbers::pi / 3));
    // Horizontal half field of view: atan(64 / 100) ~ 32.6 degrees.
    const double half_fov = std::atan(64.0 / 100.0);
    const double bearing = std::numbers::pi / 6;
    const double r = 15.0;
    const BEVGrid g(1, 1, r * std::cos(bearing) - 0.1, r * std::cos(bearing) + 0.1, r * std::sin(bearing) - 0.1,
                    r * std::sin(bearing) + 0.1);
    const auto refs = build_reference_points(g, cams, {-0.5, 0.5}, 1);
    std::set<std::uint32_t> seen;
    for (const auto& h : refs.hits(0, 0)) seen.insert(h.camera);
    std::set<std::uint32_t> oracle;
    for (std::uint32_t k = 0; k < 6; ++k) {
        const double rel = wrap_angle(bearing - k * std::numbers::pi / 3);
        if (std::abs(rel) < half_fov) oracle.insert(k);
    }
    CHECK(seen == oracle);
    CHECK(oracle == std::set<std::uint32_t>{0, 1});
}

TEST_CASE("height offset head") {
    nn::ParameterStore store;
    HeightOffsetHead head(store, "dh", 3);
    const nn::Var bev = nn::Var::constant(nn::normal_tensor({5, 3}, 1.0, 2));
    CHECK(head.forward(store, bev).value()[0] == 0.0);

    store.assign("dh.b", nn::Tensor({1}, {1e6}));
    CHECK(head.forward(store, bev).value()[0] == doctest::Approx(1.0).epsilon(1e-15));

    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    for (int t = 0; t < 20; ++t) {
        const nn::Tensor w = nn::normal_tensor({3, 1}, 1.0, 100 + t), b({1}, {n(rng)});
        store.assign("dh.w", w);
        store.assign("dh.b", b);
        double s = b[0];
        for (std::size_t c = 0; c < 3; ++c) {
            double mean = 0;
            for (std::size_t k = 0; k < 5; ++k) mean += bev.value().at(k, c) / 5;
            s += w[c] * mean;
        }
        CHECK(head.forward(store, bev).value()[0] == doctest::Approx(std::tanh(s)).epsilon(1e-13));
    }
}

TEST_CASE("reference locations carry the z derivative to the height offset") {
    const CameraModel cam = forward_camera(0.0);
    const BEVGrid g(2, 2, 8.0, 12.0, -2.0, 2.0);
    const auto refs = build_reference_points(g, std::span(&cam, 1), {-1, 1}, 2);
    const nn::Var base = reference_locations(refs);
    CHECK(base.shape() == nn::Shape{refs.total_hits(), 2});
    const nn::Var dh = nn::Var::leaf(nn::Tensor({1, 1}, {0.3}));
    const nn::Var locs = reference_locations(refs, &dh);
    CHECK(locs.value() == base.value());
    nn::backward(nn::sum_all(locs));
    double expect = 0;
    for (std::size_t c = 0; c < g.cell_count(); ++c)
        for (std::size_t k = 0; k < 2; ++k)
            for (const auto& h : refs.hits(c, k)) expect += h.duv_dz.x + h.duv_dz.y;
    REQUIRE(dh.grad().size() == 1);
    CHECK(dh.grad()[0] == doctest::Approx(expect).epsilon(1e-12));

    // Rebuilding at the shifted range matches the first-order prediction.
    const auto shifted = build_reference_points(g, std::span(&cam, 1), HeightRange(-1, 1).shifted(1e-5), 2);
    REQUIRE(shifted.total_hits() == refs.total_hits());
    const nn::Var moved = reference_locations(shifted);
    std::size_t r = 0;
    for (std::size_t c = 0; c < g.cell_count(); ++c)
        for (std::size_t k = 0; k < 2; ++k)
            for (const auto& h : refs.hits(c, k)) {
                const double fd = (moved.value().at(r, 1) - base.value().at(r, 1)) / 1e-5;
                CHECK(fd == doctest::Approx(h.duv_dz.y).epsilon(1e-4));
                ++r;
            }
}

TEST_CASE("sampling gradients") {
    for (const char* op : {"height_offset_head", "reference_locations"}) {
        const auto r = run_gradcheck(op, 10);
        CHECK_MESSAGE(r.pass, op << " " << r.worst << " " << r.max_rel_error);
    }
}
