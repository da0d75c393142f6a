#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/geometry.hpp"

using namespace ocbev;

TEST_CASE("coord_to_index on small and large grids") {
    const BEVGrid g = BEVGrid::square(4, 2.0);
    CHECK(g.coord_to_index({-1.9, -1.9}) == 0u);
    CHECK_FALSE(g.coord_to_index({2.0, 0.0}).has_value());
    CHECK_FALSE(g.coord_to_index({0.0, 2.0}).has_value());
    CHECK(g.coord_to_index({-2.0, -2.0}) == 0u);

    const BEVGrid big = BEVGrid::square(300, 51.2);
    // col = floor((0 + 51.2) / (102.4 / 300)) = 150
    CHECK(big.coord_to_index({0.0, 0.0}) == 45150u);
}

TEST_CASE("index_to_coord returns cell centers") {
    const BEVGrid g = BEVGrid::square(4, 2.0);
    CHECK(g.index_to_coord(0) == Vec2{-1.5, -1.5});
    CHECK(g.index_to_coord(15) == Vec2{1.5, 1.5});
    const BEVGrid unit(2, 2, 0.0, 2.0, 0.0, 2.0);
    CHECK(unit.index_to_coord(1) == Vec2{1.5, 0.5});
    CHECK_THROWS_AS(g.index_to_coord(16), Error);
}

TEST_CASE("grid round trip on every index") {
    for (int n : {1, 3, 17, 64, 300, 512}) {
        const BEVGrid g = BEVGrid::square(n, 0.4 * n);
        for (std::size_t k = 0; k < g.cell_count(); k += (n > 64 ? 97 : 1)) {
            REQUIRE(g.coord_to_index(g.index_to_coord(k)) == k);
        }
    }
    const BEVGrid rect(3, 5, -5.0, 5.0, 0.0, 6.0);
    for (std::size_t k = 0; k < rect.cell_count(); ++k) CHECK(rect.coord_to_index(rect.index_to_coord(k)) == k);
}

TEST_CASE("non-square cells are rejected") {
    CHECK_THROWS_AS(BEVGrid(4, 4, 0.0, 4.0, 0.0, 8.0), Error);
    CHECK_THROWS_AS(BEVGrid(0, 4, 0.0, 4.0, 0.0, 0.0), Error);
}

TEST_CASE("apply_planar examples") {
    CHECK(apply_planar(PlanarPose::identity(), {3, 4}) == Vec2{3, 4});
    const Vec2 q = apply_planar(PlanarPose(std::numbers::pi / 2, 0, 0), {1, 0});
    CHECK(q.x == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(q.y == doctest::Approx(1.0));
    const Vec2 fwd = apply_planar(PlanarPose(0, -1, 0), {1.5, 0});
    CHECK(fwd == Vec2{0.5, 0.0});
}

TEST_CASE("pose inverse and composition") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi), t(-50, 50);
    for (int i = 0; i < 1000; ++i) {
        const PlanarPose p(ang(rng), t(rng), t(rng));
        const Vec2 x{t(rng), t(rng)}, y{t(rng), t(rng)};
        const Vec2 back = p.inverse().apply(p.apply(x));
        CHECK(std::abs(back.x - x.x) < 1e-9);
        CHECK(std::abs(back.y - x.y) < 1e-9);
        const PlanarPose id = compose(p, p.inverse());
        CHECK(std::abs(wrap_angle(id.yaw())) < 1e-9);
        CHECK(std::abs(id.tx()) < 1e-9);
        CHECK(std::abs(id.ty()) < 1e-9);
        CHECK(std::abs(norm(p.apply(x) - p.apply(y)) - norm(x - y)) < 1e-9);
        const PlanarPose q(ang(rng), t(rng), t(rng));
        const Vec2 a = compose(p, q).apply(x), b = p.apply(q.apply(x));
        CHECK(std::abs(a.x - b.x) < 1e-9);
        CHECK(std::abs(a.y - b.y) < 1e-9);
    }
}

TEST_CASE("wrap_angle range") {
    CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("pinhole projection") {
    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    const CameraModel cam(500, 500, 320, 240, 640, 480, I, Eigen::Vector3d::Zero());
    auto p = cam.project({1, 0.5, 10});
    REQUIRE(p);
    CHECK(p->pixel == Vec2{370, 265});
    CHECK(p->depth == 10);
    CHECK_FALSE(cam.project({0, 0, -5}));
    CHECK_FALSE(cam.project({0, 0, 0.5e-4}));
    CHECK_FALSE(cam.project({100, 0, 1}));

    const CameraModel front = CameraModel::looking_along(0.0, Eigen::Vector3d::Zero(), 500, 500, 320, 240, 640, 480);
    for (double d : {0.5, 10.0, 123.0}) {
        auto q = front.project({d, 0, 0});
        REQUIRE(q);
        CHECK(std::abs(q->pixel.x - 320) < 1e-9);
        CHECK(std::abs(q->pixel.y - 240) < 1e-9);
        CHECK(q->depth == doctest::Approx(d));
    }
    // Ego +y (left) lands left of the principal point, ego +z above it.
    CHECK(front.project({10, 1, 0})->pixel.x < 320);
    CHECK(front.project({10, 0, 1})->pixel.y < 240);
    const auto near = front.project({5, 1, 0.5}), far = front.project({10, 2, 1});
    CHECK(near->depth < far->depth);
    CHECK(std::abs(front.rotation().determinant() - 1.0) < 1e-6);
}

TEST_CASE("camera rejects non-orthonormal rotations") {
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    r(0, 0) = 2.0;
    CHECK_THROWS_AS(CameraModel(500, 500, 320, 240, 640, 480, r, Eigen::Vector3d::Zero()), Error);
}

TEST_CASE("height range validity") {
    CHECK_THROWS_AS(HeightRange(1.0, 1.0), Error);
    const HeightRange r(-2, 2);
    CHECK(r.shifted(0.5).z_min == 1.5 - 3.0);
    CHECK(r.span() == 4.0);
}
