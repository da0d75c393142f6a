#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/gradcheck.hpp"
#include "ocbev/losses.hpp"
#include "ocbev/ops.hpp"

using namespace ocbev;
using nn::Tensor;
using nn::Var;

namespace {

double brute_force_min(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
    std::vector<std::size_t> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    // Each permutation of rows assigns perm[g] to column g for g < cols.
    do {
        double s = 0;
        for (std::size_t g = 0; g < cols; ++g) s += cost[perm[g] * cols + g];
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST_CASE("centerness targets") {
    const BEVGrid g = BEVGrid::square(4, 2.0);
    const Vec2 on_center[] = {{-1.5, -1.5}};
    CHECK(centerness_target(g, on_center).values[0] == 1.0);
    const Vec2 off[] = {{-0.5, -1.5}};  // cell 0 center is 1 m away along x
    CHECK(centerness_target(g, off).values[0] == doctest::Approx(std::exp(-2.5)).epsilon(1e-15));
    const Vec2 mixed[] = {{-1.1, -1.8}};  // cell 0 offset (-0.4, 0.3)
    CHECK(centerness_target(g, mixed).values[0] == doctest::Approx(std::exp(-0.625)).epsilon(1e-15));
    CHECK(std::exp(-0.625) == doctest::Approx(0.5353).epsilon(1e-4));
    const auto empty = centerness_target(g, {});
    CHECK(std::all_of(empty.values.begin(), empty.values.end(), [](double v) { return v == 0.0; }));
    const Vec2 two[] = {{-1.5, -1.5}, {1.5, 1.5}};
    const auto both = centerness_target(g, two);
    CHECK(both.values[0] == 1.0);
    CHECK(both.values[15] == 1.0);
}

TEST_CASE("binary cross-entropy") {
    const Var half = Var::constant(Tensor({8, 1}, 0.5));
    CHECK(bce_loss(half, std::vector<double>(8, 0.0)).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const double e = 1e-7;
    const std::vector<double> t{e, 1 - e, e, 1 - e};
    const Var exact = Var::constant(Tensor({4, 1}, t));
    CHECK(bce_loss(exact, t).value()[0] < 2e-6);
    CHECK_THROWS_AS(bce_loss(half, std::vector<double>(7, 0.0)), Error);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(30), y(30);
        for (auto& v : p) v = u(rng);
        for (auto& v : y) v = u(rng);
        double s = 0;
        for (std::size_t i = 0; i < 30; ++i) s += -(y[i] * std::log(p[i]) + (1 - y[i]) * std::log(1 - p[i]));
        CHECK(bce_loss(Var::constant(Tensor({30, 1}, p)), y).value()[0] == doctest::Approx(s / 30).epsilon(1e-13));
    }
}

TEST_CASE("focal loss") {
    // One query, one class, positive at p = 0.5 (logit 0).
    const Var zero = Var::constant(Tensor({1, 1}, {0.0}));
    const int pos[] = {0};
    CHECK(focal_loss(zero, pos, 2.0, 0.25).value()[0] == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-14));
    CHECK(0.25 * 0.25 * std::log(2.0) == doctest::Approx(0.0433).epsilon(1e-3));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t N = 7, K = 3;
        Tensor logits({N, K});
        for (auto& v : logits.storage()) v = n(rng);
        std::vector<int> cls(N);
        std::size_t npos = 0;
        for (auto& c : cls) {
            c = std::uniform_int_distribution<int>(-1, 2)(rng);
            npos += c >= 0;
        }
        const double gamma = 1.5, alpha = 0.3;
        double s = 0, bce = 0;
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const double p = 1 / (1 + std::exp(-logits.at(i, k)));
                const bool y = cls[i] == static_cast<int>(k);
                s += y ? -alpha * std::pow(1 - p, gamma) * std::log(p) : -(1 - alpha) * std::pow(p, gamma) * std::log(1 - p);
                bce += y ? -std::log(p) : -std::log(1 - p);
            }
        const double norm = std::max<std::size_t>(1, npos);
        CHECK(focal_loss(Var::constant(logits), cls, gamma, alpha).value()[0] ==
              doctest::Approx(s / norm).epsilon(1e-12));
        CHECK(std::abs(focal_loss(Var::constant(logits), cls, 0.0, 0.5).value()[0] - 0.5 * bce / norm) <= 1e-9);
    }
}

TEST_CASE("l1 box loss") {
    const Tensor p({2, 10}, 0.3);
    const std::size_t rows[] = {1};
    const std::vector<std::vector<double>> same{std::vector<double>(10, 0.3)};
    CHECK(l1_box_loss(Var::constant(p), rows, same).value()[0] == 0.0);
    const std::vector<std::vector<double>> shifted{std::vector<double>(10, 0.4)};
    CHECK(l1_box_loss(Var::constant(p), rows, shifted).value()[0] == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(l1_box_loss(Var::constant(p), {}, {}).value()[0] == 0.0);
    std::vector<double> w(10, 1.0);
    w[0] = 3.0;
    CHECK(l1_box_loss(Var::constant(p), rows, shifted, w).value()[0] == doctest::Approx(0.12).epsilon(1e-14));
    CHECK_THROWS_AS(l1_box_loss(Var::constant(p), rows, {}), Error);
}

TEST_CASE("hungarian examples") {
    const double one[] = {4.0};
    const auto a = hungarian_assign(one, 1, 1);
    CHECK(a.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}});
    const double two[] = {1, 2, 2, 1};
    const auto b = hungarian_assign(two, 2, 2);
    CHECK(b.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
    CHECK(b.total_cost == 2.0);
    const double wide[] = {3, 1, 2, 5};
    const auto c = hungarian_assign(wide, 1, 4);
    CHECK(c.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}});
    CHECK(c.total_cost == 1.0);
    const double bad[] = {1, NAN, 2, 1};
    CHECK_THROWS_AS(hungarian_assign(bad, 2, 2), Error);
    CHECK(hungarian_assign({}, 3, 0).pairs.empty());
}

TEST_CASE("hungarian matches exhaustive search") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t cols = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
        const std::size_t rows = std::uniform_int_distribution<std::size_t>(cols, 7)(rng);
        std::vector<double> cost(rows * cols);
        // Integer costs make exact equality meaningful and force ties.
        for (auto& c : cost) c = std::uniform_int_distribution<int>(-5, 20)(rng);
        const auto a = hungarian_assign(cost, rows, cols);
        CHECK(a.total_cost == brute_force_min(cost, rows, cols));
        REQUIRE(a.pairs.size() == cols);
        double s = 0;
        std::vector<char> used(rows, 0), seen(cols, 0);
        for (auto [q, g] : a.pairs) {
            CHECK_FALSE(used[q]);
            CHECK_FALSE(seen[g]);
            used[q] = seen[g] = 1;
            s += cost[q * cols + g];
        }
        CHECK(s == a.total_cost);
    }
}

TEST_CASE("weighted totals") {
    const auto unit = total_loss(1, 1, 1);
    CHECK(unit.total == 3.5);
    CHECK(total_loss(0, 0, 0).total == 0.0);
    CHECK(total_loss(0.5, 0.2, 0.4).total == doctest::Approx(1.1).epsilon(1e-15));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 3);
    for (int i = 0; i < 100; ++i) {
        const double a = u(rng), b = u(rng), c = u(rng);
        const auto r = total_loss(a, b, c);
        CHECK(r.total == r.weights.centerness * a + r.weights.classification * b + r.weights.box * c);
        const Var v = weighted_total(Var::constant(Tensor::scalar(a)), Var::constant(Tensor::scalar(b)),
                                     Var::constant(Tensor::scalar(c)));
        CHECK(v.value()[0] == r.total);
    }
    CHECK(weighted_total(Var(), Var::constant(Tensor::scalar(1.0)), Var()).value()[0] == 2.0);
}

TEST_CASE("matching cost prefers the right class and the nearer box") {
    const Tensor probs({2, 2}, {0.9, 0.1, 0.1, 0.9});
    const Tensor boxes({2, 3}, {0, 0, 0, 1, 1, 1});
    const int cls[] = {1};
    const std::vector<std::vector<double>> gt{{1, 1, 1}};
    const auto c = matching_cost(probs, boxes, cls, gt);
    CHECK(c[1] < c[0]);
    const int cls0[] = {0};
    const auto d = matching_cost(probs, boxes, cls0, gt, {1, 2, 0});  // box weight 0
    CHECK(d[0] < d[1]);
}

TEST_CASE("loss gradients") {
    for (const char* op : {"bce_loss", "focal_loss", "l1_box_loss", "weighted_total"}) {
        const auto r = run_gradcheck(op, 5);
        CHECK_MESSAGE(r.pass, op << " " << r.worst << " " << r.max_rel_error);
    }
}
