#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "ocbev/eval.hpp"

using namespace ocbev;

namespace {

DetectionBox box(double x, double y, double score = 1.0, int cls = 0) {
    DetectionBox b;
    b.x = x;
    b.y = y;
    b.score = score;
    b.cls = cls;
    return b;
}

}  // namespace

TEST_CASE("greedy center-distance matching") {
    const std::vector<DetectionBox> gt{box(1, 1)};
    CHECK(match_by_center_distance(std::vector{box(1, 1)}, gt, 2.0).pairs.size() == 1);
    const auto far = match_by_center_distance(std::vector{box(4, 1)}, gt, 2.0);
    CHECK(far.pairs.empty());
    CHECK(far.unmatched_predictions == std::vector<std::size_t>{0});
    CHECK(far.unmatched_truths == std::vector<std::size_t>{0});

    const std::vector<DetectionBox> preds{box(1.5, 1, 0.8), box(1.2, 1, 0.9)};
    const auto two = match_by_center_distance(preds, gt, 2.0);
    REQUIRE(two.pairs.size() == 1);
    CHECK(two.pairs[0] == std::pair<std::size_t, std::size_t>{1, 0});
    CHECK(two.unmatched_predictions == std::vector<std::size_t>{0});

    CHECK(match_by_center_distance(std::vector{box(1, 1, 1.0, 1)}, gt, 2.0).pairs.empty());
    CHECK(match_by_center_distance(std::vector{box(3, 1)}, gt, 2.0).pairs.size() == 1);  // boundary counts
}

TEST_CASE("average precision") {
    const std::vector<DetectionBox> gt{box(0, 0), box(5, 5)};
    CHECK(average_precision(gt, gt, 1.0) == 1.0);
    CHECK(average_precision({}, gt, 1.0) == 0.0);
    CHECK(average_precision(gt, {}, 1.0) == 0.0);
    const std::vector<DetectionBox> one{box(0, 0)};
    CHECK(average_precision(std::vector{box(0, 0, 0.9), box(9, 9, 0.8)}, one, 1.0) == 1.0);
    // False positive first: precision 1/2 at full recall.
    CHECK(average_precision(std::vector{box(9, 9, 0.9), box(0, 0, 0.8)}, one, 1.0) == 0.5);
    // Half recall at precision 1, the other truth never found.
    CHECK(average_precision(std::vector{box(0, 0, 0.9)}, gt, 1.0) == 0.5);
}

TEST_CASE("error metrics") {
    DetectionBox g = box(1, 2);
    g.yaw = 0.3;
    g.vx = 1;
    const std::vector<DetectionBox> gts{g};
    const std::pair<std::size_t, std::size_t> m[] = {{0, 0}};
    const auto same = error_metrics(gts, gts, m);
    CHECK(same.ate == 0.0);
    CHECK(same.aoe == 0.0);
    CHECK(same.ave == 0.0);
    CHECK(same.count == 1);

    DetectionBox p = g;
    p.yaw = g.yaw + 1.5 * std::numbers::pi;
    p.vx = 0;
    p.vy = 1;
    p.x += 3;
    p.y += 4;
    const auto e = error_metrics(std::vector{p}, gts, m);
    CHECK(e.ate == 5.0);
    CHECK(e.aoe == doctest::Approx(std::numbers::pi / 2).epsilon(1e-14));
    CHECK(e.ave == std::sqrt(2.0));
    const auto none = error_metrics(gts, gts, {});
    CHECK(std::isnan(none.ate));
    CHECK(none.count == 0);
    CHECK(yaw_difference(0.1, 2 * std::numbers::pi + 0.1) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(yaw_difference(-3.0, 3.0) == doctest::Approx(2 * std::numbers::pi - 6.0));
}

TEST_CASE("metrics are invariant under a shared rigid motion") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-10, 10), a(-3, 3);
    for (int t = 0; t < 50; ++t) {
        std::vector<DetectionBox> preds, gts;
        for (int i = 0; i < 5; ++i) {
            DetectionBox g = box(u(rng), u(rng));
            g.yaw = a(rng);
            g.vx = a(rng);
            g.vy = a(rng);
            gts.push_back(g);
            DetectionBox p = g;
            p.x += 0.3 * a(rng);
            p.y += 0.3 * a(rng);
            p.yaw += 0.5 * a(rng);
            p.vx += a(rng);
            p.score = 0.1 + 0.1 * i;
            preds.push_back(p);
        }
        const double th = a(rng), tx = u(rng), ty = u(rng);
        const double c = std::cos(th), s = std::sin(th);
        auto move = [&](std::vector<DetectionBox> v) {
            for (auto& b : v) {
                const double x = c * b.x - s * b.y + tx, y = s * b.x + c * b.y + ty;
                const double vx = c * b.vx - s * b.vy, vy = s * b.vx + c * b.vy;
                b.x = x;
                b.y = y;
                b.vx = vx;
                b.vy = vy;
                b.yaw += th;
            }
            return v;
        };
        const auto m0 = match_by_center_distance(preds, gts, 2.0);
        const auto e0 = error_metrics(preds, gts, m0.pairs);
        const auto mp = move(preds), mg = move(gts);
        const auto m1 = match_by_center_distance(mp, mg, 2.0);
        CHECK(m1.pairs == m0.pairs);
        const auto e1 = error_metrics(mp, mg, m1.pairs);
        if (e0.count == 0) continue;
        CHECK(e1.ate == doctest::Approx(e0.ate).epsilon(1e-12));
        CHECK(e1.aoe == doctest::Approx(e0.aoe).epsilon(1e-12));
        CHECK(e1.ave == doctest::Approx(e0.ave).epsilon(1e-12));
    }
}

TEST_CASE("evaluation report") {
    std::vector<std::vector<DetectionBox>> gts(2), preds(2);
    gts[0] = {box(0, 0, 1, 0), box(3, 3, 1, 1)};
    gts[1] = {box(-2, 1, 1, 0)};
    DetectionBox fast = box(-2, 1, 1, 0);
    fast.vx = 8;
    gts[1][0] = fast;
    preds = gts;
    preds[1][0].vx = 6;
    const MetricReport r = evaluate(preds, gts);
    CHECK(r.mean_ap == 1.0);
    CHECK(std::isnan(r.ap[2][0]));
    CHECK(r.errors.count == 3);
    CHECK(r.fast_errors.count == 1);
    CHECK(r.fast_errors.ave == 2.0);
    CHECK(r.truths == 3);
    const MetricReport empty = evaluate({{}, {}}, gts);
    CHECK(empty.mean_ap == 0.0);
    const auto j = report_to_json(r);
    for (const char* key : {"mean_ap", "ap", "errors", "fast_errors", "predictions", "truths"}) CHECK(j.contains(key));
    CHECK(report_to_text(r).find("mAP") != std::string::npos);
}
