#include <cmath>
#include <random>

#include "doctest.h"
#include "ocbev/error.hpp"
#include "ocbev/ops.hpp"
#include "ocbev/parameters.hpp"
#include "ocbev/query_enhancement.hpp"

using namespace ocbev;

namespace {

// Window maxima with the lower-flat-index tie rule and at least one lower
// neighbour, scanned by brute force.
std::vector<Peak> oracle_peaks(const Heatmap& h, const EnhancementConfig& cfg) {
    const BEVGrid& g = h.grid();
    const int r = cfg.window / 2;
    std::vector<Peak> out;
    for (int y = 0; y < g.rows(); ++y)
        for (int x = 0; x < g.cols(); ++x) {
            const std::size_t k = static_cast<std::size_t>(y) * g.cols() + x;
            const double s = h.at(k);
            if (s < cfg.min_score) continue;
            bool peak = true, lower = false;
            for (int dy = -r; dy <= r && peak; ++dy)
                for (int dx = -r; dx <= r && peak; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if ((dy == 0 && dx == 0) || yy < 0 || xx < 0 || yy >= g.rows() || xx >= g.cols()) continue;
                    const std::size_t n = static_cast<std::size_t>(yy) * g.cols() + xx;
                    if (h.at(n) > s || (h.at(n) == s && n < k)) peak = false;
                    if (h.at(n) < s) lower = true;
                }
            if (peak && lower) out.push_back({k, s});
        }
    std::stable_sort(out.begin(), out.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
    if (out.size() > cfg.replace_count) out.resize(cfg.replace_count);
    return out;
}

QuerySet base_set(std::size_t n, std::size_t c) {
    QuerySet q;
    q.content = nn::Var::constant(nn::normal_tensor({n, c}, 1.0, 1));
    q.positional = nn::Var::constant(nn::normal_tensor({n, c}, 1.0, 2));
    nn::Tensor ref({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        ref.at(i, 0) = (i + 0.5) / n;
        ref.at(i, 1) = 0.25;
    }
    q.reference = nn::Var::constant(ref);
    return q;
}

}  // namespace

TEST_CASE("peak selection examples") {
    const BEVGrid g = BEVGrid::square(10, 5.0);
    EnhancementConfig cfg;
    CHECK(select_peaks(Heatmap(g, std::vector<double>(100, 0.4)), cfg).empty());
    cfg.min_score = 0.5;

    std::vector<double> spike(100, 0.0);
    spike[37] = 0.8;
    CHECK(select_peaks(Heatmap(g, spike), cfg) == std::vector<Peak>{{37, 0.8}});

    std::vector<double> two(100, 0.0);
    auto blob = [&](int cy, int cx, double a) {
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) {
                const double v = a * std::exp(-0.8 * ((y - cy) * (y - cy) + (x - cx) * (x - cx)));
                two[y * 10 + x] = std::max(two[y * 10 + x], v);
            }
    };
    blob(2, 2, 0.7);
    blob(7, 6, 0.9);
    const auto peaks = select_peaks(Heatmap(g, two), cfg);
    REQUIRE(peaks.size() == 2);
    CHECK(peaks[0] == Peak{76, 0.9});
    CHECK(peaks[1] == Peak{22, 0.7});
    CHECK(peaks == oracle_peaks(Heatmap(g, two), cfg));

    cfg.window = 4;
    CHECK_THROWS_AS(select_peaks(Heatmap(g, two), cfg), Error);
    CHECK_THROWS_AS(Heatmap(g, std::vector<double>(100, 1.5)), Error);
    CHECK_THROWS_AS(Heatmap(g, std::vector<double>(99, 0.5)), Error);
}

TEST_CASE("peak selection matches the window scan on random maps") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 100; ++t) {
        const int n = std::uniform_int_distribution<int>(3, 20)(rng);
        const BEVGrid g = BEVGrid::square(n, 10.0);
        std::vector<double> s(g.cell_count());
        for (auto& v : s) v = std::round(u(rng) * 8) / 8;  // coarse levels force ties
        EnhancementConfig cfg;
        cfg.window = t % 2 ? 3 : 5;
        cfg.replace_count = 1 + t % 12;
        const Heatmap h(g, s);
        CHECK(select_peaks(h, cfg) == oracle_peaks(h, cfg));
    }
}

TEST_CASE("query enhancement") {
    const BEVGrid g = BEVGrid::square(10, 5.0);
    const QuerySet base = base_set(4, 3);
    nn::Tensor w({2, 3}, {1, 2, 3, -1, 0, 1}), b({3}, {0.5, 0.5, 0.5});
    const nn::Var pw = nn::Var::constant(w), pb = nn::Var::constant(b);

    const QuerySet same = enhance_queries(base, {}, g, pw, pb);
    CHECK(same.content.value() == base.content.value());
    CHECK(same.positional.value() == base.positional.value());
    CHECK(same.reference.value() == base.reference.value());

    const Peak center{55, 0.9};  // cell (5,5), center (0.5, 0.5) m, normalized 0.55
    const QuerySet one = enhance_queries(base, std::span(&center, 1), g, pw, pb);
    CHECK(one.reference.value().at(0, 0) == doctest::Approx(0.55).epsilon(1e-14));
    CHECK(one.reference.value().at(0, 1) == doctest::Approx(0.55).epsilon(1e-14));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(one.positional.value().at(0, c) == doctest::Approx(0.55 * w.at(0, c) + 0.55 * w.at(1, c) + 0.5));
        CHECK(one.positional.value().at(1, c) == base.positional.value().at(1, c));
    }
    CHECK(one.content.value() == base.content.value());

    const std::vector<Peak> four{{0, 0.9}, {9, 0.8}, {90, 0.7}, {99, 0.6}};
    const QuerySet all = enhance_queries(base, four, g, pw, pb);
    CHECK(all.content.value() == base.content.value());
    for (std::size_t i = 0; i < 4; ++i) CHECK(all.reference.value().at(i, 0) != base.reference.value().at(i, 0));
    all.validate();

    const std::vector<Peak> five(5, Peak{1, 0.5});
    CHECK_THROWS_AS(enhance_queries(base, five, g, pw, pb), Error);

    // Content from the BEV reads the peak cell's feature.
    const nn::Var bev = nn::Var::constant(nn::normal_tensor({100, 3}, 1.0, 9));
    const QuerySet with_bev = enhance_queries(base, std::span(&center, 1), g, pw, pb, &bev);
    for (std::size_t c = 0; c < 3; ++c) CHECK(with_bev.content.value().at(0, c) == bev.value().at(55, c));
}

TEST_CASE("replace rows") {
    const nn::Var base = nn::Var::leaf(nn::Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
    const nn::Var rep = nn::Var::leaf(nn::Tensor({1, 2}, {9, 9}));
    const std::size_t rows[] = {1};
    const nn::Var out = replace_rows(base, rows, rep);
    CHECK(out.value().storage() == std::vector<double>{1, 2, 9, 9, 5, 6});
    nn::backward(nn::sum_all(out));
    CHECK(std::vector<double>(base.grad().begin(), base.grad().end()) == std::vector<double>{1, 1, 0, 0, 1, 1});
    CHECK(std::vector<double>(rep.grad().begin(), rep.grad().end()) == std::vector<double>{1, 1});
    const std::size_t dup[] = {0, 0};
    CHECK_THROWS_AS(replace_rows(base, dup, nn::Var::constant(nn::Tensor({2, 2}))), Error);

    QuerySet bad = base_set(2, 2);
    bad.reference.mutable_value()[0] = 1.0;
    CHECK_THROWS_AS(bad.validate(), Error);
}
