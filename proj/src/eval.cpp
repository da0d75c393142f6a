#include "ocbev/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <tuple>

#include "ocbev/error.hpp"

namespace ocbev {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

auto box_key(const DetectionBox& b) {
    return std::make_tuple(-b.score, b.cls, b.x, b.y, b.z, b.l, b.w, b.h, b.yaw, b.vx, b.vy);
}

std::vector<std::size_t> score_order(std::span<const DetectionBox> preds) {
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return box_key(preds[a]) < box_key(preds[b]); });
    return order;
}

struct Scored {
    double score;
    bool tp;
    DetectionBox box;
};

double ap_from_scored(std::vector<Scored> s, std::size_t truths) {
    if (truths == 0) return 0.0;
    std::stable_sort(s.begin(), s.end(), [](const Scored& a, const Scored& b) { return box_key(a.box) < box_key(b.box); });
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        tp += s[i].tp;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(truths));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

}  // namespace

MatchResult match_by_center_distance(std::span<const DetectionBox> preds, std::span<const DetectionBox> gts,
                                     double threshold) {
    MatchResult r;
    std::vector<char> taken(gts.size(), 0);
    for (std::size_t p : score_order(preds)) {
        std::size_t best = gts.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].cls != preds[p].cls) continue;
            const double d = norm(preds[p].center() - gts[g].center());
            if (d <= threshold && d < best_d) {
                best_d = d;
                best = g;
            }
        }
        if (best == gts.size()) {
            r.unmatched_predictions.push_back(p);
        } else {
            taken[best] = 1;
            r.pairs.emplace_back(p, best);
        }
    }
    for (std::size_t g = 0; g < gts.size(); ++g) {
        if (!taken[g]) r.unmatched_truths.push_back(g);
    }
    return r;
}

double average_precision(std::span<const DetectionBox> preds, std::span<const DetectionBox> gts, double threshold) {
    const MatchResult m = match_by_center_distance(preds, gts, threshold);
    std::vector<Scored> s;
    for (const auto& [p, g] : m.pairs) s.push_back({preds[p].score, true, preds[p]});
    for (std::size_t p : m.unmatched_predictions) s.push_back({preds[p].score, false, preds[p]});
    return ap_from_scored(std::move(s), gts.size());
}

double yaw_difference(double a, double b) {
    double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
    if (d > std::numbers::pi) d = 2.0 * std::numbers::pi - d;
    return d;
}

ErrorMetrics error_metrics(std::span<const DetectionBox> preds, std::span<const DetectionBox> gts,
                           std::span<const std::pair<std::size_t, std::size_t>> matches) {
    ErrorMetrics e;
    if (matches.empty()) return {kNaN, kNaN, kNaN, 0};
    for (const auto& [p, g] : matches) {
        e.ate += norm(preds[p].center() - gts[g].center());
        e.aoe += yaw_difference(preds[p].yaw, gts[g].yaw);
        e.ave += norm(preds[p].velocity() - gts[g].velocity());
    }
    e.count = matches.size();
    const double n = static_cast<double>(e.count);
    e.ate /= n;
    e.aoe /= n;
    e.ave /= n;
    return e;
}

MetricReport evaluate(const std::vector<std::vector<DetectionBox>>& preds,
                      const std::vector<std::vector<DetectionBox>>& gts, const EvalConfig& cfg) {
    if (preds.size() != gts.size()) throw Error("evaluate: prediction and truth sample counts differ");
    if (cfg.thresholds.empty()) throw Error("evaluate: need at least one threshold");
    const std::size_t K = cfg.class_names.size();
    MetricReport r;
    r.config = cfg;
    r.ap.assign(K, std::vector<double>(cfg.thresholds.size(), kNaN));

    auto of_class = [](const std::vector<DetectionBox>& boxes, int k) {
        std::vector<DetectionBox> out;
        for (const auto& b : boxes) {
            if (b.cls == k) out.push_back(b);
        }
        return out;
    };
    for (std::size_t i = 0; i < preds.size(); ++i) {
        r.predictions += preds[i].size();
        r.truths += gts[i].size();
        for (const auto& b : preds[i]) {
            if (b.cls < 0 || static_cast<std::size_t>(b.cls) >= K) throw Error("evaluate: prediction class out of range");
        }
    }

    double ap_sum = 0.0;
    std::size_t ap_terms = 0;
    for (std::size_t k = 0; k < K; ++k) {
        std::size_t truths = 0;
        for (const auto& g : gts) truths += of_class(g, static_cast<int>(k)).size();
        if (truths == 0) continue;
        for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
            std::vector<Scored> s;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                const auto P = of_class(preds[i], static_cast<int>(k));
                const auto G = of_class(gts[i], static_cast<int>(k));
                const MatchResult m = match_by_center_distance(P, G, cfg.thresholds[t]);
                for (const auto& [p, g] : m.pairs) s.push_back({P[p].score, true, P[p]});
                for (std::size_t p : m.unmatched_predictions) s.push_back({P[p].score, false, P[p]});
            }
            r.ap[k][t] = ap_from_scored(std::move(s), truths);
            ap_sum += r.ap[k][t];
            ++ap_terms;
        }
    }
    r.mean_ap = ap_terms ? ap_sum / static_cast<double>(ap_terms) : 0.0;

    ErrorMetrics all{0, 0, 0, 0}, fast{0, 0, 0, 0};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const MatchResult m = match_by_center_distance(preds[i], gts[i], cfg.error_threshold);
        for (const auto& [p, g] : m.pairs) {
            const DetectionBox& P = preds[i][p];
            const DetectionBox& G = gts[i][g];
            for (ErrorMetrics* e : {&all, &fast}) {
                if (e == &fast && norm(G.velocity()) <= cfg.fast_speed) continue;
                e->ate += norm(P.center() - G.center());
                e->aoe += yaw_difference(P.yaw, G.yaw);
                e->ave += norm(P.velocity() - G.velocity());
                ++e->count;
            }
        }
    }
    for (ErrorMetrics* e : {&all, &fast}) {
        if (e->count == 0) {
            *e = {kNaN, kNaN, kNaN, 0};
            continue;
        }
        const double n = static_cast<double>(e->count);
        e->ate /= n;
        e->aoe /= n;
        e->ave /= n;
    }
    r.errors = all;
    r.fast_errors = fast;
    return r;
}

nlohmann::json report_to_json(const MetricReport& r) {
    using nlohmann::json;
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json per_class = json::object();
    for (std::size_t k = 0; k < r.ap.size(); ++k) {
        json row = json::object();
        for (std::size_t t = 0; t < r.config.thresholds.size(); ++t) {
            char key[32];
            std::snprintf(key, sizeof key, "%g", r.config.thresholds[t]);
            row[key] = num(r.ap[k][t]);
        }
        per_class[r.config.class_names[k]] = row;
    }
    auto errors = [&](const ErrorMetrics& e) {
        return json{{"ate", num(e.ate)}, {"aoe", num(e.aoe)}, {"ave", num(e.ave)}, {"matches", e.count}};
    };
    return {{"note", "NDS omitted: no size or attribute error analogue at this scale"},
            {"thresholds", r.config.thresholds},
            {"mean_ap", r.mean_ap},
            {"ap", per_class},
            {"errors", errors(r.errors)},
            {"fast_errors", errors(r.fast_errors)},
            {"fast_speed", r.config.fast_speed},
            {"predictions", r.predictions},
            {"truths", r.truths}};
}

std::string report_to_text(const MetricReport& r) {
    std::ostringstream out;
    char buf[160];
    out << "# center-distance metrics (NDS omitted: no size/attribute analogue)\n";
    std::snprintf(buf, sizeof buf, "%-12s", "class");
    out << buf;
    for (double t : r.config.thresholds) {
        std::snprintf(buf, sizeof buf, "  AP@%-5g", t);
        out << buf;
    }
    out << "\n";
    for (std::size_t k = 0; k < r.ap.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%-12s", r.config.class_names[k].c_str());
        out << buf;
        for (double v : r.ap[k]) {
            if (std::isfinite(v)) std::snprintf(buf, sizeof buf, "  %-8.4f", v);
            else std::snprintf(buf, sizeof buf, "  %-8s", "n/a");
            out << buf;
        }
        out << "\n";
    }
    std::snprintf(buf, sizeof buf, "mAP %.4f  ATE %.4f m  AOE %.4f rad  AVE %.4f m/s  (%zu matches)\n", r.mean_ap,
                  r.errors.ate, r.errors.aoe, r.errors.ave, r.errors.count);
    out << buf;
    std::snprintf(buf, sizeof buf, "fast (>%g m/s): AVE %.4f m/s  (%zu matches)\n", r.config.fast_speed,
                  r.fast_errors.ave, r.fast_errors.count);
    out << buf;
    return out.str();
}

}  // namespace ocbev
