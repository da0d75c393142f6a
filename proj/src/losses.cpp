#include "ocbev/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ocbev/error.hpp"
#include "ocbev/ops.hpp"

namespace ocbev {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

CenternessTarget centerness_target(const BEVGrid& grid, std::span<const Vec2> centers, double alpha) {
    if (!(alpha > 0.0)) throw Error("centerness_target: alpha must be positive");
    CenternessTarget t{grid, std::vector<double>(grid.cell_count(), 0.0), alpha};
    for (std::size_t k = 0; k < grid.cell_count(); ++k) {
        const Vec2 c = grid.index_to_coord(k);
        for (const Vec2& o : centers) {
            const double dx = c.x - o.x;
            const double dy = c.y - o.y;
            t.values[k] = std::max(t.values[k], std::exp(-alpha * (dx * dx + dy * dy)));
        }
    }
    return t;
}

nn::Var bce_loss(const nn::Var& pred, std::span<const double> target, double eps) {
    if (pred.size() != target.size()) {
        throw ShapeError("bce_loss: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(target.size()) + " targets");
    }
    const std::size_t n = target.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = std::clamp(pred.value()[i], eps, 1.0 - eps);
        const double t = target[i];
        sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    std::vector<double> tgt(target.begin(), target.end());
    return nn::record(nn::Tensor::scalar(sum / static_cast<double>(n)), {pred}, [tgt, eps](nn::Node& self) {
        double* g = nn::input_grad(self, 0);
        if (!g) return;
        const auto& P = self.inputs[0]->value;
        const double scale = self.grad[0] / static_cast<double>(tgt.size());
        for (std::size_t i = 0; i < tgt.size(); ++i) {
            const double raw = P[i];
            if (raw < eps || raw > 1.0 - eps) continue;  // clamped: flat
            g[i] += scale * (-tgt[i] / raw + (1.0 - tgt[i]) / (1.0 - raw));
        }
    });
}

nn::Var focal_loss(const nn::Var& logits, std::span<const int> target_class, double gamma, double alpha) {
    if (logits.shape().size() != 2 || logits.shape()[0] != target_class.size()) {
        throw ShapeError("focal_loss: logits " + nn::shape_string(logits.shape()) + " for " +
                         std::to_string(target_class.size()) + " targets");
    }
    if (!(gamma >= 0.0) || !(alpha > 0.0 && alpha < 1.0)) throw Error("focal_loss: invalid gamma or alpha");
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    std::size_t positives = 0;
    for (int c : target_class) {
        if (c >= static_cast<int>(K)) throw Error("focal_loss: class id out of range");
        if (c >= 0) ++positives;
    }
    const double norm = static_cast<double>(std::max<std::size_t>(1, positives));

    // Positive term: -alpha (1-p)^g log p, negative term: -(1-alpha) p^g log(1-p).
    double sum = 0.0;
    const auto& X = logits.value();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
            const double x = X.at(n, k);
            const double p = stable_sigmoid(x);
            if (target_class[n] == static_cast<int>(k)) {
                sum += alpha * std::pow(1.0 - p, gamma) * softplus(-x);
            } else {
                sum += (1.0 - alpha) * std::pow(p, gamma) * softplus(x);
            }
        }
    }
    std::vector<int> tc(target_class.begin(), target_class.end());
    return nn::record(nn::Tensor::scalar(sum / norm), {logits}, [tc, gamma, alpha, norm, K](nn::Node& self) {
        double* g = nn::input_grad(self, 0);
        if (!g) return;
        const auto& X = self.inputs[0]->value;
        const double scale = self.grad[0] / norm;
        for (std::size_t n = 0; n < tc.size(); ++n) {
            for (std::size_t k = 0; k < K; ++k) {
                const double x = X.at(n, k);
                const double p = stable_sigmoid(x);
                double d;
                if (tc[n] == static_cast<int>(k)) {
                    // d/dx [ (1-p)^g * softplus(-x) ], with dp/dx = p(1-p)
                    const double q = 1.0 - p;
                    const double qg = std::pow(q, gamma);
                    const double dqg = gamma > 0.0 ? -gamma * std::pow(q, gamma - 1.0) * p * q : 0.0;
                    d = alpha * (dqg * softplus(-x) - qg * q);
                } else {
                    const double pg = std::pow(p, gamma);
                    const double dpg = gamma > 0.0 ? gamma * std::pow(p, gamma - 1.0) * p * (1.0 - p) : 0.0;
                    d = (1.0 - alpha) * (dpg * softplus(x) + pg * p);
                }
                g[n * K + k] += scale * d;
            }
        }
    });
}

namespace {

std::vector<double> unit_or(std::span<const double> weights, std::size_t D, const char* who) {
    if (weights.empty()) return std::vector<double>(D, 1.0);
    if (weights.size() != D) throw ShapeError(std::string(who) + ": code weights differ from box width");
    return {weights.begin(), weights.end()};
}

}  // namespace

nn::Var l1_box_loss(const nn::Var& pred, std::span<const std::size_t> rows,
                    std::span<const std::vector<double>> targets, std::span<const double> code_weights) {
    if (rows.size() != targets.size()) throw ShapeError("l1_box_loss: rows and targets differ in length");
    if (rows.empty()) return nn::Var::constant(nn::Tensor::scalar(0.0));
    const std::size_t D = pred.shape().at(1);
    const std::vector<double> cw = unit_or(code_weights, D, "l1_box_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (targets[i].size() != D) throw ShapeError("l1_box_loss: target length differs from prediction width");
        for (std::size_t d = 0; d < D; ++d) sum += cw[d] * std::abs(pred.value().at(rows[i], d) - targets[i][d]);
    }
    const double count = static_cast<double>(rows.size() * D);
    std::vector<std::size_t> r(rows.begin(), rows.end());
    std::vector<std::vector<double>> t(targets.begin(), targets.end());
    return nn::record(nn::Tensor::scalar(sum / count), {pred}, [r, t, D, count, cw](nn::Node& self) {
        double* g = nn::input_grad(self, 0);
        if (!g) return;
        const auto& P = self.inputs[0]->value;
        const double scale = self.grad[0] / count;
        for (std::size_t i = 0; i < r.size(); ++i)
            for (std::size_t d = 0; d < D; ++d) {
                const double diff = P.at(r[i], d) - t[i][d];
                g[r[i] * D + d] += scale * cw[d] * (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0);
            }
    });
}

Assignment hungarian_assign(std::span<const double> cost, std::size_t rows, std::size_t cols) {
    if (cost.size() != rows * cols) throw ShapeError("hungarian_assign: cost size does not match dimensions");
    for (double c : cost) {
        if (!std::isfinite(c)) throw Error("hungarian_assign: non-finite cost");
    }
    if (cols > rows) {
        std::vector<double> t(cost.size());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = cost[r * cols + c];
        Assignment a = hungarian_assign(t, cols, rows);
        for (auto& [q, g] : a.pairs) std::swap(q, g);
        std::sort(a.pairs.begin(), a.pairs.end());
        return a;
    }
    Assignment out;
    if (cols == 0) return out;

    // Shortest augmenting path with potentials (Jonker-Volgenant style).
    // Ground truths play the role of rows here, so every one of them is assigned.
    const std::size_t n = cols;  // "rows" of the transposed problem
    const std::size_t m = rows;  // "columns" of the transposed problem
    const double inf = std::numeric_limits<double>::infinity();
    auto a = [&](std::size_t i, std::size_t j) { return cost[(j - 1) * cols + (i - 1)]; };
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) out.pairs.emplace_back(j - 1, p[j] - 1);
    }
    // Sum in ground-truth order so equal assignments give bit-identical totals.
    std::vector<std::pair<std::size_t, std::size_t>> by_gt = out.pairs;
    std::sort(by_gt.begin(), by_gt.end(), [](auto x, auto y) { return x.second < y.second; });
    for (const auto& [q, g] : by_gt) out.total_cost += cost[q * cols + g];
    return out;
}

LossBreakdown total_loss(double centerness, double classification, double box, const LossWeights& w) {
    LossBreakdown b;
    b.centerness = centerness;
    b.classification = classification;
    b.box = box;
    b.weights = w;
    b.total = w.centerness * centerness + w.classification * classification + w.box * box;
    return b;
}

nn::Var weighted_total(const nn::Var& centerness, const nn::Var& classification, const nn::Var& box,
                       const LossWeights& w) {
    nn::Var total;
    auto accumulate = [&](const nn::Var& part, double weight) {
        if (!part.defined()) return;
        nn::Var term = nn::scale(part, weight);
        total = total.defined() ? nn::add(total, term) : term;
    };
    accumulate(centerness, w.centerness);
    accumulate(classification, w.classification);
    accumulate(box, w.box);
    return total.defined() ? total : nn::Var::constant(nn::Tensor::scalar(0.0));
}

std::vector<double> matching_cost(const nn::Tensor& probs, const nn::Tensor& boxes, std::span<const int> gt_class,
                                  std::span<const std::vector<double>> gt_boxes, const LossWeights& w, double gamma,
                                  double alpha, std::span<const double> code_weights) {
    const std::size_t N = probs.rows(), M = gt_class.size(), D = boxes.cols();
    if (gt_boxes.size() != M || boxes.rows() != N) throw ShapeError("matching_cost: inconsistent inputs");
    const std::vector<double> cw = unit_or(code_weights, D, "matching_cost");
    constexpr double eps = 1e-12;
    std::vector<double> cost(N * M);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t g = 0; g < M; ++g) {
            const double p = probs.at(n, static_cast<std::size_t>(gt_class[g]));
            const double pos = alpha * std::pow(1.0 - p, gamma) * -std::log(p + eps);
            const double neg = (1.0 - alpha) * std::pow(p, gamma) * -std::log(1.0 - p + eps);
            double l1 = 0.0;
            for (std::size_t d = 0; d < D; ++d) l1 += cw[d] * std::abs(boxes.at(n, d) - gt_boxes[g][d]);
            cost[n * M + g] = w.classification * (pos - neg) + w.box * l1 / static_cast<double>(D);
        }
    }
    return cost;
}

}  // namespace ocbev
