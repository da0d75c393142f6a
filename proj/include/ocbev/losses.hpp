#pragma once

// Centerness targets, heatmap BCE, sigmoid focal loss, L1 box loss, the
// Hungarian assigner and the weighted total.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "ocbev/autodiff.hpp"
#include "ocbev/geometry.hpp"

namespace ocbev {

struct LossDefaults {
    static constexpr double kCenternessAlpha = 2.5;
    static constexpr double kBceEps = 1e-7;
    static constexpr double kFocalGamma = 2.0;
    static constexpr double kFocalAlpha = 0.25;
    static constexpr double kWeightCenterness = 1.0;
    static constexpr double kWeightClassification = 2.0;
    static constexpr double kWeightBox = 0.5;
};

struct CenternessTarget {
    BEVGrid grid;
    std::vector<double> values;
    double alpha = LossDefaults::kCenternessAlpha;
};

/// c = max over objects of exp(-alpha * (dx^2 + dy^2)), offsets in meters.
CenternessTarget centerness_target(const BEVGrid& grid, std::span<const Vec2> centers,
                                   double alpha = LossDefaults::kCenternessAlpha);

/// Mean binary cross-entropy over cells; `pred` holds probabilities, clamped to [eps, 1-eps].
nn::Var bce_loss(const nn::Var& pred, std::span<const double> target, double eps = LossDefaults::kBceEps);

/// Sigmoid focal loss over all query/class logits [N, K]. `target_class[n]` is
/// the class of query n or -1 for "no object". Normalized by max(1, positives).
nn::Var focal_loss(const nn::Var& logits, std::span<const int> target_class,
                   double gamma = LossDefaults::kFocalGamma, double alpha = LossDefaults::kFocalAlpha);

/// Mean absolute difference over every component of matched rows; 0 when empty.
/// `pred` is [N, D]; `targets` holds one D-vector per entry of `rows`. Optional
/// per-component weights scale each difference (empty = all ones).
nn::Var l1_box_loss(const nn::Var& pred, std::span<const std::size_t> rows,
                    std::span<const std::vector<double>> targets, std::span<const double> code_weights = {});

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, ground truth), sorted by query
    double total_cost = 0.0;
};

/// Minimum-cost one-to-one assignment of an N x M cost matrix (row-major)
/// covering min(N, M) pairs. Throws ocbev::Error when a cost is not finite.
Assignment hungarian_assign(std::span<const double> cost, std::size_t rows, std::size_t cols);

struct LossWeights {
    double centerness = LossDefaults::kWeightCenterness;
    double classification = LossDefaults::kWeightClassification;
    double box = LossDefaults::kWeightBox;
};

struct LossBreakdown {
    double centerness = 0.0;
    double classification = 0.0;
    double box = 0.0;
    double total = 0.0;
    LossWeights weights;
};

LossBreakdown total_loss(double centerness, double classification, double box, const LossWeights& w = {});

/// Differentiable weighted sum matching total_loss; undefined parts count as zero.
nn::Var weighted_total(const nn::Var& centerness, const nn::Var& classification, const nn::Var& box,
                       const LossWeights& w = {});

/// Matching cost: w_cls * focal-style classification cost + w_box * mean L1 of encoded boxes.
/// `probs` is [N, K] sigmoid probabilities, `boxes` is [N, D].
std::vector<double> matching_cost(const nn::Tensor& probs, const nn::Tensor& boxes, std::span<const int> gt_class,
                                  std::span<const std::vector<double>> gt_boxes, const LossWeights& w = {},
                                  double gamma = LossDefaults::kFocalGamma, double alpha = LossDefaults::kFocalAlpha,
                                  std::span<const double> code_weights = {});

}  // namespace ocbev
