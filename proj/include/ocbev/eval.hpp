#pragma once

// Center-distance detection metrics: greedy matching, all-points AP, and
// translation / orientation / velocity errors of matched pairs.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ocbev/boxes.hpp"

namespace ocbev {

struct MatchResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth), in match order
    std::vector<std::size_t> unmatched_predictions;
    std::vector<std::size_t> unmatched_truths;
};

/// Score order (descending; ties broken by box contents so input order never
/// matters), each prediction taking the nearest unmatched same-class truth
/// whose planar distance is at most `threshold`.
MatchResult match_by_center_distance(std::span<const DetectionBox> preds, std::span<const DetectionBox> gts,
                                     double threshold);

/// All-points interpolated AP over the given predictions and truths (any class
/// filtering is the caller's job). Zero when there are no truths.
double average_precision(std::span<const DetectionBox> preds, std::span<const DetectionBox> gts, double threshold);

struct ErrorMetrics {
    double ate = 0.0;
    double aoe = 0.0;
    double ave = 0.0;
    std::size_t count = 0;
};

/// Means over matched pairs; NaN with count 0 when there are none.
ErrorMetrics error_metrics(std::span<const DetectionBox> preds, std::span<const DetectionBox> gts,
                           std::span<const std::pair<std::size_t, std::size_t>> matches);

/// Smallest absolute yaw difference, in [0, pi].
double yaw_difference(double a, double b);

struct EvalConfig {
    std::vector<double> thresholds{0.5, 1.0, 2.0, 4.0};
    double error_threshold = 2.0;
    double fast_speed = 5.0;  // m/s, for the fast-object velocity error
    std::vector<std::string> class_names{"car", "truck", "pedestrian"};
};

struct MetricReport {
    EvalConfig config;
    std::vector<std::vector<double>> ap;  // [class][threshold]; NaN when a class has no truths
    double mean_ap = 0.0;
    ErrorMetrics errors;
    ErrorMetrics fast_errors;  // pairs whose truth is faster than fast_speed
    std::size_t predictions = 0;
    std::size_t truths = 0;
};

/// One entry per sample (frame); matching never crosses samples, and the PR
/// curve pools all samples.
MetricReport evaluate(const std::vector<std::vector<DetectionBox>>& preds,
                      const std::vector<std::vector<DetectionBox>>& gts, const EvalConfig& cfg = {});

nlohmann::json report_to_json(const MetricReport& r);
std::string report_to_text(const MetricReport& r);

}  // namespace ocbev
