#pragma once

// Binary classification metrics. The positive class is CGI (label 1) and
// scores are CGI probabilities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace swinsight {

inline constexpr double kDefaultThreshold = 0.5;

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

namespace detail {

inline void check_scored(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty()) throw DataError("metrics: empty input");
    if (scores.size() != labels.size()) {
        throw ShapeError("metrics: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("metrics: label at " + std::to_string(i) + " is not 0 or 1");
        if (!std::isfinite(scores[i])) throw NumericError("metrics: non-finite score at " + std::to_string(i));
    }
}

}  // namespace detail

/// Predicted positive iff score >= threshold.
inline ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels,
                                 double threshold = kDefaultThreshold) {
    detail::check_scored(scores, labels);
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pos = scores[i] >= threshold;
        if (labels[i] == 1) (pos ? cm.tp : cm.fn) += 1;
        else (pos ? cm.fp : cm.tn) += 1;
    }
    return cm;
}

struct PrecisionRecallF1 {
    double precision = 0, recall = 0, f1 = 0;
};

/// Zero denominators give 0 rather than NaN.
inline PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& cm) {
    PrecisionRecallF1 r;
    if (cm.tp + cm.fp > 0) r.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
    if (cm.tp + cm.fn > 0) r.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
    if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

inline double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("accuracy of an empty confusion matrix");
    return static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

struct RocPoint {
    double fpr = 0, tpr = 0;
    double threshold = 0;  // +inf for the (0, 0) origin
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0;
};

/// Sweeps every distinct score in descending order; tied scores form one step.
/// AUC is the trapezoid area under the resulting polyline.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scored(scores, labels);
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw DataError("roc_auc needs both classes present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    double area2 = 0;  // twice the area, in units of one pos-neg pair
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        const std::size_t tp0 = tp, fp0 = fp;
        for (; k < order.size() && scores[order[k]] == s; ++k) (labels[order[k]] == 1 ? tp : fp) += 1;
        area2 += static_cast<double>((fp - fp0) * (tp + tp0));
        roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos), s});
    }
    roc.auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return roc;
}

struct EvalReport {
    double accuracy = 0, precision = 0, recall = 0, f1 = 0, auc = 0;
    ConfusionMatrix cm;
    RocCurve roc;
};

inline EvalReport report_row(std::span<const double> scores, std::span<const int> labels,
                             double threshold = kDefaultThreshold) {
    EvalReport r;
    r.cm = confusion(scores, labels, threshold);
    r.accuracy = accuracy(r.cm);
    const auto prf = precision_recall_f1(r.cm);
    r.precision = prf.precision;
    r.recall = prf.recall;
    r.f1 = prf.f1;
    r.roc = roc_auc(scores, labels);
    r.auc = r.roc.auc;
    return r;
}

/// Rounds half away from zero at `decimals` places. The product is first
/// snapped to 9 significant digits so binary representation error in inputs
/// like 0.125 or 0.335 does not decide the direction.
inline double round_half_away(double v, int decimals = 2) {
    const double scale = std::pow(10.0, decimals);
    double x = v * scale;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    x = std::strtod(buf, nullptr);
    return std::round(x) / scale;
}

inline std::string format_rounded(double v, int decimals = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, round_half_away(v, decimals));
    return buf;
}

/// Full precision, round-trippable.
inline std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace swinsight
