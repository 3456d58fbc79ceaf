#pragma once

// Plain SVG plots on a fixed 800x600 canvas: training curves, ROC, and a
// two-class scatter. Output depends only on the data.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metrics.hpp"
#include "training.hpp"

namespace swinsight {

inline constexpr int kSvgWidth = 800;
inline constexpr int kSvgHeight = 600;

namespace svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Series {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;
    bool dashed = false;
    bool markers = false;
};

struct Range {
    double lo = 0, hi = 1;
};

inline Range padded_range(const std::vector<Series>& series, bool use_x) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            const double v = use_x ? x : y;
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) return {0, 1};
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

class Document {
public:
    Document() {
        out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kSvgWidth) + "\" height=\"" +
                std::to_string(kSvgHeight) + "\" viewBox=\"0 0 " + std::to_string(kSvgWidth) + " " +
                std::to_string(kSvgHeight) + "\" font-family=\"sans-serif\">\n";
        out_ += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(kSvgWidth) + "\" height=\"" + std::to_string(kSvgHeight) +
                "\" fill=\"white\"/>\n";
    }

    void text(double x, double y, const std::string& s, int size = 12, const char* anchor = "middle", double rotate = 0) {
        out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
                "\" text-anchor=\"" + anchor + "\"";
        if (rotate != 0) out_ += " transform=\"rotate(" + num(rotate) + " " + num(x) + " " + num(y) + ")\"";
        out_ += ">" + escape(s) + "</text>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1, bool dashed = false) {
        out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
                "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"";
        if (dashed) out_ += " stroke-dasharray=\"6 4\"";
        out_ += "/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, bool dashed) {
        if (pts.empty()) return;
        out_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"2\"";
        if (dashed) out_ += " stroke-dasharray=\"6 4\"";
        out_ += " points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) out_ += (i ? " " : "") + num(pts[i].first) + "," + num(pts[i].second);
        out_ += "\"/>\n";
    }

    void circle(double x, double y, double r, const std::string& fill, const char* stroke = nullptr) {
        out_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"";
        if (stroke) out_ += std::string(" stroke=\"") + stroke + "\" stroke-width=\"0.5\"";
        out_ += "/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke) {
        out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
                "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
    }

    std::string finish() const { return out_ + "</svg>\n"; }

private:
    std::string out_;
};

struct Panel {
    double x, y, w, h;  // plotting area in canvas pixels
    std::string title, xlabel, ylabel;
    std::optional<Range> xrange, yrange;
};

/// Axes, five ticks per axis, series, and a legend in the upper-right corner.
inline void draw_panel(Document& doc, const Panel& p, const std::vector<Series>& series) {
    const Range xr = p.xrange.value_or(padded_range(series, true));
    const Range yr = p.yrange.value_or(padded_range(series, false));
    auto px = [&](double v) { return p.x + (v - xr.lo) / (xr.hi - xr.lo) * p.w; };
    auto py = [&](double v) { return p.y + p.h - (v - yr.lo) / (yr.hi - yr.lo) * p.h; };

    doc.rect(p.x, p.y, p.w, p.h, "none", "#333333");
    for (int i = 0; i <= 4; ++i) {
        const double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        const double yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        doc.line(px(xv), p.y + p.h, px(xv), p.y + p.h + 5, "#333333");
        doc.text(px(xv), p.y + p.h + 18, tick_label(xv), 11);
        doc.line(p.x - 5, py(yv), p.x, py(yv), "#333333");
        doc.text(p.x - 8, py(yv) + 4, tick_label(yv), 11, "end");
    }
    doc.text(p.x + p.w / 2, p.y - 10, p.title, 14);
    doc.text(p.x + p.w / 2, p.y + p.h + 38, p.xlabel, 12);
    doc.text(p.x - 45, p.y + p.h / 2, p.ylabel, 12, "middle", -90);

    for (const auto& s : series) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& [x, y] : s.points) pts.emplace_back(px(x), py(y));
        doc.polyline(pts, s.color, s.dashed);
        if (s.markers) {
            for (const auto& [x, y] : pts) doc.circle(x, y, 3, s.color);
        }
    }
    double ly = p.y + 14;
    for (const auto& s : series) {
        if (s.name.empty()) continue;
        doc.line(p.x + p.w - 120, ly - 4, p.x + p.w - 96, ly - 4, s.color, 2, s.dashed);
        doc.text(p.x + p.w - 90, ly, s.name, 11, "start");
        ly += 16;
    }
}

}  // namespace svg

/// Accuracy (left) and loss (right) per epoch for train and validation.
inline std::string render_training_curves(const TrainTrace& trace, const std::string& title = "training") {
    svg::Series ta{"train", "#1f77b4", {}, false, true}, va{"validation", "#d62728", {}, true, true};
    svg::Series tl = ta, vl = va;
    for (std::size_t e = 0; e < trace.epochs.size(); ++e) {
        const double x = static_cast<double>(e + 1);
        ta.points.emplace_back(x, trace.epochs[e].train_accuracy);
        va.points.emplace_back(x, trace.epochs[e].val_accuracy);
        tl.points.emplace_back(x, trace.epochs[e].train_loss);
        vl.points.emplace_back(x, trace.epochs[e].val_loss);
    }
    svg::Document doc;
    doc.text(kSvgWidth / 2.0, 24, title, 16);
    svg::Panel acc{70, 70, 300, 440, "accuracy", "epoch", "accuracy", std::nullopt, svg::Range{0, 1}};
    svg::Panel loss{470, 70, 300, 440, "loss", "epoch", "cross-entropy", std::nullopt, std::nullopt};
    svg::draw_panel(doc, acc, {ta, va});
    svg::draw_panel(doc, loss, {tl, vl});
    return doc.finish();
}

inline std::string render_roc(const RocCurve& roc, const std::string& title = "ROC") {
    svg::Series curve{"AUC = " + format_rounded(roc.auc), "#1f77b4", {}, false, false};
    for (const auto& p : roc.points) curve.points.emplace_back(p.fpr, p.tpr);
    svg::Series chance{"chance", "#999999", {{0, 0}, {1, 1}}, true, false};
    svg::Document doc;
    svg::Panel panel{150, 60, 500, 460, title, "false positive rate", "true positive rate", svg::Range{0, 1}, svg::Range{0, 1}};
    svg::draw_panel(doc, panel, {curve, chance});
    return doc.finish();
}

/// Two-class scatter; label 1 (CGI) and label 0 (real) get distinct fills.
inline std::string render_scatter(const std::vector<std::pair<double, double>>& points, const std::vector<int>& labels,
                                  const std::string& title = "t-SNE") {
    static constexpr const char* fills[2] = {"#5b2a86", "#f2c714"};
    static constexpr const char* names[2] = {"real", "cgi"};
    svg::Series all{"", "none", points, false, false};
    const svg::Range xr = svg::padded_range({all}, true), yr = svg::padded_range({all}, false);
    svg::Document doc;
    const double x0 = 70, y0 = 60, w = 560, h = 480;
    doc.rect(x0, y0, w, h, "none", "#333333");
    doc.text(x0 + w / 2, y0 - 20, title, 16);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double px = x0 + (points[i].first - xr.lo) / (xr.hi - xr.lo) * w;
        const double py = y0 + h - (points[i].second - yr.lo) / (yr.hi - yr.lo) * h;
        doc.circle(px, py, 4, fills[labels[i] == 1 ? 1 : 0], "#222222");
    }
    for (int c = 0; c < 2; ++c) {
        const double ly = y0 + 20 + 22 * c;
        doc.circle(x0 + w + 25, ly - 4, 6, fills[c], "#222222");
        doc.text(x0 + w + 38, ly, names[c], 13, "start");
    }
    return doc.finish();
}

}  // namespace swinsight
