#pragma once

// Dataset manifests, image preprocessing, class balancing, stratified splits,
// the synthetic fixture generator, and minibatch iteration.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "batch.hpp"
#include "errors.hpp"
#include "image_io.hpp"
#include "random.hpp"
#include "swin.hpp"
#include "tensor.hpp"

namespace swinsight {

namespace fs = std::filesystem;

enum class Split : int { Train = 0, Val = 1, Test = 2 };
inline constexpr const char* kSplitNames[3] = {"train", "val", "test"};

inline const char* to_string(Split s) { return kSplitNames[static_cast<int>(s)]; }
inline const char* to_string(Label l) { return kClassNames[static_cast<int>(l)]; }

inline std::optional<Split> parse_split(std::string_view s) {
    for (int i = 0; i < 3; ++i) {
        if (s == kSplitNames[i]) return static_cast<Split>(i);
    }
    return std::nullopt;
}

inline std::optional<Label> parse_label(std::string_view s) {
    for (int i = 0; i < kNumClasses; ++i) {
        if (s == kClassNames[i]) return static_cast<Label>(i);
    }
    return std::nullopt;
}

// ImageNet channel statistics.
inline constexpr std::array<double, 3> kChannelMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kChannelStd = {0.229, 0.224, 0.225};

struct Sample {
    std::string path;  // as written in the manifest
    Label label = Label::Real;
    std::string dataset;
    Split split = Split::Train;
    fs::path file;     // resolved, absolute
};

struct QuarantineEntry {
    std::string path;
    std::string reason;
};

struct DatasetManifest {
    std::vector<Sample> samples;
    std::vector<QuarantineEntry> quarantine;

    std::size_t count(std::optional<Label> label = {}, std::optional<std::string> dataset = {},
                      std::optional<Split> split = {}) const {
        return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(), [&](const Sample& s) {
            return (!label || s.label == *label) && (!dataset || s.dataset == *dataset) && (!split || s.split == *split);
        }));
    }

    /// Dataset ids in order of first appearance.
    std::vector<std::string> dataset_ids() const {
        std::vector<std::string> ids;
        for (const auto& s : samples) {
            if (std::find(ids.begin(), ids.end(), s.dataset) == ids.end()) ids.push_back(s.dataset);
        }
        return ids;
    }

    DatasetManifest subset(Split split) const {
        DatasetManifest out;
        for (const auto& s : samples) {
            if (s.split == split) out.samples.push_back(s);
        }
        return out;
    }

    void check_unique() const {
        std::map<fs::path, std::size_t> seen;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            auto [it, fresh] = seen.emplace(samples[i].file, i);
            if (!fresh) throw DataError("duplicate sample path '" + samples[i].path + "'");
        }
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string csv_safe(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

/// Parses a `path,label,dataset,split` CSV. Blank lines and lines starting
/// with '#' are skipped. Relative paths resolve against the manifest's
/// directory. Errors name the offending line.
inline DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("manifest '" + path.string() + "' not found or unreadable");
    const fs::path root = fs::absolute(path).parent_path();
    DatasetManifest m;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto fields = detail::split_csv_line(t);
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        if (!header_seen) {
            if (fields != std::vector<std::string>{"path", "label", "dataset", "split"}) {
                throw DataError(where + "malformed header, expected 'path,label,dataset,split'");
            }
            header_seen = true;
            continue;
        }
        if (fields.size() != 4) throw DataError(where + "expected 4 fields, got " + std::to_string(fields.size()));
        Sample s;
        s.path = fields[0];
        if (s.path.empty()) throw DataError(where + "empty path");
        const auto label = parse_label(fields[1]);
        if (!label) throw DataError(where + "unknown label '" + fields[1] + "' (expected real or cgi)");
        s.label = *label;
        s.dataset = fields[2];
        if (s.dataset.empty()) throw DataError(where + "empty dataset id");
        const auto split = parse_split(fields[3]);
        if (!split) throw DataError(where + "unknown split '" + fields[3] + "' (expected train, val or test)");
        s.split = *split;
        s.file = (root / s.path).lexically_normal();
        m.samples.push_back(std::move(s));
    }
    if (!header_seen) throw DataError(path.string() + ": malformed header, file has no header line");
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (m.samples[i].file == m.samples[j].file) {
                throw DataError(path.string() + ": duplicate path '" + m.samples[i].path + "'");
            }
        }
    }
    return m;
}

/// Writes the manifest with paths relative to the output file's directory.
/// Paths are written relative to the manifest's own directory, or as absolute
/// paths when `absolute` is set (run outputs, so they read the same wherever
/// the run directory is).
inline void write_manifest(const DatasetManifest& m, const fs::path& path, bool absolute = false) {
    const fs::path dir = fs::absolute(path).parent_path();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write manifest '" + path.string() + "'");
    os << "path,label,dataset,split\n";
    for (const auto& s : m.samples) {
        fs::path rel = absolute ? fs::absolute(s.file) : s.file.lexically_relative(dir);
        if (rel.empty()) rel = s.file;
        os << rel.generic_string() << ',' << to_string(s.label) << ',' << s.dataset << ',' << to_string(s.split) << '\n';
    }
}

inline void write_quarantine_report(const std::vector<QuarantineEntry>& entries, const fs::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    os << "path,reason\n";
    for (const auto& q : entries) os << detail::csv_safe(q.path) << ',' << detail::csv_safe(q.reason) << '\n';
}

/// Decoded image as [3, H, W] floats in [0, 1]. Throws QuarantineError.
inline Tensor<double> decode_image(const fs::path& path) { return to_tensor(read_rgb(path)); }

/// Bilinear resize of [3, H, W] to [3, out, out] with half-pixel centers:
/// source coordinate = (dst + 0.5) * in / out - 0.5, clamped to the edges.
inline Tensor<double> resize_bilinear(const Tensor<double>& img, std::size_t out) {
    if (img.rank() != 3 || out == 0) throw ShapeError("resize_bilinear expects [C, H, W], got " + to_string(img.shape()));
    const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<double> res({ch, out, out});
    auto coords = [out](std::size_t in) {
        std::vector<std::tuple<std::size_t, std::size_t, double>> c(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t d = 0; d < out; ++d) {
            double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::size_t>(std::floor(src));
            const std::size_t hi = std::min(lo + 1, in - 1);
            c[d] = {lo, hi, src - static_cast<double>(lo)};
        }
        return c;
    };
    const auto ys = coords(h);
    const auto xs = coords(w);
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < out; ++y) {
            const auto [y0, y1, fy] = ys[y];
            for (std::size_t x = 0; x < out; ++x) {
                const auto [x0, x1, fx] = xs[x];
                const double top = img.at({c, y0, x0}) * (1 - fx) + img.at({c, y0, x1}) * fx;
                const double bot = img.at({c, y1, x0}) * (1 - fx) + img.at({c, y1, x1}) * fx;
                res.at({c, y, x}) = top * (1 - fy) + bot * fy;
            }
        }
    }
    return res;
}

/// Per channel (v - mean_c) / std_c.
inline Tensor<double> normalize(Tensor<double> img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("normalize expects [3, H, W], got " + to_string(img.shape()));
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) img[c * plane + i] = (img[c * plane + i] - kChannelMean[c]) / kChannelStd[c];
    }
    return img;
}

inline Tensor<double> denormalize(Tensor<double> img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("denormalize expects [3, H, W], got " + to_string(img.shape()));
    const std::size_t plane = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) img[c * plane + i] = img[c * plane + i] * kChannelStd[c] + kChannelMean[c];
    }
    return img;
}

/// Uniform subsample without replacement to exactly `per_class` samples of
/// each class. Surviving samples keep their manifest order.
inline DatasetManifest balance_classes(const DatasetManifest& m, std::size_t per_class, std::uint64_t seed) {
    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < m.samples.size(); ++i) by_class[static_cast<int>(m.samples[i].label)].push_back(i);
    if (by_class[0].size() < per_class || by_class[1].size() < per_class) {
        throw DataError("balance_classes: need " + std::to_string(per_class) + " per class, available real=" +
                        std::to_string(by_class[0].size()) + " cgi=" + std::to_string(by_class[1].size()));
    }
    std::vector<bool> keep(m.samples.size(), false);
    for (int c = 0; c < kNumClasses; ++c) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
        const auto perm = rng.permutation(by_class[c].size());
        for (std::size_t i = 0; i < per_class; ++i) keep[by_class[c][perm[i]]] = true;
    }
    DatasetManifest out;
    out.quarantine = m.quarantine;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        if (keep[i]) out.samples.push_back(m.samples[i]);
    }
    return out;
}

using SplitRatios = std::array<double, 3>;
inline constexpr SplitRatios kDefaultSplitRatios = {0.70, 0.15, 0.15};

/// Per-stratum split sizes: round(n * train), round(n * val), remainder to test.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
    const auto tr = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r[0])));
    const auto va = std::min<std::size_t>(n - tr, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r[1])));
    std::array<std::size_t, 3> out{tr, va, n - tr - va};
    // Rounding can empty a small split; borrow from the largest one.
    for (int k = 0; k < 3; ++k) {
        if (out[k] > 0 || r[k] <= 0.0) continue;
        auto big = std::max_element(out.begin(), out.end());
        if (*big < 2) break;
        --*big;
        out[k] = 1;
    }
    return out;
}

inline void validate_ratios(const SplitRatios& r) {
    for (double v : r) {
        if (!(v >= 0.0)) throw ConfigError("split ratios must be non-negative");
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

/// Assigns every sample to train/val/test, stratified by (dataset, label).
/// Each stratum is shuffled with a seed derived from (seed, dataset, label),
/// so a stratum's assignment does not depend on the other strata present.
inline DatasetManifest build_splits(const DatasetManifest& m, const SplitRatios& ratios, std::uint64_t seed) {
    validate_ratios(ratios);
    std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        strata[{m.samples[i].dataset, static_cast<int>(m.samples[i].label)}].push_back(i);
    }
    DatasetManifest out = m;
    for (const auto& [key, members] : strata) {
        if (members.size() < 3) {
            throw DataError("build_splits: stratum (" + key.first + ", " + kClassNames[key.second] + ") has " +
                            std::to_string(members.size()) + " samples; at least 3 are required");
        }
        Rng rng(mix_seed(seed, detail::fnv1a(key.first + "/" + kClassNames[key.second])));
        const auto perm = rng.permutation(members.size());
        const auto sizes = split_sizes(members.size(), ratios);
        for (std::size_t i = 0; i < members.size(); ++i) {
            const Split s = i < sizes[0] ? Split::Train : (i < sizes[0] + sizes[1] ? Split::Val : Split::Test);
            out.samples[members[perm[i]]].split = s;
        }
    }
    return out;
}

/// Concatenates manifests; duplicate files are an error.
inline DatasetManifest merge_manifests(const std::vector<DatasetManifest>& parts) {
    DatasetManifest out;
    for (const auto& p : parts) {
        out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
        out.quarantine.insert(out.quarantine.end(), p.quarantine.begin(), p.quarantine.end());
    }
    out.check_unique();
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic fixture

namespace detail {

inline std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Camera-like: smooth two-color gradient, a low-frequency shading wave, and
// per-pixel sensor noise.
inline RgbImage render_natural(std::size_t size, Rng& rng) {
    RgbImage img{size, size, std::vector<std::uint8_t>(size * size * 3)};
    std::array<double, 3> c0{}, c1{};
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.25, 0.75);
        c1[c] = rng.uniform(0.25, 0.75);
    }
    const double theta = rng.uniform(0.0, 6.283185307179586);
    const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5), phase = rng.uniform(0.0, 6.283185307179586);
    const double n = static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / n - 0.5, v = (static_cast<double>(y) + 0.5) / n - 0.5;
            const double t = std::clamp(0.5 + u * std::cos(theta) + v * std::sin(theta), 0.0, 1.0);
            const double shade = 0.08 * std::sin(6.283185307179586 * (fx * u + fy * v) + phase);
            for (int c = 0; c < 3; ++c) {
                const double base = c0[c] * (1 - t) + c1[c] * t + shade;
                img.pixels[(y * size + x) * 3 + c] = quantize(base + 0.06 * rng.normal());
            }
        }
    }
    return img;
}

// Render-like: saturated flat-shaded checkerboard plus a few flat rectangles;
// hard edges, no noise.
inline RgbImage render_cgi(std::size_t size, Rng& rng) {
    RgbImage img{size, size, std::vector<std::uint8_t>(size * size * 3)};
    auto color = [&rng] {
        std::array<std::uint8_t, 3> c{};
        for (auto& v : c) {
            const double u = rng.uniform(0.0, 0.3);
            v = quantize(rng.below(2) ? 1.0 - u : u);
        }
        return c;
    };
    const auto a = color();
    auto b = color();
    while (std::abs(int(a[0]) - int(b[0])) + std::abs(int(a[1]) - int(b[1])) + std::abs(int(a[2]) - int(b[2])) < 120) b = color();
    const std::size_t cell = 2 + static_cast<std::size_t>(rng.below(4));
    const std::size_t ox = static_cast<std::size_t>(rng.below(cell)), oy = static_cast<std::size_t>(rng.below(cell));
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const auto& c = (((x + ox) / cell + (y + oy) / cell) % 2 == 0) ? a : b;
            std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>((y * size + x) * 3));
        }
    }
    const std::size_t rects = 1 + static_cast<std::size_t>(rng.below(3));
    for (std::size_t r = 0; r < rects; ++r) {
        const auto c = color();
        const std::size_t w = 2 + static_cast<std::size_t>(rng.below(std::max<std::size_t>(1, size / 2)));
        const std::size_t h = 2 + static_cast<std::size_t>(rng.below(std::max<std::size_t>(1, size / 2)));
        const std::size_t x0 = static_cast<std::size_t>(rng.below(size)), y0 = static_cast<std::size_t>(rng.below(size));
        for (std::size_t y = y0; y < std::min(size, y0 + h); ++y) {
            for (std::size_t x = x0; x < std::min(size, x0 + w); ++x) {
                std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>((y * size + x) * 3));
            }
        }
    }
    return img;
}

}  // namespace detail

/// Writes n_per_class PNGs per class under out_dir/{real,cgi}/ plus
/// out_dir/manifest.csv. Splits are the default 70/15/15 stratified
/// assignment (all train when a class has fewer than 3 images).
inline DatasetManifest make_synthetic_fixture(const fs::path& out_dir, std::size_t n_per_class, std::size_t image_size,
                                              std::uint64_t seed, const std::string& dataset_id = "FX") {
    if (n_per_class == 0 || image_size == 0) throw ConfigError("fixture: n and size must be positive");
    if (dataset_id.empty() || dataset_id.find(',') != std::string::npos) throw ConfigError("fixture: bad dataset id");
    std::error_code ec;
    fs::create_directories(out_dir / "real", ec);
    fs::create_directories(out_dir / "cgi", ec);
    if (ec) throw DataError("fixture: cannot create '" + out_dir.string() + "': " + ec.message());
    const fs::path root = fs::absolute(out_dir);
    DatasetManifest m;
    for (int c = 0; c < kNumClasses; ++c) {
        Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(c)));
        for (std::size_t i = 0; i < n_per_class; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s/%s_%05zu.png", kClassNames[c], kClassNames[c], i);
            const RgbImage img = c == 0 ? detail::render_natural(image_size, rng) : detail::render_cgi(image_size, rng);
            write_png(out_dir / name, img);
            Sample s;
            s.path = name;
            s.label = static_cast<Label>(c);
            s.dataset = dataset_id;
            s.file = (root / name).lexically_normal();
            m.samples.push_back(std::move(s));
        }
    }
    if (n_per_class >= 3) m = build_splits(m, kDefaultSplitRatios, seed);
    write_manifest(m, out_dir / "manifest.csv");
    return m;
}

// ---------------------------------------------------------------------------
// Preprocessing cache and batching

/// Decoded, resized, normalized samples keyed by file; each file is decoded
/// at most once. Failures are remembered as quarantine reasons.
class SampleStore {
public:
    explicit SampleStore(std::size_t image_size) : image_size_(image_size) {}

    std::size_t image_size() const noexcept { return image_size_; }

    /// nullptr when the file is quarantined; `reason` then holds why.
    const Tensor<double>* get(const fs::path& file, std::string* reason = nullptr) {
        auto it = cache_.find(file);
        if (it == cache_.end()) {
            Entry e;
            try {
                Tensor<double> img = decode_image(file);
                if (img.dim(1) != image_size_ || img.dim(2) != image_size_) img = resize_bilinear(img, image_size_);
                e = normalize(std::move(img));
            } catch (const QuarantineError& q) {
                e = q.reason();
            }
            it = cache_.emplace(file, std::move(e)).first;
        }
        if (const auto* t = std::get_if<Tensor<double>>(&it->second)) return t;
        if (reason) *reason = std::get<std::string>(it->second);
        return nullptr;
    }

private:
    using Entry = std::variant<Tensor<double>, std::string>;
    std::size_t image_size_;
    std::map<fs::path, Entry> cache_;
};

/// Drops samples whose files fail to decode, recording them in quarantine.
inline DatasetManifest drop_unreadable(const DatasetManifest& m, SampleStore& store) {
    DatasetManifest out;
    out.quarantine = m.quarantine;
    for (const auto& s : m.samples) {
        std::string reason;
        if (store.get(s.file, &reason)) out.samples.push_back(s);
        else out.quarantine.push_back({s.path, reason});
    }
    return out;
}

struct PreparedSplit {
    std::size_t image_size = 0;
    std::vector<double> pixels;               // [n, 3, S, S] normalized
    std::vector<int> labels;
    std::vector<std::size_t> sample_indices;  // positions in the source manifest
    std::vector<QuarantineEntry> quarantined;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t sample_stride() const noexcept { return 3 * image_size * image_size; }
};

/// decode -> resize -> normalize for every sample of one split. Unreadable
/// files are skipped and listed in `quarantined`.
inline PreparedSplit prepare_split(const DatasetManifest& m, Split split, SampleStore& store) {
    PreparedSplit out;
    out.image_size = store.image_size();
    std::size_t members = 0;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const Sample& s = m.samples[i];
        if (s.split != split) continue;
        ++members;
        std::string reason;
        const Tensor<double>* img = store.get(s.file, &reason);
        if (!img) {
            out.quarantined.push_back({s.path, reason});
            continue;
        }
        out.pixels.insert(out.pixels.end(), img->data().begin(), img->data().end());
        out.labels.push_back(static_cast<int>(s.label));
        out.sample_indices.push_back(i);
    }
    if (members == 0) throw DataError(std::string("split '") + to_string(split) + "' is empty");
    if (out.labels.empty()) {
        throw DataError(std::string("every file of split '") + to_string(split) + "' is quarantined (" +
                        std::to_string(members) + " files)");
    }
    return out;
}

inline PreparedSplit prepare_split(const DatasetManifest& m, Split split, std::size_t image_size) {
    SampleStore store(image_size);
    return prepare_split(m, split, store);
}

/// Minibatches over a prepared split, in manifest order or in a seeded
/// permutation. The final partial batch is emitted.
template <typename T>
class BatchIterator {
public:
    BatchIterator(const PreparedSplit& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = {})
        : data_(&data), batch_size_(batch_size) {
        if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
        if (data.size() == 0) throw DataError("batch iterator over an empty split");
        if (shuffle_seed) {
            Rng rng(*shuffle_seed);
            order_ = rng.permutation(data.size());
        } else {
            order_.resize(data.size());
            std::iota(order_.begin(), order_.end(), std::size_t{0});
        }
    }

    std::optional<ImageBatch<T>> next() {
        if (pos_ >= order_.size()) return std::nullopt;
        const std::size_t n = std::min(batch_size_, order_.size() - pos_);
        const std::size_t s = data_->image_size;
        const std::size_t stride = data_->sample_stride();
        ImageBatch<T> b{Tensor<T>({n, 3, s, s}), {}, {}};
        auto dst = b.images.data();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = order_[pos_ + i];
            const double* src = data_->pixels.data() + idx * stride;
            for (std::size_t k = 0; k < stride; ++k) dst[i * stride + k] = static_cast<T>(src[k]);
            b.labels.push_back(data_->labels[idx]);
            b.indices.push_back(idx);
        }
        pos_ += n;
        return b;
    }

    void reset() { pos_ = 0; }

private:
    const PreparedSplit* data_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

}  // namespace swinsight
