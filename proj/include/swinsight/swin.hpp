#pragma once

// Hierarchical shifted-window transformer classifier: patch embedding,
// alternating regular / shifted window attention blocks, patch merging
// between stages, global average pooling, and a two-class linear head.
//
// Token layout inside a stage is [B, G, G, C] (row-major over the patch grid).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "autodiff.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace swinsight {

/// Class index mapping. Positive class for metrics is kCgi.
enum class Label : int { Real = 0, Cgi = 1 };
inline constexpr int kNumClasses = 2;
inline constexpr const char* kClassNames[kNumClasses] = {"real", "cgi"};

/// Additive score for token pairs that straddle a cyclic-shift boundary.
inline constexpr double kMaskValue = -1e4;

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 2;
    std::size_t embed_dim = 16;
    std::vector<std::size_t> depths{1, 1, 2};
    std::vector<std::size_t> num_heads{2, 2, 4};
    std::size_t window_size = 4;
    double mlp_ratio = 2.0;
    std::size_t num_classes = 2;
    bool use_relative_position_bias = true;
    double drop_rate = 0.0;

    std::size_t num_stages() const { return depths.size(); }
    std::size_t stage_dim(std::size_t s) const { return embed_dim << s; }
    std::size_t grid_side(std::size_t s) const { return (image_size / patch_size) >> s; }
    /// Window clamped to the stage's grid side.
    std::size_t stage_window(std::size_t s) const { return std::min(window_size, grid_side(s)); }
    std::size_t stage_shift(std::size_t s) const {
        const std::size_t w = stage_window(s);
        return w < grid_side(s) ? w / 2 : 0;
    }
    std::size_t hidden_dim(std::size_t s) const {
        return static_cast<std::size_t>(std::llround(static_cast<double>(stage_dim(s)) * mlp_ratio));
    }
    std::size_t final_dim() const { return stage_dim(num_stages() - 1); }

    void validate() const {
        auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
        if (image_size == 0 || patch_size == 0 || embed_dim == 0 || window_size == 0) fail("sizes must be positive");
        if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
        if (depths.empty() || depths.size() != num_heads.size()) fail("depths and num_heads must be non-empty and equal length");
        if (num_classes != 2) fail("num_classes must be 2");
        if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
        if (!(drop_rate >= 0.0 && drop_rate < 1.0)) fail("drop_rate must be in [0, 1)");
        const std::size_t g0 = image_size / patch_size;
        for (std::size_t s = 0; s < depths.size(); ++s) {
            if (depths[s] == 0) fail("every stage needs at least one block");
            if (num_heads[s] == 0 || stage_dim(s) % num_heads[s] != 0) {
                fail("stage " + std::to_string(s) + " dim " + std::to_string(stage_dim(s)) +
                     " not divisible by num_heads " + std::to_string(num_heads[s]));
            }
            if (s > 0 && (g0 >> (s - 1)) % 2 != 0) fail("patch merging needs an even grid before stage " + std::to_string(s));
            if (grid_side(s) == 0) fail("too many stages for the patch grid");
            if (grid_side(s) % stage_window(s) != 0) {
                fail("stage " + std::to_string(s) + " grid " + std::to_string(grid_side(s)) +
                     " not divisible by window " + std::to_string(stage_window(s)));
            }
            if (hidden_dim(s) == 0) fail("mlp hidden width rounds to zero");
        }
    }

    /// Canonical key=value text, one key per line in a fixed order.
    std::string to_text() const {
        std::ostringstream os;
        auto list = [](const std::vector<std::size_t>& v) {
            std::string out;
            for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
            return out;
        };
        os.precision(17);
        os << "image_size=" << image_size << '\n'
           << "patch_size=" << patch_size << '\n'
           << "embed_dim=" << embed_dim << '\n'
           << "depths=" << list(depths) << '\n'
           << "num_heads=" << list(num_heads) << '\n'
           << "window_size=" << window_size << '\n'
           << "mlp_ratio=" << mlp_ratio << '\n'
           << "num_classes=" << num_classes << '\n'
           << "relative_position_bias=" << (use_relative_position_bias ? "true" : "false") << '\n'
           << "drop_rate=" << drop_rate << '\n';
        return os.str();
    }

    /// Applies one key=value setting. Returns false for keys it does not own.
    bool set(const std::string& key, const std::string& value) {
        auto to_size = [&](const std::string& v) -> std::size_t {
            try {
                std::size_t pos = 0;
                const long long n = std::stoll(v, &pos);
                if (pos != v.size() || n < 0) throw std::invalid_argument(v);
                return static_cast<std::size_t>(n);
            } catch (const std::exception&) {
                throw ConfigError("model config: '" + key + "' expects a non-negative integer, got '" + v + "'");
            }
        };
        auto to_double = [&](const std::string& v) {
            try {
                std::size_t pos = 0;
                const double d = std::stod(v, &pos);
                if (pos != v.size()) throw std::invalid_argument(v);
                return d;
            } catch (const std::exception&) {
                throw ConfigError("model config: '" + key + "' expects a number, got '" + v + "'");
            }
        };
        auto to_list = [&](const std::string& v) {
            std::vector<std::size_t> out;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) {
                const auto b = item.find_first_not_of(" \t");
                const auto e = item.find_last_not_of(" \t");
                out.push_back(to_size(b == std::string::npos ? std::string() : item.substr(b, e - b + 1)));
            }
            return out;
        };
        if (key == "image_size") image_size = to_size(value);
        else if (key == "patch_size") patch_size = to_size(value);
        else if (key == "embed_dim") embed_dim = to_size(value);
        else if (key == "depths") depths = to_list(value);
        else if (key == "num_heads") num_heads = to_list(value);
        else if (key == "window_size") window_size = to_size(value);
        else if (key == "mlp_ratio") mlp_ratio = to_double(value);
        else if (key == "num_classes") num_classes = to_size(value);
        else if (key == "drop_rate") drop_rate = to_double(value);
        else if (key == "relative_position_bias") {
            if (value == "true" || value == "1") use_relative_position_bias = true;
            else if (value == "false" || value == "0") use_relative_position_bias = false;
            else throw ConfigError("model config: relative_position_bias expects true/false, got '" + value + "'");
        } else {
            return false;
        }
        return true;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named architecture presets: "swin-micro" (desk scale, the default) and
/// "swin-t-like" (224 input, four stages).
inline ModelConfig model_preset(std::string_view name) {
    ModelConfig c;
    if (name == "swin-micro") return c;
    if (name == "swin-t-like") {
        c.image_size = 224;
        c.patch_size = 4;
        c.embed_dim = 96;
        c.depths = {2, 2, 6, 2};
        c.num_heads = {3, 6, 12, 24};
        c.window_size = 7;
        c.mlp_ratio = 4.0;
        return c;
    }
    throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Window machinery

/// [B, G, G, C] rolled by (-shift, -shift) over the spatial torus:
/// out[i][j] = x[(i + shift) % G][(j + shift) % G].
template <typename T>
Var<T> cyclic_shift(const Var<T>& x, std::size_t shift) {
    if (x.value().rank() != 4) throw ShapeError("cyclic_shift expects [B, H, W, C], got " + to_string(x.shape()));
    Var<T> out = x;
    for (int axis : {1, 2}) {
        const std::size_t g = out.value().dim(axis);
        const std::size_t s = shift % g;
        if (s == 0) continue;
        out = concat<T>({slice(out, axis, s, g - s), slice(out, axis, 0, s)}, axis);
    }
    return out;
}

/// Inverse of cyclic_shift: roll by (+shift, +shift).
template <typename T>
Var<T> cyclic_unshift(const Var<T>& x, std::size_t shift) {
    if (x.value().rank() != 4) throw ShapeError("cyclic_unshift expects [B, H, W, C], got " + to_string(x.shape()));
    Var<T> out = x;
    for (int axis : {1, 2}) {
        const std::size_t g = out.value().dim(axis);
        const std::size_t s = shift % g;
        if (s == 0) continue;
        out = concat<T>({slice(out, axis, g - s, s), slice(out, axis, 0, g - s)}, axis);
    }
    return out;
}

/// [B, Hp, Wp, C] -> [B * nW, w*w, C]. Windows are enumerated row-major per
/// image, tokens inside a window row-major.
template <typename T>
Var<T> window_partition(const Var<T>& x, std::size_t window) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("window_partition expects [B, Hp, Wp, C], got " + to_string(s));
    const std::size_t b = s[0], hp = s[1], wp = s[2], c = s[3];
    if (window == 0 || hp % window != 0 || wp % window != 0) {
        throw ShapeError("window_partition: grid " + std::to_string(hp) + "x" + std::to_string(wp) +
                         " not divisible by window " + std::to_string(window));
    }
    auto v = reshape(x, {b, hp / window, window, wp / window, window, c});
    v = permute(v, {0, 1, 3, 2, 4, 5});
    return reshape(v, {b * (hp / window) * (wp / window), window * window, c});
}

/// Exact inverse of window_partition.
template <typename T>
Var<T> window_reverse(const Var<T>& windows, std::size_t window, std::size_t hp, std::size_t wp) {
    const auto& s = windows.shape();
    if (s.size() != 3 || s[1] != window * window || hp % window != 0 || wp % window != 0) {
        throw ShapeError("window_reverse: bad window tensor " + to_string(s));
    }
    const std::size_t per_image = (hp / window) * (wp / window);
    if (s[0] % per_image != 0) throw ShapeError("window_reverse: window count does not match grid");
    const std::size_t b = s[0] / per_image, c = s[2];
    auto v = reshape(windows, {b, hp / window, wp / window, window, window, c});
    v = permute(v, {0, 1, 3, 2, 4, 5});
    return reshape(v, {b, hp, wp, c});
}

/// Additive attention mask [nW, N, N] for a shifted window layout. Token
/// pairs from different pre-shift regions get kMaskValue; everything else 0.
/// All zeros when shift == 0.
template <typename T>
Tensor<T> shifted_window_mask(std::size_t grid, std::size_t window, std::size_t shift) {
    if (grid % window != 0) throw ShapeError("shifted_window_mask: grid not divisible by window");
    const std::size_t per_side = grid / window;
    const std::size_t nw = per_side * per_side, n = window * window;
    Tensor<T> mask({nw, n, n});
    if (shift == 0) return mask;
    auto region = [&](std::size_t i) -> int {
        if (i < grid - window) return 0;
        if (i < grid - shift) return 1;
        return 2;
    };
    std::vector<int> label(grid * grid);
    for (std::size_t i = 0; i < grid; ++i) {
        for (std::size_t j = 0; j < grid; ++j) label[i * grid + j] = region(i) * 3 + region(j);
    }
    for (std::size_t wi = 0; wi < per_side; ++wi) {
        for (std::size_t wj = 0; wj < per_side; ++wj) {
            const std::size_t w = wi * per_side + wj;
            std::vector<int> ids(n);
            for (std::size_t a = 0; a < window; ++a) {
                for (std::size_t b = 0; b < window; ++b) ids[a * window + b] = label[(wi * window + a) * grid + wj * window + b];
            }
            for (std::size_t p = 0; p < n; ++p) {
                for (std::size_t q = 0; q < n; ++q) {
                    if (ids[p] != ids[q]) mask.at({w, p, q}) = static_cast<T>(kMaskValue);
                }
            }
        }
    }
    return mask;
}

/// For every (query, key) token pair of a window, the row of the relative
/// position bias table holding their (dy, dx) offset.
inline std::vector<std::size_t> relative_position_index(std::size_t window) {
    const std::size_t n = window * window;
    const std::size_t span = 2 * window - 1;
    std::vector<std::size_t> index(n * n);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            const std::size_t dy = p / window + window - 1 - q / window;
            const std::size_t dx = p % window + window - 1 - q % window;
            index[p * n + q] = dy * span + dx;
        }
    }
    return index;
}

template <typename T>
struct AttentionParams {
    Var<T> qkv_weight;  // [C, 3C]
    Var<T> qkv_bias;    // [3C]
    Var<T> proj_weight; // [C, C]
    Var<T> proj_bias;   // [C]
    std::optional<Var<T>> relative_bias_table;  // [(2w-1)^2, heads]
};

/// Multi-head self-attention inside each window.
///
/// x is [num_windows, N, C]; mask, when given, is [nW, N, N] and is tiled over
/// the batch (num_windows must be a multiple of nW). If attention_weights is
/// non-null it receives the post-softmax weights [num_windows, heads, N, N].
template <typename T>
Var<T> window_attention(const Var<T>& x, const AttentionParams<T>& p, const Tensor<T>* mask, std::size_t num_heads,
                        std::size_t window, Var<T>* attention_weights = nullptr) {
    const auto& s = x.shape();
    if (s.size() != 3) throw ShapeError("window_attention expects [windows, N, C], got " + to_string(s));
    const std::size_t bw = s[0], n = s[1], c = s[2];
    if (num_heads == 0 || c % num_heads != 0) throw ShapeError("window_attention: C not divisible by num_heads");
    if (n != window * window) throw ShapeError("window_attention: N != window^2");
    const std::size_t dk = c / num_heads;
    Tape<T>& tape = x.tape();

    auto qkv = linear(x, p.qkv_weight, p.qkv_bias);                     // [bw, n, 3c]
    qkv = reshape(qkv, {bw, n, 3, num_heads, dk});
    qkv = permute(qkv, {2, 0, 3, 1, 4});                                // [3, bw, h, n, dk]
    auto q = reshape(slice(qkv, 0, 0, 1), {bw, num_heads, n, dk});
    auto k = reshape(slice(qkv, 0, 1, 1), {bw, num_heads, n, dk});
    auto v = reshape(slice(qkv, 0, 2, 1), {bw, num_heads, n, dk});

    q = scale(q, T(1) / std::sqrt(static_cast<T>(dk)));
    auto scores = matmul(q, transpose(k));                              // [bw, h, n, n]

    if (p.relative_bias_table) {
        auto bias = index_select(*p.relative_bias_table, relative_position_index(window));  // [n*n, h]
        bias = reshape(permute(bias, {1, 0}), {1, num_heads, n, n});
        scores = add(scores, expand(bias, {bw, num_heads, n, n}));
    }
    if (mask) {
        const auto& ms = mask->shape();
        if (ms.size() != 3 || ms[1] != n || ms[2] != n || bw % ms[0] != 0) {
            throw ShapeError("window_attention: mask " + to_string(ms) + " incompatible with " + to_string(s));
        }
        const std::size_t nw = ms[0];
        Tensor<T> full({bw, num_heads, n, n});
        auto dst = full.data();
        auto src = mask->data();
        for (std::size_t w = 0; w < bw; ++w) {
            for (std::size_t h = 0; h < num_heads; ++h) {
                std::copy_n(src.data() + (w % nw) * n * n, n * n, dst.data() + (w * num_heads + h) * n * n);
            }
        }
        scores = add(scores, tape.constant(std::move(full)));
    }
    auto attn = softmax(scores, -1);
    if (attention_weights) *attention_weights = attn;

    auto out = matmul(attn, v);                                         // [bw, h, n, dk]
    out = reshape(permute(out, {0, 2, 1, 3}), {bw, n, c});
    return linear(out, p.proj_weight, p.proj_bias);
}

template <typename T>
struct BlockParams {
    Var<T> norm1_weight, norm1_bias;
    AttentionParams<T> attn;
    Var<T> norm2_weight, norm2_bias;
    Var<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// Inverted dropout; identity unless rng is given and rate > 0.
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng* rng) {
    if (!rng || rate <= 0.0) return x;
    Tensor<T> keep(x.shape());
    const T scale_kept = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& v : keep.data()) v = rng->uniform() < rate ? T(0) : scale_kept;
    return mul(x, x.tape().constant(std::move(keep)));
}

/// One transformer block on [B, G, G, C]:
///   x + attn(LN(x)) (cyclic shift + mask when shift > 0), then + MLP(LN(.)).
template <typename T>
Var<T> swin_block(const Var<T>& x, const BlockParams<T>& p, std::size_t num_heads, std::size_t window, std::size_t shift,
                  const Tensor<T>* mask, double drop_rate = 0.0, Rng* dropout_rng = nullptr) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[1] != s[2]) throw ShapeError("swin_block expects [B, G, G, C], got " + to_string(s));
    const std::size_t g = s[1];
    if (shift >= window && shift != 0) throw ShapeError("swin_block: shift must be < window");

    auto h = layernorm(x, p.norm1_weight, p.norm1_bias);
    if (shift > 0) h = cyclic_shift(h, shift);
    auto windows = window_partition(h, window);
    auto attn = window_attention(windows, p.attn, shift > 0 ? mask : nullptr, num_heads, window);
    auto merged = window_reverse(attn, window, g, g);
    if (shift > 0) merged = cyclic_unshift(merged, shift);
    auto y = add(x, dropout(merged, drop_rate, dropout_rng));

    auto m = layernorm(y, p.norm2_weight, p.norm2_bias);
    m = gelu(linear(m, p.fc1_weight, p.fc1_bias));
    m = linear(m, p.fc2_weight, p.fc2_bias);
    return add(y, dropout(m, drop_rate, dropout_rng));
}

/// [B, Hp, Wp, C] -> [B, Hp/2, Wp/2, 2C]: concat each 2x2 neighborhood in the
/// order (0,0), (1,0), (0,1), (1,1), layernorm over 4C, project to 2C.
template <typename T>
Var<T> patch_merging(const Var<T>& x, const Var<T>& norm_weight, const Var<T>& norm_bias, const Var<T>& reduction) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("patch_merging expects [B, Hp, Wp, C], got " + to_string(s));
    const std::size_t b = s[0], hp = s[1], wp = s[2], c = s[3];
    if (hp % 2 != 0 || wp % 2 != 0) throw ShapeError("patch_merging: odd grid " + to_string(s));
    auto v = reshape(x, {b, hp / 2, 2, wp / 2, 2, c});   // [b, i, dy, j, dx, c]
    v = permute(v, {0, 1, 3, 4, 2, 5});                   // [b, i, j, dx, dy, c]
    v = reshape(v, {b, hp / 2, wp / 2, 4 * c});
    v = layernorm(v, norm_weight, norm_bias);
    return matmul(v, reduction);
}

/// [B, 3, H, W] -> [B, (H/p)(W/p), C]. Patch pixels are flattened channel-major
/// then row-major inside the patch; tokens are row-major over the patch grid.
template <typename T>
Var<T> patch_embed(const Var<T>& images, const Var<T>& weight, const Var<T>& bias, std::size_t patch) {
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != 3) throw ShapeError("patch_embed expects [B, 3, H, W], got " + to_string(s));
    const std::size_t b = s[0], h = s[2], w = s[3];
    if (patch == 0 || h % patch != 0 || w % patch != 0) throw ShapeError("patch_embed: image not divisible into patches");
    const std::size_t gh = h / patch, gw = w / patch;
    auto v = reshape(images, {b, 3, gh, patch, gw, patch});
    v = permute(v, {0, 2, 4, 1, 3, 5});                   // [b, gh, gw, 3, p, p]
    v = reshape(v, {b, gh * gw, 3 * patch * patch});
    return linear(v, weight, bias);
}

// ---------------------------------------------------------------------------
// Model

struct ForwardOptions {
    bool training = false;
    Rng* dropout_rng = nullptr;
};

template <typename T>
class SwinModel {
public:
    using ParameterMap = std::map<std::string, Tensor<T>>;

    /// Fresh model: truncated-normal(0.02) projections and bias tables, zero
    /// biases, unit/zero layernorm affines.
    SwinModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(seed);
        for (const auto& [name, shape] : expected_shapes(config_)) {
            Tensor<T> t(shape);
            if (is_norm_weight(name)) {
                t.fill(T(1));
            } else if (!is_bias(name)) {
                for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
            }
            params_.emplace(name, std::move(t));
        }
        build_masks();
    }

    SwinModel(ModelConfig config, ParameterMap params) : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
        audit();
        build_masks();
    }

    /// Every parameter name and shape implied by a config.
    static std::map<std::string, Shape> expected_shapes(const ModelConfig& c) {
        std::map<std::string, Shape> out;
        const std::size_t p = c.patch_size;
        out["patch_embed.weight"] = {3 * p * p, c.embed_dim};
        out["patch_embed.bias"] = {c.embed_dim};
        out["patch_norm.weight"] = {c.embed_dim};
        out["patch_norm.bias"] = {c.embed_dim};
        for (std::size_t s = 0; s < c.num_stages(); ++s) {
            const std::size_t d = c.stage_dim(s), hid = c.hidden_dim(s), w = c.stage_window(s);
            for (std::size_t b = 0; b < c.depths[s]; ++b) {
                const std::string pre = block_prefix(s, b);
                out[pre + "norm1.weight"] = {d};
                out[pre + "norm1.bias"] = {d};
                out[pre + "attn.qkv.weight"] = {d, 3 * d};
                out[pre + "attn.qkv.bias"] = {3 * d};
                out[pre + "attn.proj.weight"] = {d, d};
                out[pre + "attn.proj.bias"] = {d};
                if (c.use_relative_position_bias) {
                    out[pre + "attn.relative_position_bias_table"] = {(2 * w - 1) * (2 * w - 1), c.num_heads[s]};
                }
                out[pre + "norm2.weight"] = {d};
                out[pre + "norm2.bias"] = {d};
                out[pre + "mlp.fc1.weight"] = {d, hid};
                out[pre + "mlp.fc1.bias"] = {hid};
                out[pre + "mlp.fc2.weight"] = {hid, d};
                out[pre + "mlp.fc2.bias"] = {d};
            }
            if (s + 1 < c.num_stages()) {
                const std::string pre = "stages." + std::to_string(s) + ".downsample.";
                out[pre + "norm.weight"] = {4 * d};
                out[pre + "norm.bias"] = {4 * d};
                out[pre + "reduction.weight"] = {4 * d, 2 * d};
            }
        }
        out["norm.weight"] = {c.final_dim()};
        out["norm.bias"] = {c.final_dim()};
        out["head.weight"] = {c.final_dim(), static_cast<std::size_t>(kNumClasses)};
        out["head.bias"] = {static_cast<std::size_t>(kNumClasses)};
        return out;
    }

    /// Verifies the parameter set is exactly the one the config implies.
    void audit() const {
        const auto expected = expected_shapes(config_);
        for (const auto& [name, shape] : expected) {
            auto it = params_.find(name);
            if (it == params_.end()) throw ShapeError("parameter audit: missing '" + name + "'");
            if (it->second.shape() != shape) {
                throw ShapeError("parameter audit: '" + name + "' has shape " + to_string(it->second.shape()) +
                                 ", config implies " + to_string(shape));
            }
        }
        for (const auto& [name, t] : params_) {
            if (!expected.count(name)) throw ShapeError("parameter audit: unexpected parameter '" + name + "'");
        }
    }

    const ModelConfig& config() const noexcept { return config_; }
    ParameterMap& parameters() noexcept { return params_; }
    const ParameterMap& parameters() const noexcept { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

    /// Parameters placed on a tape as leaves.
    struct Bound {
        std::map<std::string, Var<T>> vars;
        const Var<T>& operator[](const std::string& name) const { return vars.at(name); }
    };

    Bound bind(Tape<T>& tape, bool requires_grad) const {
        Bound b;
        for (const auto& [name, t] : params_) b.vars.emplace(name, tape.leaf(t, requires_grad));
        return b;
    }

    /// Globally average-pooled representation before the head, [B, final_dim].
    Var<T> features(const Bound& p, const Var<T>& images, const ForwardOptions& opt = {}) const {
        check_input(images.value());
        const ModelConfig& c = config_;
        const std::size_t b = images.shape()[0];
        Rng* rng = (opt.training && c.drop_rate > 0.0) ? opt.dropout_rng : nullptr;

        auto x = patch_embed(images, p["patch_embed.weight"], p["patch_embed.bias"], c.patch_size);
        x = layernorm(x, p["patch_norm.weight"], p["patch_norm.bias"]);
        x = dropout(x, c.drop_rate, rng);
        std::size_t g = c.grid_side(0);
        x = reshape(x, {b, g, g, c.embed_dim});

        for (std::size_t s = 0; s < c.num_stages(); ++s) {
            const std::size_t w = c.stage_window(s);
            for (std::size_t blk = 0; blk < c.depths[s]; ++blk) {
                const std::size_t shift = (blk % 2 == 1) ? c.stage_shift(s) : 0;
                x = swin_block(x, block_params(p, s, blk), c.num_heads[s], w, shift, &masks_[s], c.drop_rate, rng);
            }
            if (s + 1 < c.num_stages()) {
                const std::string pre = "stages." + std::to_string(s) + ".downsample.";
                x = patch_merging(x, p[pre + "norm.weight"], p[pre + "norm.bias"], p[pre + "reduction.weight"]);
                g /= 2;
            }
        }
        x = reshape(x, {b, g * g, c.final_dim()});
        x = layernorm(x, p["norm.weight"], p["norm.bias"]);
        return mean_axis(x, 1);
    }

    Var<T> head(const Bound& p, const Var<T>& features) const {
        return linear(features, p["head.weight"], p["head.bias"]);
    }

    Var<T> logits(const Bound& p, const Var<T>& images, const ForwardOptions& opt = {}) const {
        return head(p, features(p, images, opt));
    }

    /// Eval-mode logits [B, 2].
    Tensor<T> forward(const Tensor<T>& batch) const {
        Tape<T> tape;
        const Bound p = bind(tape, false);
        return logits(p, tape.constant(batch)).value();
    }

    /// Eval-mode pooled features [B, final_dim].
    Tensor<T> extract_features(const Tensor<T>& batch) const {
        Tape<T> tape;
        const Bound p = bind(tape, false);
        return features(p, tape.constant(batch)).value();
    }

    Tensor<T> apply_head(const Tensor<T>& features) const {
        Tape<T> tape;
        const Bound p = bind(tape, false);
        return head(p, tape.constant(features)).value();
    }

    static std::string block_prefix(std::size_t stage, std::size_t block) {
        return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
    }

    BlockParams<T> block_params(const Bound& p, std::size_t s, std::size_t blk) const {
        const std::string pre = block_prefix(s, blk);
        BlockParams<T> bp;
        bp.norm1_weight = p[pre + "norm1.weight"];
        bp.norm1_bias = p[pre + "norm1.bias"];
        bp.attn.qkv_weight = p[pre + "attn.qkv.weight"];
        bp.attn.qkv_bias = p[pre + "attn.qkv.bias"];
        bp.attn.proj_weight = p[pre + "attn.proj.weight"];
        bp.attn.proj_bias = p[pre + "attn.proj.bias"];
        if (config_.use_relative_position_bias) bp.attn.relative_bias_table = p[pre + "attn.relative_position_bias_table"];
        bp.norm2_weight = p[pre + "norm2.weight"];
        bp.norm2_bias = p[pre + "norm2.bias"];
        bp.fc1_weight = p[pre + "mlp.fc1.weight"];
        bp.fc1_bias = p[pre + "mlp.fc1.bias"];
        bp.fc2_weight = p[pre + "mlp.fc2.weight"];
        bp.fc2_bias = p[pre + "mlp.fc2.bias"];
        return bp;
    }

private:
    static bool ends_with(const std::string& s, std::string_view suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    }
    static bool is_bias(const std::string& name) { return ends_with(name, ".bias"); }
    static bool is_norm_weight(const std::string& name) {
        return ends_with(name, "norm.weight") || ends_with(name, "norm1.weight") || ends_with(name, "norm2.weight");
    }

    void check_input(const Tensor<T>& images) const {
        const auto& s = images.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != config_.image_size || s[3] != config_.image_size) {
            throw ShapeError("model expects [B, 3, " + std::to_string(config_.image_size) + ", " +
                             std::to_string(config_.image_size) + "] input, got " + to_string(s));
        }
    }

    void build_masks() {
        masks_.clear();
        for (std::size_t s = 0; s < config_.num_stages(); ++s) {
            masks_.push_back(shifted_window_mask<T>(config_.grid_side(s), config_.stage_window(s), config_.stage_shift(s)));
        }
    }

    ModelConfig config_;
    ParameterMap params_;
    std::vector<Tensor<T>> masks_;
};

}  // namespace swinsight
