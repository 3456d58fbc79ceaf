#pragma once

// Shared test helpers: random tensors, a finite-difference gradient checker,
// temporary directories, and independent reference implementations used as
// oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <swinsight/swinsight.hpp>

namespace testing_support {

using swinsight::Shape;
using swinsight::Tape;
using swinsight::Tensor;
using swinsight::Var;

inline Tensor<double> random_tensor(const Shape& shape, swinsight::Rng& rng, double scale = 1.0) {
    Tensor<double> t(shape);
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

inline Tensor<float> random_tensor_f(const Shape& shape, swinsight::Rng& rng, double scale = 1.0) {
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
    return t;
}

/// ||a - n|| / (||a|| + ||n||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nn);
    return denom == 0 ? 0.0 : std::sqrt(diff) / denom;
}

using LossBuilder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheck {
    double worst = 0;
    std::size_t worst_input = 0;
    std::size_t entries_checked = 0;
};

/// Central differences (step h) against reverse mode for every input tensor.
/// With max_entries set, a seeded random subset of each tensor is checked.
inline GradCheck check_gradients(const LossBuilder& f, const std::vector<Tensor<double>>& inputs, double h = 1e-3,
                                 std::size_t max_entries = std::numeric_limits<std::size_t>::max(),
                                 std::uint64_t seed = 1) {
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
        const auto loss = f(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(tape.grad(v));
    }
    auto eval = [&](const std::vector<Tensor<double>>& xs) {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& t : xs) vars.push_back(tape.leaf(t, false));
        return f(tape, vars).value()[0];
    };
    GradCheck result;
    swinsight::Rng rng(seed);
    std::vector<Tensor<double>> xs = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::size_t n = inputs[k].size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        if (n > max_entries) {
            const auto perm = rng.permutation(n);
            idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(max_entries));
        }
        std::vector<double> a, num;
        for (std::size_t i : idx) {
            const double orig = xs[k][i];
            xs[k][i] = orig + h;
            const double up = eval(xs);
            xs[k][i] = orig - h;
            const double down = eval(xs);
            xs[k][i] = orig;
            num.push_back((up - down) / (2 * h));
            a.push_back(analytic[k][i]);
        }
        result.entries_checked += idx.size();
        const double err = relative_error(a, num);
        if (err > result.worst) {
            result.worst = err;
            result.worst_input = k;
        }
    }
    return result;
}

/// sum(y * R) for a fixed random R: turns any output into a scalar whose
/// gradient exercises every output entry.
inline Var<double> project(const Var<double>& y, std::uint64_t seed = 99) {
    swinsight::Rng rng(seed);
    auto r = y.tape().constant(random_tensor(y.shape(), rng));
    return swinsight::sum(swinsight::mul(y, r));
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("swinsight_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Oracles

/// Plain triple loop over row-major [m, k] x [k, n].
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                         std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
    return c;
}

/// L = -(1/N) sum_i sum_j y_ij log p_ij with one-hot y, p a naive softmax.
inline double cross_entropy_literal(const std::vector<double>& logits, const std::vector<int>& labels, std::size_t classes) {
    const std::size_t n = labels.size();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(logits[i * classes + j]);
        for (std::size_t j = 0; j < classes; ++j) {
            const double y = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
            total += y * std::log(std::exp(logits[i * classes + j]) / z);
        }
    }
    return -total / static_cast<double>(n);
}

struct ScalarAdam {
    double lr, b1, b2, eps;
    double m = 0, v = 0;
    int t = 0;
    double step(double w, double g) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return w - lr * mh / (std::sqrt(vh) + eps);
    }
};

/// Tie-adjusted Mann-Whitney statistic: P(score_pos > score_neg) + P(tie)/2.
inline double mann_whitney_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

inline double sqdist(const std::vector<double>& x, std::size_t d, std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (x[i * d + k] - x[j * d + k]) * (x[i * d + k] - x[j * d + k]);
    return s;
}

/// Symmetrized Gaussian affinities from given per-point sigmas, evaluated
/// directly from the formulas.
inline std::vector<double> affinities_oracle(const std::vector<double>& x, std::size_t n, std::size_t d,
                                             const std::vector<double>& sigma) {
    std::vector<double> cond(n * n, 0.0), p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k != i) z += std::exp(-sqdist(x, d, i, k) / (2 * sigma[i] * sigma[i]));
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) cond[i * n + j] = std::exp(-sqdist(x, d, i, j) / (2 * sigma[i] * sigma[i])) / z;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n);
    }
    return p;
}

inline double row_entropy_bits(const std::vector<double>& cond, std::size_t n, std::size_t i) {
    double h = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double v = cond[i * n + j];
        if (v > 0) h -= v * std::log2(v);
    }
    return h;
}

inline std::vector<double> student_oracle(const std::vector<double>& y, std::size_t n) {
    std::vector<double> q(n * n, 0.0);
    double z = 0;
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t l = 0; l < n; ++l) {
            if (k != l) z += 1.0 / (1.0 + sqdist(y, 2, k, l));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) q[i * n + j] = 1.0 / (1.0 + sqdist(y, 2, i, j)) / z;
        }
    }
    return q;
}

inline double gelu_ref(double x) {
    return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

/// Standard pre-norm transformer block with global multi-head attention over
/// all G*G tokens of one image, relative position bias indexed by 2-D token
/// offset. Written with plain loops over [G*G, C] row-major input.
inline std::vector<double> global_block_oracle(const std::vector<double>& x, std::size_t g, std::size_t c,
                                               std::size_t heads,
                                               const std::map<std::string, Tensor<double>>& p,
                                               const std::string& pre) {
    const std::size_t n = g * g, dk = c / heads;
    auto get = [&](const std::string& k) -> const Tensor<double>& { return p.at(pre + k); };
    auto ln = [](const std::vector<double>& in, std::size_t rows, std::size_t cols, const Tensor<double>& w,
                 const Tensor<double>& b) {
        std::vector<double> out(in.size());
        for (std::size_t r = 0; r < rows; ++r) {
            double mean = 0, var = 0;
            for (std::size_t j = 0; j < cols; ++j) mean += in[r * cols + j];
            mean /= cols;
            for (std::size_t j = 0; j < cols; ++j) var += (in[r * cols + j] - mean) * (in[r * cols + j] - mean);
            var /= cols;
            for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = (in[r * cols + j] - mean) / std::sqrt(var + 1e-5) * w[j] + b[j];
        }
        return out;
    };
    auto lin = [](const std::vector<double>& in, std::size_t rows, std::size_t cin, const Tensor<double>& w,
                  const Tensor<double>& b) {
        const std::size_t cout = w.dim(1);
        std::vector<double> out(rows * cout);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < cout; ++o) {
                double s = b[o];
                for (std::size_t i = 0; i < cin; ++i) s += in[r * cin + i] * w[i * cout + o];
                out[r * cout + o] = s;
            }
        }
        return out;
    };

    const auto h = ln(x, n, c, get("norm1.weight"), get("norm1.bias"));
    const auto qkv = lin(h, n, c, get("attn.qkv.weight"), get("attn.qkv.bias"));  // [n, 3c]: q | k | v, heads contiguous
    const Tensor<double>* table = p.count(pre + "attn.relative_position_bias_table") ? &get("attn.relative_position_bias_table") : nullptr;
    std::vector<double> att(n * c, 0.0);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> s(n);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0;
                for (std::size_t k = 0; k < dk; ++k) dot += qkv[i * 3 * c + hd * dk + k] * qkv[j * 3 * c + c + hd * dk + k];
                s[j] = dot / std::sqrt(static_cast<double>(dk));
                if (table) {
                    const long dy = static_cast<long>(i / g) - static_cast<long>(j / g) + static_cast<long>(g) - 1;
                    const long dx = static_cast<long>(i % g) - static_cast<long>(j % g) + static_cast<long>(g) - 1;
                    s[j] += (*table)[static_cast<std::size_t>(dy * (2 * static_cast<long>(g) - 1) + dx) * heads + hd];
                }
                mx = std::max(mx, s[j]);
            }
            double z = 0;
            for (auto& v : s) z += (v = std::exp(v - mx));
            for (std::size_t k = 0; k < dk; ++k) {
                double acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += s[j] / z * qkv[j * 3 * c + 2 * c + hd * dk + k];
                att[i * c + hd * dk + k] = acc;
            }
        }
    }
    const auto proj = lin(att, n, c, get("attn.proj.weight"), get("attn.proj.bias"));
    std::vector<double> y(n * c);
    for (std::size_t i = 0; i < n * c; ++i) y[i] = x[i] + proj[i];
    const auto m = ln(y, n, c, get("norm2.weight"), get("norm2.bias"));
    auto f1 = lin(m, n, c, get("mlp.fc1.weight"), get("mlp.fc1.bias"));
    for (auto& v : f1) v = gelu_ref(v);
    const std::size_t hid = get("mlp.fc1.weight").dim(1);
    const auto f2 = lin(f1, n, hid, get("mlp.fc2.weight"), get("mlp.fc2.bias"));
    for (std::size_t i = 0; i < n * c; ++i) y[i] += f2[i];
    return y;
}

/// A configuration small enough for exhaustive gradient checks: image 8,
/// patch 2, dims 8, the given depths.
inline swinsight::ModelConfig tiny_config(std::vector<std::size_t> depths = {1, 1}) {
    swinsight::ModelConfig c;
    c.image_size = 8;
    c.patch_size = 2;
    c.embed_dim = 8;
    c.depths = depths;
    c.num_heads = std::vector<std::size_t>(depths.size(), 2);
    c.window_size = 2;
    c.mlp_ratio = 2.0;
    return c;
}

/// Perturbs every parameter so zero-initialized biases and unit LN weights
/// do not hide gradient errors.
template <typename T>
void jitter_parameters(swinsight::SwinModel<T>& model, std::uint64_t seed, double scale = 0.3) {
    swinsight::Rng rng(seed);
    for (auto& [name, t] : model.parameters()) {
        for (auto& v : t.data()) v = static_cast<T>(v + scale * rng.normal());
    }
}

}  // namespace testing_support
