#pragma once

// Exact O(n^2) t-SNE in 64-bit: perplexity-calibrated Gaussian affinities,
// Student-t similarities, KL cost and its gradient, and a momentum
// gradient-descent driver with early exaggeration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace swinsight {

inline constexpr std::size_t kTsneMaxPoints = 5000;
inline constexpr double kPerplexityTolerance = 1e-4;  // bits

struct AffinityMatrix {
    std::size_t n = 0;
    double perplexity = 0;
    std::vector<double> p;            // symmetric joint, n x n, sums to 1
    std::vector<double> conditional;  // row i holds p_{j|i}
    std::vector<double> sigmas;       // +inf for rows with all-equal distances
    std::vector<double> entropies;    // H(P_i) in bits

    double operator()(std::size_t i, std::size_t j) const { return p[i * n + j]; }
};

namespace detail {

inline std::vector<double> squared_distances(const Tensor<double>& x) {
    if (x.rank() != 2) throw ShapeError("expected an [n, d] matrix, got " + to_string(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> out(n * n, 0.0);
    parallel_for(n, 16, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double s = 0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = x[i * d + k] - x[j * d + k];
                    s += diff * diff;
                }
                out[i * n + j] = s;
            }
        }
    });
    return out;
}

// Fills row i of the conditional distribution for precision beta = 1/(2 sigma^2)
// and returns its entropy in bits. Distances are shifted by the row minimum,
// which cancels in the normalization.
inline double conditional_row(const double* d2, std::size_t n, std::size_t i, double beta, double dmin, double* row) {
    double z = 0, weighted = 0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            row[j] = 0;
            continue;
        }
        const double shifted = d2[j] - dmin;
        row[j] = std::exp(-beta * shifted);
        z += row[j];
        weighted += shifted * row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
    return (std::log(z) + beta * weighted / z) / std::log(2.0);
}

}  // namespace detail

/// Per-point conditional Gaussian affinities with sigma_i found by bisection
/// so that H(P_i) = log2(perplexity), then p_ij = (p_{j|i} + p_{i|j}) / 2n.
/// A row whose off-diagonal distances are all equal is uniform for every
/// sigma; it is set uniform and not calibrated.
inline AffinityMatrix pairwise_affinities(const Tensor<double>& x, double perplexity) {
    if (x.rank() != 2) throw ShapeError("pairwise_affinities expects [n, d], got " + to_string(x.shape()));
    const std::size_t n = x.dim(0);
    if (n < 3) throw ConfigError("pairwise_affinities needs at least 3 points, got " + std::to_string(n));
    if (n > kTsneMaxPoints) throw ConfigError("t-SNE is limited to " + std::to_string(kTsneMaxPoints) + " points");
    if (!(perplexity > 0) || !(perplexity < static_cast<double>(n))) {
        throw ConfigError("perplexity must lie in (0, n); got " + std::to_string(perplexity) + " for n=" + std::to_string(n));
    }
    if (!x.all_finite()) throw NumericError("pairwise_affinities: non-finite input features");

    const auto d2 = detail::squared_distances(x);
    const double target = std::log2(perplexity);
    AffinityMatrix a;
    a.n = n;
    a.perplexity = perplexity;
    a.conditional.assign(n * n, 0.0);
    a.sigmas.assign(n, 0.0);
    a.entropies.assign(n, 0.0);

    parallel_for(n, 8, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const double* row_d = d2.data() + i * n;
            double* row = a.conditional.data() + i * n;
            double dmin = std::numeric_limits<double>::infinity(), dmax = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                dmin = std::min(dmin, row_d[j]);
                dmax = std::max(dmax, row_d[j]);
            }
            if (dmax - dmin <= 1e-12 * std::max(1.0, dmax)) {
                for (std::size_t j = 0; j < n; ++j) row[j] = j == i ? 0.0 : 1.0 / static_cast<double>(n - 1);
                a.sigmas[i] = std::numeric_limits<double>::infinity();
                a.entropies[i] = std::log2(static_cast<double>(n - 1));
                continue;
            }
            // Entropy falls monotonically as beta grows.
            double beta = 1.0 / std::max(dmax - dmin, 1e-300);
            double lo = 0, hi = std::numeric_limits<double>::infinity();
            double h = 0;
            for (int it = 0; it < 200; ++it) {
                h = detail::conditional_row(row_d, n, i, beta, dmin, row);
                const double diff = h - target;
                if (std::abs(diff) < 1e-10) break;
                if (diff > 0) {
                    lo = beta;
                    beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
                } else {
                    hi = beta;
                    beta = 0.5 * (beta + lo);
                }
            }
            a.sigmas[i] = std::sqrt(1.0 / (2.0 * beta));
            a.entropies[i] = h;
        }
    });

    std::size_t worst = 0;
    double worst_err = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isinf(a.sigmas[i])) continue;
        const double err = std::abs(a.entropies[i] - target);
        if (!(err <= worst_err)) {
            worst_err = err;
            worst = i;
        }
    }
    if (!(worst_err < kPerplexityTolerance)) {
        throw NumericError("perplexity bisection did not converge: point " + std::to_string(worst) + " has entropy " +
                           std::to_string(a.entropies[worst]) + " bits, target " + std::to_string(target));
    }

    a.p.assign(n * n, 0.0);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) a.p[i * n + j] = (a.conditional[i * n + j] + a.conditional[j * n + i]) / denom;
        }
    }
    return a;
}

namespace detail {

// Student-t kernel w_ij = 1 / (1 + |y_i - y_j|^2), zero diagonal, and its sum
// accumulated row by row in a fixed order.
inline double student_kernel(const Tensor<double>& y, std::vector<double>& w) {
    const std::size_t n = y.dim(0);
    w.assign(n * n, 0.0);
    std::vector<double> row_sums(n, 0.0);
    parallel_for(n, 16, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
                w[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
                s += w[i * n + j];
            }
            row_sums[i] = s;
        }
    });
    double total = 0;
    for (double s : row_sums) total += s;
    return total;
}

inline void check_embedding(const Tensor<double>& y) {
    if (y.rank() != 2 || y.dim(1) != 2) throw ShapeError("embedding must be [n, 2], got " + to_string(y.shape()));
}

}  // namespace detail

/// q_ij = w_ij / sum_{k != l} w_kl, row-major n x n.
inline std::vector<double> low_dim_similarities(const Tensor<double>& y) {
    detail::check_embedding(y);
    if (y.dim(0) < 2) throw ConfigError("low_dim_similarities needs at least 2 points");
    std::vector<double> w;
    const double total = detail::student_kernel(y, w);
    for (double& v : w) v /= total;
    return w;
}

/// C = sum p_ij log(p_ij / q_ij); zero-p terms contribute nothing.
inline double kl_cost(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ShapeError("kl_cost: P and Q sizes differ");
    double c = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= 0) continue;
        if (!(q[k] > 0)) throw NumericError("kl_cost: q is zero where p is positive (entry " + std::to_string(k) + ")");
        c += p[k] * std::log(p[k] / q[k]);
    }
    return c;
}

inline double kl_cost(const AffinityMatrix& p, const std::vector<double>& q) { return kl_cost(p.p, q); }

namespace detail {

// dC/dy_i = 4 sum_j (s p_ij - q_ij)(y_i - y_j) w_ij with s the exaggeration.
// Also returns Q through `q`.
inline Tensor<double> tsne_gradient(const std::vector<double>& p, double exaggeration, const Tensor<double>& y,
                                    std::vector<double>& q) {
    const std::size_t n = y.dim(0);
    std::vector<double> w;
    const double total = detail::student_kernel(y, w);
    q.resize(n * n);
    for (std::size_t k = 0; k < n * n; ++k) q[k] = w[k] / total;
    Tensor<double> g({n, 2});
    parallel_for(n, 16, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            double gx = 0, gy = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double f = (exaggeration * p[i * n + j] - q[i * n + j]) * w[i * n + j];
                gx += f * (y[2 * i] - y[2 * j]);
                gy += f * (y[2 * i + 1] - y[2 * j + 1]);
            }
            g[2 * i] = 4 * gx;
            g[2 * i + 1] = 4 * gy;
        }
    });
    return g;
}

}  // namespace detail

inline Tensor<double> tsne_gradient(const AffinityMatrix& p, const Tensor<double>& y) {
    detail::check_embedding(y);
    if (y.dim(0) != p.n) throw ShapeError("tsne_gradient: embedding has " + std::to_string(y.dim(0)) + " rows, P has " + std::to_string(p.n));
    std::vector<double> q;
    return detail::tsne_gradient(p.p, 1.0, y, q);
}

struct TsneOptions {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch = 250;
    double exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;
    double init_std = 1e-4;
    double min_gain = 0.01;
    std::uint64_t seed = 0;
};

struct Embedding {
    Tensor<double> y;                // [n, 2]
    std::size_t iterations = 0;
    std::vector<double> cost_trace;  // KL of the unexaggerated P after each update
    double perplexity = 0;           // after clamping
};

/// Default perplexity clamped to (n - 1) / 3 for small n.
inline double effective_perplexity(double requested, std::size_t n) {
    return std::min(requested, static_cast<double>(n - 1) / 3.0);
}

inline Embedding run_tsne(const Tensor<double>& x, const TsneOptions& opt = {}) {
    if (x.rank() != 2) throw ShapeError("run_tsne expects [n, d], got " + to_string(x.shape()));
    const std::size_t n = x.dim(0);
    if (n < 4) throw ConfigError("t-SNE needs at least 4 points, got " + std::to_string(n));
    if (n > kTsneMaxPoints) throw ConfigError("t-SNE is limited to " + std::to_string(kTsneMaxPoints) + " points, got " + std::to_string(n));
    if (!(opt.perplexity > 0) || opt.iterations == 0 || !(opt.learning_rate > 0) || !(opt.exaggeration > 0)) {
        throw ConfigError("t-SNE parameters must be positive");
    }
    Embedding out;
    out.perplexity = effective_perplexity(opt.perplexity, n);
    const AffinityMatrix p = pairwise_affinities(x, out.perplexity);

    Rng rng(opt.seed);
    out.y = Tensor<double>({n, 2});
    for (std::size_t k = 0; k < 2 * n; ++k) out.y[k] = opt.init_std * rng.normal();
    std::vector<double> velocity(2 * n, 0.0), gains(2 * n, 1.0), q;

    for (std::size_t it = 0; it < opt.iterations; ++it) {
        const double s = it < opt.exaggeration_iterations ? opt.exaggeration : 1.0;
        const double mom = it < opt.momentum_switch ? opt.initial_momentum : opt.final_momentum;
        const Tensor<double> g = detail::tsne_gradient(p.p, s, out.y, q);
        for (std::size_t k = 0; k < 2 * n; ++k) {
            // Per-coordinate gains: grow while the gradient keeps opposing the
            // current velocity, shrink once they agree.
            gains[k] = (g[k] > 0) != (velocity[k] > 0) ? gains[k] + 0.2 : gains[k] * 0.8;
            gains[k] = std::max(gains[k], opt.min_gain);
            velocity[k] = mom * velocity[k] - opt.learning_rate * gains[k] * g[k];
            out.y[k] += velocity[k];
        }
        double cx = 0, cy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            cx += out.y[2 * i];
            cy += out.y[2 * i + 1];
        }
        cx /= static_cast<double>(n);
        cy /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            out.y[2 * i] -= cx;
            out.y[2 * i + 1] -= cy;
        }
        if (!out.y.all_finite()) throw NumericError("t-SNE diverged: non-finite embedding at iteration " + std::to_string(it));
        out.cost_trace.push_back(kl_cost(p.p, low_dim_similarities(out.y)));
        out.iterations = it + 1;
    }
    return out;
}

/// Distance between the two cluster centroids divided by the mean pairwise
/// distance within clusters. Labels must be 0 or 1 with both present.
inline double cluster_separation(const Tensor<double>& y, const std::vector<int>& labels) {
    detail::check_embedding(y);
    const std::size_t n = y.dim(0);
    if (labels.size() != n) throw ShapeError("cluster_separation: label count mismatch");
    double c[2][2] = {{0, 0}, {0, 0}};
    std::size_t count[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("cluster_separation: labels must be 0 or 1");
        c[labels[i]][0] += y[2 * i];
        c[labels[i]][1] += y[2 * i + 1];
        ++count[labels[i]];
    }
    if (count[0] < 2 || count[1] < 2) throw DataError("cluster_separation: each cluster needs at least 2 points");
    for (int k = 0; k < 2; ++k) {
        c[k][0] /= static_cast<double>(count[k]);
        c[k][1] /= static_cast<double>(count[k]);
    }
    double within = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (labels[i] != labels[j]) continue;
            within += std::hypot(y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
            ++pairs;
        }
    }
    return std::hypot(c[0][0] - c[1][0], c[0][1] - c[1][1]) / (within / static_cast<double>(pairs));
}

}  // namespace swinsight
