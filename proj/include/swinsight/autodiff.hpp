#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape records every op in creation order, which is already a topological
// order of the graph. backward() walks the tape once in reverse and each
// node's closure scatters its output gradient into its parents. Gradients of
// nodes used more than once accumulate.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace swinsight {

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    std::size_t id() const noexcept { return id_; }
    Tape<T>& tape() const { return *tape_; }
    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const { return tape_->requires_grad(id_); }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
        if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor");
        nodes_.push_back(Node{std::move(value), {}, {}, nullptr, requires_grad, "leaf"});
        return Var<T>(this, nodes_.size() - 1);
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    /// Appends an op result. The node requires a gradient iff any parent does;
    /// otherwise the backward closure is dropped.
    Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
        return record(op, std::move(value), std::vector<Var<T>>(parents), std::move(fn));
    }

    Var<T> record(const char* op, Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn fn) {
        if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
        bool needs = false;
        std::vector<std::size_t> ids;
        ids.reserve(parents.size());
        for (const auto& p : parents) {
            if (&p.tape() != this) throw Error(std::string(op) + ": operands live on different tapes");
            needs = needs || nodes_[p.id()].requires_grad;
            ids.push_back(p.id());
        }
        nodes_.push_back(Node{std::move(value), {}, std::move(ids), needs ? std::move(fn) : nullptr, needs, op});
        return Var<T>(this, nodes_.size() - 1);
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    const char* op(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_.at(id).parents; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient of the last backward() target with respect to this node.
    /// Nodes the loss does not depend on report zeros.
    Tensor<T> grad(const Var<T>& v) const {
        const Node& n = nodes_.at(v.id());
        return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
    }

    const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }

    /// Zero-initialized on first touch; returns nullptr if the node does not
    /// take gradients, so callers can skip the work.
    Tensor<T>* accumulator(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return &n.grad;
    }

    void backward(const Var<T>& loss) {
        if (&loss.tape() != this) throw Error("backward: loss lives on a different tape");
        Node& root = nodes_.at(loss.id());
        if (root.value.size() != 1) {
            throw ShapeError("backward requires a scalar loss, got shape " + to_string(root.value.shape()));
        }
        for (auto& n : nodes_) n.grad = Tensor<T>();
        if (!root.requires_grad) return;
        root.grad = Tensor<T>(root.value.shape(), T(1));
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, id);
        }
        for (std::size_t id = 0; id <= loss.id(); ++id) {
            const Node& n = nodes_[id];
            if (!n.grad.empty() && !n.grad.all_finite()) {
                throw NumericError(std::string("non-finite gradient at ") + n.op + " node " + std::to_string(id));
            }
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
        const char* op = "";
    };

    std::deque<Node> nodes_;  // stable addresses: value() references survive later ops
};

namespace detail {

inline Shape drop_last2(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

// out[o] = in[perm-mapped index]; out shape is in_shape permuted.
template <typename T>
void permute_copy(const T* in, const Shape& in_shape, const std::vector<std::size_t>& perm, T* out, bool accumulate) {
    const std::size_t r = in_shape.size();
    const auto in_strides = strides_of(in_shape);
    Shape out_shape(r);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[perm[i]];
        step[i] = in_strides[perm[i]];
    }
    const std::size_t total = numel(out_shape);
    if (r == 0 || total == 0) return;
    const std::size_t inner = out_shape[r - 1];
    const std::size_t inner_step = step[r - 1];
    std::vector<std::size_t> counter(r, 0);
    std::size_t in_off = 0;
    for (std::size_t o = 0; o < total; o += inner) {
        const T* src = in + in_off;
        T* dst = out + o;
        if (accumulate) {
            for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j * inner_step];
        } else {
            for (std::size_t j = 0; j < inner; ++j) dst[j] = src[j * inner_step];
        }
        // advance odometer over all but the innermost axis
        for (std::size_t ax = r - 1; ax-- > 0;) {
            if (++counter[ax] < out_shape[ax]) {
                in_off += step[ax];
                break;
            }
            in_off -= step[ax] * (out_shape[ax] - 1);
            counter[ax] = 0;
        }
    }
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    return inv;
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

// outer/axis/inner decomposition around one axis
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product over the last two axes. Batch dimensions must match,
/// or one side's batch must have a single element and is broadcast.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Tensor<T>& A = a.value();
    const Tensor<T>& B = b.value();
    if (A.rank() < 2 || B.rank() < 2 || A.dim(-1) != B.dim(-2)) {
        throw ShapeError("matmul: incompatible shapes " + to_string(A.shape()) + " and " + to_string(B.shape()));
    }
    const std::size_t m = A.dim(-2), k = A.dim(-1), n = B.dim(-1);
    const Shape batch_a = detail::drop_last2(A.shape());
    const Shape batch_b = detail::drop_last2(B.shape());
    const std::size_t ba = numel(batch_a), bb = numel(batch_b);
    Shape out_shape;
    if (batch_a == batch_b || bb == 1) {
        out_shape = batch_a;
    } else if (ba == 1) {
        out_shape = batch_b;
    } else {
        throw ShapeError("matmul: batch dimensions " + to_string(A.shape()) + " and " + to_string(B.shape()) +
                         " neither agree nor broadcast");
    }
    const std::size_t nb = numel(out_shape);
    out_shape.push_back(m);
    out_shape.push_back(n);

    Tensor<T> out(out_shape);
    {
        const T* pa = A.data().data();
        const T* pb = B.data().data();
        T* po = out.data().data();
        parallel_for(nb * m, 64, [&](std::size_t r0, std::size_t r1) {
            for (std::size_t r = r0; r < r1; ++r) {
                const std::size_t bi = r / m, i = r % m;
                const T* arow = pa + (ba == 1 ? 0 : bi) * m * k + i * k;
                const T* bmat = pb + (bb == 1 ? 0 : bi) * k * n;
                T* orow = po + r * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = arow[p];
                    const T* brow = bmat + p * n;
                    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
                }
            }
        });
    }

    return a.tape().record("matmul", std::move(out), {a, b}, [ia = a.id(), ib = b.id(), m, k, n, nb, ba, bb](Tape<T>& t, std::size_t self) {
        const T* g = t.out_grad(self).data().data();
        const T* pa = t.value(ia).data().data();
        const T* pb = t.value(ib).data().data();
        if (Tensor<T>* ga = t.accumulator(ia)) {
            T* pga = ga->data().data();
            // dA[ao,i,p] += sum_{b->ao} sum_j g[b,i,j] * B[b,p,j]
            const std::size_t a_batches = (ba == 1) ? 1 : nb;
            parallel_for(a_batches * m, 64, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t r = r0; r < r1; ++r) {
                    const std::size_t ao = r / m, i = r % m;
                    T* garow = pga + ao * m * k + i * k;
                    const std::size_t b_begin = (ba == 1) ? 0 : ao;
                    const std::size_t b_end = (ba == 1) ? nb : ao + 1;
                    for (std::size_t bi = b_begin; bi < b_end; ++bi) {
                        const T* grow = g + (bi * m + i) * n;
                        const T* bmat = pb + (bb == 1 ? 0 : bi) * k * n;
                        for (std::size_t p = 0; p < k; ++p) {
                            const T* brow = bmat + p * n;
                            T acc = 0;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            garow[p] += acc;
                        }
                    }
                }
            });
        }
        if (Tensor<T>* gb = t.accumulator(ib)) {
            T* pgb = gb->data().data();
            // dB[bo,p,j] += sum_{b->bo} sum_i A[b,i,p] * g[b,i,j]
            const std::size_t b_batches = (bb == 1) ? 1 : nb;
            parallel_for(b_batches * k, 64, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t r = r0; r < r1; ++r) {
                    const std::size_t bo = r / k, p = r % k;
                    T* gbrow = pgb + bo * k * n + p * n;
                    const std::size_t b_begin = (bb == 1) ? 0 : bo;
                    const std::size_t b_end = (bb == 1) ? nb : bo + 1;
                    for (std::size_t bi = b_begin; bi < b_end; ++bi) {
                        const T* amat = pa + (ba == 1 ? 0 : bi) * m * k;
                        const T* gmat = g + bi * m * n;
                        for (std::size_t i = 0; i < m; ++i) {
                            const T av = amat[i * k + p];
                            const T* grow = gmat + i * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape("add", a, b);
    Tensor<T> out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return a.tape().record("add", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        for (auto id : {ia, ib}) {
            if (Tensor<T>* acc = t.accumulator(id)) {
                auto d = acc->data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            }
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape("sub", a, b);
    Tensor<T> out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return a.tape().record("sub", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        if (Tensor<T>* acc = t.accumulator(ia)) {
            auto d = acc->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (Tensor<T>* acc = t.accumulator(ib)) {
            auto d = acc->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape("mul", a, b);
    Tensor<T> out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return a.tape().record("mul", std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        if (Tensor<T>* acc = t.accumulator(ia)) {
            auto d = acc->data();
            auto other = t.value(ib).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * other[i];
        }
        if (Tensor<T>* acc = t.accumulator(ib)) {
            auto d = acc->data();
            auto other = t.value(ia).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * other[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v *= s;
    return a.tape().record("scale", std::move(out), {a}, [ia = a.id(), s](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        if (Tensor<T>* acc = t.accumulator(ia)) {
            auto d = acc->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
        }
    });
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

/// x[..., n] + bias[n]. The one sanctioned broadcast besides matmul batches.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
    const auto& X = x.value();
    const auto& B = bias.value();
    if (B.rank() != 1 || X.rank() < 1 || B.dim(0) != X.dim(-1)) {
        throw ShapeError("add_bias: bias " + to_string(B.shape()) + " does not match last axis of " +
                         to_string(X.shape()));
    }
    const std::size_t n = B.dim(0);
    Tensor<T> out = X;
    auto o = out.data();
    auto b = B.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i % n];
    return x.tape().record("add_bias", std::move(out), {x, bias}, [ix = x.id(), ib = bias.id(), n](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        if (Tensor<T>* acc = t.accumulator(ix)) {
            auto d = acc->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (Tensor<T>* acc = t.accumulator(ib)) {
            auto d = acc->data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i % n] += g[i];
        }
    });
}

/// Broadcasts size-1 axes of x up to `shape` (same rank required).
template <typename T>
Var<T> expand(const Var<T>& x, const Shape& shape) {
    const auto& X = x.value();
    if (X.rank() != shape.size()) {
        throw ShapeError("expand: rank mismatch " + to_string(X.shape()) + " -> " + to_string(shape));
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (X.shape()[i] != shape[i] && X.shape()[i] != 1) {
            throw ShapeError("expand: cannot broadcast " + to_string(X.shape()) + " to " + to_string(shape));
        }
    }
    const auto in_strides = strides_of(X.shape());
    std::vector<std::size_t> step(shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) step[i] = X.shape()[i] == 1 ? 0 : in_strides[i];
    auto source_index = [shape, step](std::size_t o) {
        std::size_t off = 0;
        for (std::size_t ax = shape.size(); ax-- > 0;) {
            off += (o % shape[ax]) * step[ax];
            o /= shape[ax];
        }
        return off;
    };
    Tensor<T> out(shape);
    auto o = out.data();
    auto src = X.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = src[source_index(i)];
    return x.tape().record("expand", std::move(out), {x}, [ix = x.id(), source_index](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        if (Tensor<T>* acc = t.accumulator(ix)) {
            auto d = acc->data();
            for (std::size_t i = 0; i < g.size(); ++i) d[source_index(i)] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().data()) s += v;
    return x.tape().record("sum", Tensor<T>::scalar(s), {x}, [ix = x.id()](Tape<T>& t, std::size_t self) {
        const T g = t.out_grad(self)[0];
        if (Tensor<T>* acc = t.accumulator(ix)) {
            for (auto& d : acc->data()) d += g;
        }
    });
}

/// Mean over one axis; the axis is removed from the result shape.
template <typename T>
Var<T> mean_axis(const Var<T>& x, int axis) {
    const auto& X = x.value();
    const std::size_t ax = X.normalize_axis(axis);
    const auto sp = detail::split_axis(X.shape(), ax);
    Shape out_shape = X.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor<T> out(out_shape);
    auto o = out.data();
    auto src = X.data();
    const T inv = T(1) / static_cast<T>(sp.len);
    for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t l = 0; l < sp.len; ++l) {
            const T* row = src.data() + (a * sp.len + l) * sp.inner;
            T* orow = o.data() + a * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) orow[i] += row[i];
        }
    }
    for (auto& v : o) v *= inv;
    return x.tape().record("mean_axis", std::move(out), {x}, [ix = x.id(), sp, inv](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        if (Tensor<T>* acc = t.accumulator(ix)) {
            auto d = acc->data();
            for (std::size_t a = 0; a < sp.outer; ++a) {
                for (std::size_t l = 0; l < sp.len; ++l) {
                    T* row = d.data() + (a * sp.len + l) * sp.inner;
                    const T* grow = g.data() + a * sp.inner;
                    for (std::size_t i = 0; i < sp.inner; ++i) row[i] += inv * grow[i];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

/// Numerically stable softmax (max subtracted) along `axis`.
template <typename T>
Var<T> softmax(const Var<T>& x, int axis) {
    const auto& X = x.value();
    const std::size_t ax = X.normalize_axis(axis);
    const auto sp = detail::split_axis(X.shape(), ax);
    Tensor<T> out(X.shape());
    auto src = X.data();
    auto o = out.data();
    for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = a * sp.len * sp.inner + i;
            T mx = src[base];
            for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, src[base + l * sp.inner]);
            T denom = 0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const T e = std::exp(src[base + l * sp.inner] - mx);
                o[base + l * sp.inner] = e;
                denom += e;
            }
            for (std::size_t l = 0; l < sp.len; ++l) o[base + l * sp.inner] /= denom;
        }
    }
    return x.tape().record("softmax", std::move(out), {x}, [ix = x.id(), sp](Tape<T>& t, std::size_t self) {
        Tensor<T>* acc = t.accumulator(ix);
        if (!acc) return;
        auto g = t.out_grad(self).data();
        auto y = t.value(self).data();
        auto d = acc->data();
        for (std::size_t a = 0; a < sp.outer; ++a) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = a * sp.len * sp.inner + i;
                T dot = 0;
                for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t j = base + l * sp.inner;
                    d[j] += y[j] * (g[j] - dot);
                }
            }
        }
    });
}

/// Layer normalization over the last axis followed by the affine gamma/beta.
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const auto& X = x.value();
    const std::size_t c = X.dim(-1);
    if (gamma.value().shape() != Shape{c} || beta.value().shape() != Shape{c}) {
        throw ShapeError("layernorm: affine shapes " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not match last axis of " + to_string(X.shape()));
    }
    const std::size_t rows = X.size() / c;
    std::vector<T> xhat(X.size());
    std::vector<T> rstd(rows);
    Tensor<T> out(X.shape());
    auto src = X.data();
    auto o = out.data();
    auto gm = gamma.value().data();
    auto bt = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = src.data() + r * c;
        T mean = 0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(c);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const T xh = (row[j] - mean) * rs;
            xhat[r * c + j] = xh;
            o[r * c + j] = xh * gm[j] + bt[j];
        }
    }
    return x.tape().record(
        "layernorm", std::move(out), {x, gamma, beta},
        [ix = x.id(), ig = gamma.id(), ib = beta.id(), c, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
            Tape<T>& t, std::size_t self) {
            auto g = t.out_grad(self).data();
            if (Tensor<T>* acc = t.accumulator(ig)) {
                auto d = acc->data();
                for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i] * xhat[i];
            }
            if (Tensor<T>* acc = t.accumulator(ib)) {
                auto d = acc->data();
                for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
            }
            if (Tensor<T>* acc = t.accumulator(ix)) {
                auto d = acc->data();
                auto gm = t.value(ig).data();
                const T inv_c = T(1) / static_cast<T>(c);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dxh = 0, mean_dxh_xh = 0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dxh = g[r * c + j] * gm[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[r * c + j];
                    }
                    mean_dxh *= inv_c;
                    mean_dxh_xh *= inv_c;
                    for (std::size_t j = 0; j < c; ++j) {
                        const T dxh = g[r * c + j] * gm[j];
                        d[r * c + j] += rstd[r] * (dxh - mean_dxh - xhat[r * c + j] * mean_dxh_xh);
                    }
                }
            }
        });
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Var<T> gelu(const Var<T>& x) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c = T(0.044715);
    Tensor<T> out(x.value().shape());
    auto src = x.value().data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const T v = src[i];
        o[i] = T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v)));
    }
    return x.tape().record("gelu", std::move(out), {x}, [ix = x.id()](Tape<T>& t, std::size_t self) {
        Tensor<T>* acc = t.accumulator(ix);
        if (!acc) return;
        auto g = t.out_grad(self).data();
        auto src = t.value(ix).data();
        auto d = acc->data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const T v = src[i];
            const T th = std::tanh(k * (v + c * v * v * v));
            const T dinner = k * (T(1) + T(3) * c * v * v);
            d[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * dinner);
        }
    });
}

// ---------------------------------------------------------------------------
// Rearrangement

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return x.tape().record("reshape", std::move(out), {x}, [ix = x.id()](Tape<T>& t, std::size_t self) {
        if (Tensor<T>* acc = t.accumulator(ix)) {
            auto d = acc->data();
            auto g = t.out_grad(self).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
    });
}

/// Output axis i is input axis perm[i].
template <typename T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> perm) {
    const auto& X = x.value();
    if (perm.size() != X.rank()) throw ShapeError("permute: permutation rank does not match " + to_string(X.shape()));
    {
        auto sorted = perm;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != i) throw ShapeError("permute: not a permutation of the axes");
        }
    }
    Shape out_shape(X.rank());
    for (std::size_t i = 0; i < X.rank(); ++i) out_shape[i] = X.shape()[perm[i]];
    Tensor<T> out(out_shape);
    detail::permute_copy(X.data().data(), X.shape(), perm, out.data().data(), false);
    return x.tape().record("permute", std::move(out), {x},
                           [ix = x.id(), inv = detail::inverse_permutation(perm), out_shape](Tape<T>& t, std::size_t self) {
                               if (Tensor<T>* acc = t.accumulator(ix)) {
                                   detail::permute_copy(t.out_grad(self).data().data(), out_shape, inv,
                                                        acc->data().data(), true);
                               }
                           });
}

/// Swap the last two axes.
template <typename T>
Var<T> transpose(const Var<T>& x) {
    const std::size_t r = x.value().rank();
    if (r < 2) throw ShapeError("transpose needs rank >= 2");
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(x, std::move(perm));
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, std::size_t start, std::size_t length) {
    const auto& X = x.value();
    const std::size_t ax = X.normalize_axis(axis);
    if (length == 0 || start + length > X.shape()[ax]) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of bounds for axis " + std::to_string(ax) + " of " + to_string(X.shape()));
    }
    const auto sp = detail::split_axis(X.shape(), ax);
    Shape out_shape = X.shape();
    out_shape[ax] = length;
    Tensor<T> out(out_shape);
    auto src = X.data();
    auto o = out.data();
    const std::size_t block = length * sp.inner;
    for (std::size_t a = 0; a < sp.outer; ++a) {
        std::copy_n(src.data() + (a * sp.len + start) * sp.inner, block, o.data() + a * block);
    }
    return x.tape().record("slice", std::move(out), {x}, [ix = x.id(), sp, start, block](Tape<T>& t, std::size_t self) {
        if (Tensor<T>* acc = t.accumulator(ix)) {
            auto d = acc->data();
            auto g = t.out_grad(self).data();
            for (std::size_t a = 0; a < sp.outer; ++a) {
                T* dst = d.data() + (a * sp.len + start) * sp.inner;
                const T* src = g.data() + a * block;
                for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& first = parts.front().value();
    const std::size_t ax = first.normalize_axis(axis);
    Shape out_shape = first.shape();
    out_shape[ax] = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        Shape s = p.value().shape();
        if (s.size() != first.rank()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != ax && s[i] != first.shape()[i]) {
                throw ShapeError("concat: shapes " + to_string(first.shape()) + " and " + to_string(s) +
                                 " differ off the concat axis");
            }
        }
        lens.push_back(s[ax]);
        out_shape[ax] += s[ax];
    }
    const auto sp = detail::split_axis(out_shape, ax);
    Tensor<T> out(out_shape);
    auto o = out.data();
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        auto src = parts[pi].value().data();
        const std::size_t block = lens[pi] * sp.inner;
        for (std::size_t a = 0; a < sp.outer; ++a) {
            std::copy_n(src.data() + a * block, block, o.data() + (a * sp.len + offset) * sp.inner);
        }
        offset += lens[pi];
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts) ids.push_back(p.id());
    return parts.front().tape().record("concat", std::move(out), parts, [ids, lens, sp](Tape<T>& t, std::size_t self) {
        auto g = t.out_grad(self).data();
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
            const std::size_t block = lens[pi] * sp.inner;
            if (Tensor<T>* acc = t.accumulator(ids[pi])) {
                auto d = acc->data();
                for (std::size_t a = 0; a < sp.outer; ++a) {
                    const T* src = g.data() + (a * sp.len + offset) * sp.inner;
                    T* dst = d.data() + a * block;
                    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            }
            offset += lens[pi];
        }
    });
}

/// Gathers rows along axis 0: out[i, ...] = x[indices[i], ...].
template <typename T>
Var<T> index_select(const Var<T>& x, std::vector<std::size_t> indices) {
    const auto& X = x.value();
    if (X.rank() < 1 || indices.empty()) throw ShapeError("index_select: empty input");
    const std::size_t rows = X.dim(0);
    const std::size_t inner = X.size() / rows;
    for (auto i : indices) {
        if (i >= rows) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
    }
    Shape out_shape = X.shape();
    out_shape[0] = indices.size();
    Tensor<T> out(out_shape);
    auto src = X.data();
    auto o = out.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy_n(src.data() + indices[r] * inner, inner, o.data() + r * inner);
    }
    return x.tape().record("index_select", std::move(out), {x},
                           [ix = x.id(), indices = std::move(indices), inner](Tape<T>& t, std::size_t self) {
                               if (Tensor<T>* acc = t.accumulator(ix)) {
                                   auto d = acc->data();
                                   auto g = t.out_grad(self).data();
                                   for (std::size_t r = 0; r < indices.size(); ++r) {
                                       T* dst = d.data() + indices[r] * inner;
                                       const T* src = g.data() + r * inner;
                                       for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                                   }
                               }
                           });
}

/// x @ W + b for x[..., in], W[in, out], b[out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    return add_bias(matmul(x, weight), bias);
}

}  // namespace swinsight
