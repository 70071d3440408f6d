#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// The design is a classic tape: every differentiable operation appends a
// backward closure to the Tape that created its output. backward(loss)
// seeds d(loss)/d(loss) = 1 and replays the closures in reverse record
// order, accumulating (never overwriting) into each node's grad buffer.
//
// Everything is templated on the scalar type: float is the training
// precision, double is used by the gradient-check suite. Broadcasting is
// deliberately restricted to two cases, a 1-element scalar and a vector
// matching the last axis; anything richer is composed from explicit ops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace spot {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct TensorData {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized on first backward touch, accumulated into
    bool requires_grad = false;

    TensorData() = default;
    TensorData(Shape s, bool rg) : shape(std::move(s)), requires_grad(rg) {
        value.assign(static_cast<size_t>(shape_numel(shape)), T(0));
    }

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class Tape;

/// Lightweight handle: a node plus the tape its ops record onto.
template <typename T>
struct Var {
    TensorData<T>* node = nullptr;
    Tape<T>* tape = nullptr;

    const Shape& shape() const { return node->shape; }
    int64_t numel() const { return node->numel(); }
    int rows() const { return node->rows(); }
    int cols() const { return node->cols(); }
    T* data() { return node->value.data(); }
    const T* data() const { return node->value.data(); }
    T item() const { return node->value[0]; }
    bool requires_grad() const { return node->requires_grad; }
};

template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> alloc(Shape shape, bool requires_grad) {
        nodes_.emplace_back(std::move(shape), requires_grad && grad_enabled_);
        return {&nodes_.back(), this};
    }

    /// Constant leaf with given contents.
    Var<T> constant(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("Tape::constant: shape " + shape_str(shape) +
                                        " does not match value count " +
                                        std::to_string(values.size()));
        Var<T> v = alloc(std::move(shape), false);
        v.node->value = std::move(values);
        return v;
    }

    Var<T> scalar(T x) { return constant({1}, {x}); }

    /// Wrap an externally owned node (a model parameter) for use on this tape.
    Var<T> watch(TensorData<T>& external) {
        if (grad_enabled_ && external.requires_grad) watched_.insert(&external);
        return {&external, this};
    }

    void record(std::function<void()> step) {
        if (grad_enabled_) steps_.push_back(std::move(step));
    }

    /// Populates grads of every requires_grad node reachable from loss.
    void backward(Var<T> loss) {
        if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss.shape()));
        loss.node->ensure_grad();
        loss.node->grad[0] += T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    /// Zero grads of all tape nodes and all watched parameters.
    void zero_grads() {
        for (auto& n : nodes_) n.zero_grad();
        for (auto* p : watched_) p->zero_grad();
    }

    size_t num_ops() const { return steps_.size(); }
    size_t num_nodes() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        steps_.clear();
        watched_.clear();
    }

private:
    std::deque<TensorData<T>> nodes_;
    std::vector<std::function<void()>> steps_;
    std::unordered_set<TensorData<T>*> watched_;
    bool grad_enabled_;
};

namespace detail {

template <typename T>
Tape<T>& tape_of(Var<T> a) {
    if (!a.tape) throw std::logic_error("Var has no tape");
    return *a.tape;
}

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
    Tape<T>* t = a.tape ? a.tape : b.tape;
    if (!t) throw std::logic_error("Var has no tape");
    return *t;
}

enum class Broadcast { kSame, kScalar, kLastAxis };

template <typename T>
Broadcast classify_broadcast(const Var<T>& a, const Var<T>& b, const char* opname) {
    if (a.shape() == b.shape()) return Broadcast::kSame;
    if (b.numel() == 1) return Broadcast::kScalar;
    if (b.shape().size() == 1 && !a.shape().empty() && b.shape()[0] == a.shape().back())
        return Broadcast::kLastAxis;
    throw std::invalid_argument(std::string(opname) + ": incompatible shapes " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

/// c += a . b with a [m x p], b [p x q], row-major. The k-unrolled form
/// keeps four b rows live per pass over a c row, which is what lets the
/// compiler vectorize these small matrices well.
template <typename T>
void matmul_accumulate(const T* __restrict pa, const T* __restrict pb, T* __restrict pc, int m,
                       int p, int q) {
    for (int i = 0; i < m; ++i) {
        T* __restrict crow = pc + static_cast<int64_t>(i) * q;
        const T* __restrict arow = pa + static_cast<int64_t>(i) * p;
        int k = 0;
        for (; k + 4 <= p; k += 4) {
            const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
            const T* __restrict b0 = pb + static_cast<int64_t>(k) * q;
            const T* __restrict b1 = b0 + q;
            const T* __restrict b2 = b1 + q;
            const T* __restrict b3 = b2 + q;
            for (int j = 0; j < q; ++j)
                crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; k < p; ++k) {
            const T aik = arow[k];
            const T* __restrict brow = pb + static_cast<int64_t>(k) * q;
            for (int j = 0; j < q; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (b may be scalar or last-axis vector)
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename BwdA, typename BwdB>
Var<T> binary_elementwise(Var<T> a, Var<T> b, const char* name, Fwd fwd, BwdA bwd_a,
                          BwdB bwd_b) {
    using detail::Broadcast;
    auto& tape = detail::tape_of(a, b);
    const Broadcast bc = detail::classify_broadcast(a, b, name);
    Var<T> out = tape.alloc(a.shape(), a.requires_grad() || b.requires_grad());
    const int64_t n = a.numel();
    const int64_t last = a.shape().empty() ? 1 : a.shape().back();
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < n; ++i) {
        const T bv = bc == Broadcast::kSame ? pb[i]
                     : bc == Broadcast::kScalar ? pb[0]
                                                : pb[i % last];
        po[i] = fwd(pa[i], bv);
    }
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* bn = b.node;
        auto* on = out.node;
        tape.record([an, bn, on, bc, last, n, bwd_a, bwd_b]() {
            on->ensure_grad();
            const T* g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    const T bv = bc == Broadcast::kSame ? bn->value[i]
                                 : bc == Broadcast::kScalar ? bn->value[0]
                                                            : bn->value[i % last];
                    an->grad[i] += bwd_a(g[i], an->value[i], bv);
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < n; ++i) {
                    const T bv = bc == Broadcast::kSame ? bn->value[i]
                                 : bc == Broadcast::kScalar ? bn->value[0]
                                                            : bn->value[i % last];
                    const T gb = bwd_b(g[i], an->value[i], bv);
                    const int64_t j = bc == Broadcast::kSame ? i
                                      : bc == Broadcast::kScalar ? 0
                                                                 : i % last;
                    bn->grad[j] += gb;
                }
            }
        });
    }
    return out;
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return g; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
        [](T g, T, T) { return -g; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
        [](T g, T x, T) { return g * x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    return binary_elementwise(
        a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
        [](T g, T x, T y) { return -g * x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Var<T> unary_elementwise(Var<T> a, Fwd fwd, Bwd bwd) {
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc(a.shape(), a.requires_grad());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on, n, bwd]() {
            on->ensure_grad();
            an->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                an->grad[i] += bwd(on->grad[i], an->value[i], on->value[i]);
        });
    }
    return out;
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
    return unary_elementwise(
        a, [c](T x) { return c * x; }, [c](T g, T, T) { return c * g; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
    return unary_elementwise(
        a, [c](T x) { return x + c; }, [](T g, T, T) { return g; });
}

template <typename T>
Var<T> relu(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return std::tanh(x); }, [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <typename T>
Var<T> exp_op(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return std::exp(x); }, [](T g, T, T y) { return g * y; });
}

template <typename T>
Var<T> log_op(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

template <typename T>
Var<T> clamp_min(Var<T> a, T floor) {
    return unary_elementwise(
        a, [floor](T x) { return x < floor ? floor : x; },
        [floor](T g, T x, T) { return x > floor ? g : T(0); });
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Var<T> gelu(Var<T> a) {
    constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kA = static_cast<T>(0.044715);
    return unary_elementwise(
        a,
        [](T x) {
            return static_cast<T>(0.5) * x *
                   (T(1) + std::tanh(kC * (x + kA * x * x * x)));
        },
        [](T g, T x, T) {
            const T u = kC * (x + kA * x * x * x);
            const T th = std::tanh(u);
            const T sech2 = T(1) - th * th;
            const T du = kC * (T(1) + T(3) * kA * x * x);
            return g * (static_cast<T>(0.5) * (T(1) + th) +
                        static_cast<T>(0.5) * x * sech2 * du);
        });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename T>
void check_2d(const Var<T>& a, const char* name) {
    if (a.shape().size() != 2)
        throw std::invalid_argument(std::string(name) + ": expected 2-d tensor, got " +
                                    shape_str(a.shape()));
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    const int m = a.shape()[0], p = a.shape()[1];
    const int p2 = b.shape()[0], q = b.shape()[1];
    if (p != p2)
        throw std::invalid_argument("matmul: inner axes disagree, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    auto& tape = detail::tape_of(a, b);
    Var<T> out = tape.alloc({m, q}, a.requires_grad() || b.requires_grad());
    detail::matmul_accumulate(a.data(), b.data(), out.data(), m, p, q);
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* bn = b.node;
        auto* on = out.node;
        tape.record([an, bn, on, m, p, q]() {
            on->ensure_grad();
            const T* __restrict g = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = dC . B^T, accumulated through a transposed copy of B
                // so the inner loop is a vectorizable row update
                std::vector<T> bt(static_cast<size_t>(p) * q);
                const T* __restrict bv = bn->value.data();
                for (int k = 0; k < p; ++k)
                    for (int j = 0; j < q; ++j)
                        bt[static_cast<size_t>(j) * p + k] = bv[static_cast<int64_t>(k) * q + j];
                detail::matmul_accumulate(g, bt.data(), an->grad.data(), m, q, p);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                const T* __restrict av = an->value.data();
                T* __restrict gb = bn->grad.data();
                // dB = A^T . dC : dB[k,j] += A[i,k] g[i,j], four rows of dC
                // folded per pass over each dB row
                int i = 0;
                for (; i + 4 <= m; i += 4) {
                    const T* __restrict a0 = av + static_cast<int64_t>(i) * p;
                    const T* __restrict a1 = a0 + p;
                    const T* __restrict a2 = a1 + p;
                    const T* __restrict a3 = a2 + p;
                    const T* __restrict g0 = g + static_cast<int64_t>(i) * q;
                    const T* __restrict g1 = g0 + q;
                    const T* __restrict g2 = g1 + q;
                    const T* __restrict g3 = g2 + q;
                    for (int k = 0; k < p; ++k) {
                        const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
                        T* __restrict gbrow = gb + static_cast<int64_t>(k) * q;
                        for (int j = 0; j < q; ++j)
                            gbrow[j] += w0 * g0[j] + w1 * g1[j] + w2 * g2[j] + w3 * g3[j];
                    }
                }
                for (; i < m; ++i) {
                    const T* __restrict arow = av + static_cast<int64_t>(i) * p;
                    const T* __restrict grow = g + static_cast<int64_t>(i) * q;
                    for (int k = 0; k < p; ++k) {
                        const T aik = arow[k];
                        T* __restrict gbrow = gb + static_cast<int64_t>(k) * q;
                        for (int j = 0; j < q; ++j) gbrow[j] += aik * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Var<T> transpose(Var<T> a) {
    check_2d(a, "transpose");
    const int m = a.shape()[0], n = a.shape()[1];
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc({n, m}, a.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[static_cast<int64_t>(j) * m + i] = a.data()[static_cast<int64_t>(i) * n + j];
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on, m, n]() {
            on->ensure_grad();
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<int64_t>(i) * n + j] += on->grad[static_cast<int64_t>(j) * m + i];
        });
    }
    return out;
}

/// out[i,j] = a[i,j] * v[i] (per-row scaling by a length-rows vector).
template <typename T>
Var<T> row_scale(Var<T> a, Var<T> v) {
    check_2d(a, "row_scale");
    const int m = a.shape()[0], n = a.shape()[1];
    if (v.numel() != m)
        throw std::invalid_argument("row_scale: vector length " + std::to_string(v.numel()) +
                                    " does not match rows of " + shape_str(a.shape()));
    auto& tape = detail::tape_of(a, v);
    Var<T> out = tape.alloc({m, n}, a.requires_grad() || v.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.data()[static_cast<int64_t>(i) * n + j] = a.data()[static_cast<int64_t>(i) * n + j] * v.data()[i];
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* vn = v.node;
        auto* on = out.node;
        tape.record([an, vn, on, m, n]() {
            on->ensure_grad();
            if (an->requires_grad) {
                an->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        an->grad[static_cast<int64_t>(i) * n + j] +=
                            on->grad[static_cast<int64_t>(i) * n + j] * vn->value[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int i = 0; i < m; ++i) {
                    T acc = T(0);
                    for (int j = 0; j < n; ++j)
                        acc += on->grad[static_cast<int64_t>(i) * n + j] * an->value[static_cast<int64_t>(i) * n + j];
                    vn->grad[i] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

/// Softmax along `axis` of a 2-d tensor; each slice along that axis becomes a
/// probability vector. Numerically stabilized by max subtraction.
template <typename T>
Var<T> softmax(Var<T> a, int axis) {
    check_2d(a, "softmax");
    if (axis != 0 && axis != 1)
        throw std::invalid_argument("softmax: axis must be 0 or 1, got " + std::to_string(axis));
    const int m = a.shape()[0], n = a.shape()[1];
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc({m, n}, a.requires_grad());
    const int slices = axis == 1 ? m : n;
    const int len = axis == 1 ? n : m;
    const int64_t step = axis == 1 ? 1 : n;
    const int64_t stride = axis == 1 ? n : 1;
    for (int s = 0; s < slices; ++s) {
        const T* src = a.data() + s * stride;
        T* dst = out.data() + s * stride;
        T mx = src[0];
        for (int i = 1; i < len; ++i) mx = std::max(mx, src[i * step]);
        T total = T(0);
        for (int i = 0; i < len; ++i) {
            const T e = std::exp(src[i * step] - mx);
            dst[i * step] = e;
            total += e;
        }
        for (int i = 0; i < len; ++i) dst[i * step] /= total;
    }
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on, slices, len, step, stride]() {
            on->ensure_grad();
            an->ensure_grad();
            for (int s = 0; s < slices; ++s) {
                const T* y = on->value.data() + s * stride;
                const T* g = on->grad.data() + s * stride;
                T* ga = an->grad.data() + s * stride;
                T dot = T(0);
                for (int i = 0; i < len; ++i) dot += g[i * step] * y[i * step];
                for (int i = 0; i < len; ++i)
                    ga[i * step] += y[i * step] * (g[i * step] - dot);
            }
        });
    }
    return out;
}

/// Per-row normalization over the last axis (epsilon 1e-5), then affine.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
    const Shape& s = x.shape();
    if (s.empty() || s.back() == 0)
        throw std::invalid_argument("layer_norm: empty last axis in " + shape_str(s));
    const int d = s.back();
    if (gain.numel() != d || bias.numel() != d)
        throw std::invalid_argument("layer_norm: gain/bias must have length " + std::to_string(d));
    const int64_t rows = x.numel() / d;
    constexpr double kEps = 1e-5;
    auto& tape = detail::tape_of(x, gain);
    Var<T> out = tape.alloc(s, x.requires_grad() || gain.requires_grad() || bias.requires_grad());

    std::vector<T> xhat(static_cast<size_t>(x.numel()));
    std::vector<T> inv_std(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = x.data() + r * d;
        T mean = T(0);
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + kEps));
        inv_std[static_cast<size_t>(r)] = inv;
        T* h = xhat.data() + r * d;
        T* o = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            h[j] = (row[j] - mean) * inv;
            o[j] = gain.data()[j] * h[j] + bias.data()[j];
        }
    }
    if (out.requires_grad()) {
        auto* xn = x.node;
        auto* gn = gain.node;
        auto* bn = bias.node;
        auto* on = out.node;
        tape.record([xn, gn, bn, on, rows, d, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)]() {
            on->ensure_grad();
            const T* g = on->grad.data();
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < d; ++j)
                        gn->grad[j] += g[r * d + j] * xhat[static_cast<size_t>(r * d + j)];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < d; ++j) bn->grad[j] += g[r * d + j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const T* h = xhat.data() + r * d;
                    const T inv = inv_std[static_cast<size_t>(r)];
                    T mean_dxh = T(0), mean_dxh_h = T(0);
                    for (int j = 0; j < d; ++j) {
                        const T dxh = g[r * d + j] * gn->value[j];
                        mean_dxh += dxh;
                        mean_dxh_h += dxh * h[j];
                    }
                    mean_dxh /= static_cast<T>(d);
                    mean_dxh_h /= static_cast<T>(d);
                    for (int j = 0; j < d; ++j) {
                        const T dxh = g[r * d + j] * gn->value[j];
                        xn->grad[r * d + j] += inv * (dxh - mean_dxh - h[j] * mean_dxh_h);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(new_shape));
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc(std::move(new_shape), a.requires_grad());
    std::copy(a.node->value.begin(), a.node->value.end(), out.node->value.begin());
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on]() {
            on->ensure_grad();
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Var<T> slice_rows(Var<T> a, int start, int len) {
    check_2d(a, "slice_rows");
    const int m = a.shape()[0], n = a.shape()[1];
    if (start < 0 || len < 0 || start + len > m)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") outside " +
                                    shape_str(a.shape()));
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc({len, n}, a.requires_grad());
    std::copy_n(a.data() + static_cast<int64_t>(start) * n, static_cast<int64_t>(len) * n,
                out.data());
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on, start, len, n]() {
            on->ensure_grad();
            an->ensure_grad();
            for (int64_t i = 0; i < static_cast<int64_t>(len) * n; ++i)
                an->grad[static_cast<int64_t>(start) * n + i] += on->grad[i];
        });
    }
    return out;
}

template <typename T>
Var<T> slice_cols(Var<T> a, int start, int len) {
    check_2d(a, "slice_cols");
    const int m = a.shape()[0], n = a.shape()[1];
    if (start < 0 || len < 0 || start + len > n)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") outside " +
                                    shape_str(a.shape()));
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc({m, len}, a.requires_grad());
    for (int i = 0; i < m; ++i)
        std::copy_n(a.data() + static_cast<int64_t>(i) * n + start, len,
                    out.data() + static_cast<int64_t>(i) * len);
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on, m, n, start, len]() {
            on->ensure_grad();
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j)
                    an->grad[static_cast<int64_t>(i) * n + start + j] +=
                        on->grad[static_cast<int64_t>(i) * len + j];
        });
    }
    return out;
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    for (const auto& p : parts) check_2d(p, "concat");
    if (axis != 0 && axis != 1)
        throw std::invalid_argument("concat: axis must be 0 or 1");
    auto& tape = detail::tape_of(parts[0]);
    bool rg = false;
    int total = 0;
    const int other = axis == 0 ? parts[0].shape()[1] : parts[0].shape()[0];
    for (const auto& p : parts) {
        const int po = axis == 0 ? p.shape()[1] : p.shape()[0];
        if (po != other)
            throw std::invalid_argument("concat: mismatched shapes " + shape_str(parts[0].shape()) +
                                        " vs " + shape_str(p.shape()));
        total += axis == 0 ? p.shape()[0] : p.shape()[1];
        rg = rg || p.requires_grad();
    }
    Shape os = axis == 0 ? Shape{total, other} : Shape{other, total};
    Var<T> out = tape.alloc(os, rg);
    int offset = 0;
    for (const auto& p : parts) {
        const int pm = p.shape()[0], pn = p.shape()[1];
        if (axis == 0) {
            std::copy_n(p.data(), static_cast<int64_t>(pm) * pn,
                        out.data() + static_cast<int64_t>(offset) * pn);
            offset += pm;
        } else {
            for (int i = 0; i < pm; ++i)
                std::copy_n(p.data() + static_cast<int64_t>(i) * pn, pn,
                            out.data() + static_cast<int64_t>(i) * total + offset);
            offset += pn;
        }
    }
    if (rg) {
        std::vector<TensorData<T>*> ins;
        for (const auto& p : parts) ins.push_back(p.node);
        auto* on = out.node;
        tape.record([ins, on, axis, total]() {
            on->ensure_grad();
            int offset = 0;
            for (auto* in : ins) {
                const int pm = in->rows(), pn = in->cols();
                if (in->requires_grad) {
                    in->ensure_grad();
                    if (axis == 0) {
                        for (int64_t i = 0; i < static_cast<int64_t>(pm) * pn; ++i)
                            in->grad[i] += on->grad[static_cast<int64_t>(offset) * pn + i];
                    } else {
                        for (int i = 0; i < pm; ++i)
                            for (int j = 0; j < pn; ++j)
                                in->grad[static_cast<int64_t>(i) * pn + j] +=
                                    on->grad[static_cast<int64_t>(i) * total + offset + j];
                    }
                }
                offset += axis == 0 ? pm : pn;
            }
        });
    }
    return out;
}

/// Row lookup: out[i] = table[indices[i]]. Backward scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> indices) {
    check_2d(table, "gather_rows");
    const int m = table.shape()[0], d = table.shape()[1];
    for (int ix : indices)
        if (ix < 0 || ix >= m)
            throw std::out_of_range("gather_rows: index " + std::to_string(ix) +
                                    " outside table with " + std::to_string(m) + " rows");
    auto& tape = detail::tape_of(table);
    const int n = static_cast<int>(indices.size());
    Var<T> out = tape.alloc({n, d}, table.requires_grad());
    for (int i = 0; i < n; ++i)
        std::copy_n(table.data() + static_cast<int64_t>(indices[i]) * d, d,
                    out.data() + static_cast<int64_t>(i) * d);
    if (out.requires_grad()) {
        auto* tn = table.node;
        auto* on = out.node;
        tape.record([tn, on, indices = std::move(indices), d]() {
            on->ensure_grad();
            tn->ensure_grad();
            for (size_t i = 0; i < indices.size(); ++i)
                for (int j = 0; j < d; ++j)
                    tn->grad[static_cast<int64_t>(indices[i]) * d + j] +=
                        on->grad[static_cast<int64_t>(i) * d + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc({1}, a.requires_grad());
    T acc = T(0);
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i];
    out.data()[0] = acc;
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on]() {
            on->ensure_grad();
            an->ensure_grad();
            for (auto& g : an->grad) g += on->grad[0];
        });
    }
    return out;
}

template <typename T>
Var<T> mean(Var<T> a) {
    return scale(sum(a), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

/// Sum over one axis of a 2-d tensor: axis 0 gives column sums (length cols),
/// axis 1 gives row sums (length rows).
template <typename T>
Var<T> sum_axis(Var<T> a, int axis) {
    check_2d(a, "sum_axis");
    if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
    const int m = a.shape()[0], n = a.shape()[1];
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc({axis == 0 ? n : m}, a.requires_grad());
    if (axis == 0) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out.data()[j] += a.data()[static_cast<int64_t>(i) * n + j];
    } else {
        for (int i = 0; i < m; ++i) {
            T acc = T(0);
            for (int j = 0; j < n; ++j) acc += a.data()[static_cast<int64_t>(i) * n + j];
            out.data()[i] = acc;
        }
    }
    if (out.requires_grad()) {
        auto* an = a.node;
        auto* on = out.node;
        tape.record([an, on, m, n, axis]() {
            on->ensure_grad();
            an->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<int64_t>(i) * n + j] += on->grad[axis == 0 ? j : i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Graph utilities and composite losses
// ---------------------------------------------------------------------------

/// Identity in value, barrier for gradients.
template <typename T>
Var<T> detach(Var<T> a) {
    auto& tape = detail::tape_of(a);
    Var<T> out = tape.alloc(a.shape(), false);
    std::copy(a.node->value.begin(), a.node->value.end(), out.node->value.begin());
    return out;
}

/// Mean squared error over all elements.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Var<T> d = sub(a, b);
    return scale(sum(mul(d, d)), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

/// Mean over rows of the cross-entropy of `probs` rows against `target`
/// distribution rows: -(1/rows) sum target .* log(max(probs, floor)).
template <typename T>
Var<T> cross_entropy_rows(Var<T> target, Var<T> probs, T floor = static_cast<T>(1e-9)) {
    check_2d(probs, "cross_entropy_rows");
    if (target.shape() != probs.shape())
        throw std::invalid_argument("cross_entropy_rows: shape mismatch " +
                                    shape_str(target.shape()) + " vs " + shape_str(probs.shape()));
    const T inv_rows = static_cast<T>(1.0 / static_cast<double>(probs.shape()[0]));
    return scale(sum(mul(target, log_op(clamp_min(probs, floor)))), -inv_rows);
}

template <typename T>
bool all_finite(const Var<T>& a) {
    for (int64_t i = 0; i < a.numel(); ++i)
        if (!std::isfinite(static_cast<double>(a.data()[i]))) return false;
    return true;
}

}  // namespace spot
