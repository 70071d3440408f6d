#pragma once

// Network building blocks shared by the encoder and the decoders. Each
// module owns its parameter tensors by value and exposes
// visit(prefix, fn) so optimizers and checkpoints can walk every named
// parameter in a stable order.

#include <functional>
#include <string>
#include <vector>

#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, TensorData<T>&)>;

template <typename T>
void init_normal(TensorData<T>& p, Rng& rng, double stddev) {
    p.requires_grad = true;
    rng.fill_normal(p.value, stddev);
}

template <typename T>
void init_zeros(TensorData<T>& p) {
    p.requires_grad = true;
    std::fill(p.value.begin(), p.value.end(), T(0));
}

template <typename T>
void init_ones(TensorData<T>& p) {
    p.requires_grad = true;
    std::fill(p.value.begin(), p.value.end(), T(1));
}

template <typename T>
struct Linear {
    TensorData<T> w;  // [in, out]
    TensorData<T> b;  // [out]
    bool has_bias = true;

    void init(Rng& rng, int in, int out, bool bias = true) {
        has_bias = bias;
        w = TensorData<T>({in, out}, true);
        init_normal(w, rng, 1.0 / std::sqrt(static_cast<double>(in)));
        if (has_bias) {
            b = TensorData<T>({out}, true);
            init_zeros(b);
        }
    }

    Var<T> forward(Tape<T>& t, Var<T> x) {
        Var<T> y = matmul(x, t.watch(w));
        if (has_bias) y = add(y, t.watch(b));
        return y;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        v(prefix + ".w", w);
        if (has_bias) v(prefix + ".b", b);
    }
};

template <typename T>
struct LayerNorm {
    TensorData<T> gain;
    TensorData<T> bias;

    void init(int d) {
        gain = TensorData<T>({d}, true);
        init_ones(gain);
        bias = TensorData<T>({d}, true);
        init_zeros(bias);
    }

    Var<T> forward(Tape<T>& t, Var<T> x) {
        return layer_norm(x, t.watch(gain), t.watch(bias));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        v(prefix + ".gain", gain);
        v(prefix + ".bias", bias);
    }
};

template <typename T>
struct FeedForward {
    Linear<T> fc1;
    Linear<T> fc2;

    void init(Rng& rng, int d, int hidden) {
        fc1.init(rng, d, hidden);
        fc2.init(rng, hidden, d);
    }

    Var<T> forward(Tape<T>& t, Var<T> x) { return fc2.forward(t, gelu(fc1.forward(t, x))); }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        fc1.visit(prefix + ".fc1", v);
        fc2.visit(prefix + ".fc2", v);
    }
};

/// Multi-head attention. Queries come from x, keys/values from ctx.
/// Returns the projected output; the mean of the per-head attention maps
/// (queries x keys, each row a distribution over keys) is written to
/// *attn_mean_out when requested.
template <typename T>
struct MultiheadAttention {
    Linear<T> wq, wk, wv, wo;
    int heads = 1;
    int d_model = 0;
    int d_kv = 0;

    void init(Rng& rng, int d, int h, int kv_width = -1) {
        if (kv_width < 0) kv_width = d;
        if (d % h != 0)
            throw std::invalid_argument("MultiheadAttention: width " + std::to_string(d) +
                                        " not divisible by " + std::to_string(h) + " heads");
        heads = h;
        d_model = d;
        d_kv = kv_width;
        wq.init(rng, d, d);
        wk.init(rng, kv_width, d);
        wv.init(rng, kv_width, d);
        wo.init(rng, d, d);
    }

    Var<T> forward(Tape<T>& t, Var<T> x, Var<T> ctx, Var<T>* additive_mask = nullptr,
                   Var<T>* attn_mean_out = nullptr) {
        const int dh = d_model / heads;
        Var<T> q = wq.forward(t, x);
        Var<T> k = wk.forward(t, ctx);
        Var<T> v = wv.forward(t, ctx);
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        std::vector<Var<T>> head_outs;
        Var<T> attn_sum;
        for (int h = 0; h < heads; ++h) {
            Var<T> qh = slice_cols(q, h * dh, dh);
            Var<T> kh = slice_cols(k, h * dh, dh);
            Var<T> vh = slice_cols(v, h * dh, dh);
            Var<T> logits = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (additive_mask) logits = add(logits, *additive_mask);
            Var<T> attn = softmax(logits, 1);
            if (attn_mean_out) attn_sum = h == 0 ? attn : add(attn_sum, attn);
            head_outs.push_back(matmul(attn, vh));
        }
        if (attn_mean_out)
            *attn_mean_out = scale(attn_sum, static_cast<T>(1.0 / static_cast<double>(heads)));
        return wo.forward(t, concat(head_outs, 1));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        wq.visit(prefix + ".wq", v);
        wk.visit(prefix + ".wk", v);
        wv.visit(prefix + ".wv", v);
        wo.visit(prefix + ".wo", v);
    }
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += ff(ln2(x)).
template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiheadAttention<T> attn;
    FeedForward<T> ff;

    void init(Rng& rng, int d, int heads, int ff_hidden) {
        ln1.init(d);
        ln2.init(d);
        attn.init(rng, d, heads);
        ff.init(rng, d, ff_hidden);
    }

    Var<T> forward(Tape<T>& t, Var<T> x, Var<T>* additive_mask = nullptr) {
        Var<T> h = ln1.forward(t, x);
        x = add(x, attn.forward(t, h, h, additive_mask));
        x = add(x, ff.forward(t, ln2.forward(t, x)));
        return x;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        ln1.visit(prefix + ".ln1", v);
        attn.visit(prefix + ".attn", v);
        ln2.visit(prefix + ".ln2", v);
        ff.visit(prefix + ".ff", v);
    }
};

/// Gated recurrent cell used by the slot-attention update.
template <typename T>
struct GruCell {
    Linear<T> xz, hz, xr, hr, xh, hh;

    void init(Rng& rng, int d) {
        xz.init(rng, d, d);
        hz.init(rng, d, d, /*bias=*/false);
        xr.init(rng, d, d);
        hr.init(rng, d, d, /*bias=*/false);
        xh.init(rng, d, d);
        hh.init(rng, d, d, /*bias=*/false);
    }

    Var<T> forward(Tape<T>& t, Var<T> x, Var<T> h) {
        Var<T> z = sigmoid(add(xz.forward(t, x), hz.forward(t, h)));
        Var<T> r = sigmoid(add(xr.forward(t, x), hr.forward(t, h)));
        Var<T> cand = tanh_op(add(xh.forward(t, x), hh.forward(t, mul(r, h))));
        // h' = (1 - z) * h + z * cand
        Var<T> one_minus_z = add_scalar(scale(z, T(-1)), T(1));
        return add(mul(one_minus_z, h), mul(z, cand));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        xz.visit(prefix + ".xz", v);
        hz.visit(prefix + ".hz", v);
        xr.visit(prefix + ".xr", v);
        hr.visit(prefix + ".hr", v);
        xh.visit(prefix + ".xh", v);
        hh.visit(prefix + ".hh", v);
    }
};

/// Causal mask: 0 on and below the diagonal, -1e9 above. Built once per
/// sequence length and reused as a constant.
template <typename T>
std::vector<T> causal_mask_values(int n) {
    std::vector<T> m(static_cast<size_t>(n) * n, T(0));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m[static_cast<size_t>(i) * n + j] = static_cast<T>(-1e9);
    return m;
}

}  // namespace spot
