#pragma once

// Patch feature extraction and the iterative slot-attention bottleneck.
// Softmax in the bottleneck runs over the slot axis so slots compete for
// patches; the per-slot update is an attention-weighted mean of values
// (epsilon 1e-8), fed through a gated recurrent cell and a residual MLP.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spot/nn.hpp"
#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

struct EncoderConfig {
    int d_enc = 64;
    int depth = 2;
    int heads = 4;
    int trainable_blocks = 0;  // how many of the final blocks receive gradients

    void validate() const {
        if (trainable_blocks < 0 || trainable_blocks > depth)
            throw std::invalid_argument("EncoderConfig: trainable_blocks must be in [0, depth]");
        if (heads <= 0 || d_enc % heads != 0)
            throw std::invalid_argument("EncoderConfig: d_enc must be divisible by heads");
    }
};

enum class SlotInit { kGaussian, kLearnable };

inline std::string slot_init_name(SlotInit m) {
    return m == SlotInit::kGaussian ? "gaussian" : "learnable";
}

inline SlotInit slot_init_from_name(const std::string& s) {
    if (s == "gaussian") return SlotInit::kGaussian;
    if (s == "learnable") return SlotInit::kLearnable;
    throw std::invalid_argument("unknown slot init mode: " + s);
}

struct SlotConfig {
    int k = 5;
    int d_u = 64;
    int iterations = 3;
    int mlp_hidden = 256;
    int d_p = 64;
    SlotInit init_mode = SlotInit::kGaussian;

    void validate() const {
        if (k < 2) throw std::invalid_argument("SlotConfig: need k >= 2");
        if (iterations < 1) throw std::invalid_argument("SlotConfig: need iterations >= 1");
    }
};

template <typename T>
struct SlotOutput {
    Var<T> slots;   // U: k x d_u
    Var<T> a_slot;  // n x k, rows sum to 1
};

/// Patch embedding + learned positions + pre-slot transformer blocks.
/// Gradients are blocked for everything except the last trainable_blocks
/// blocks (the embedding stays frozen whenever depth > 0 is fine-tuned,
/// mirroring partial fine-tuning of a pretrained encoder).
template <typename T>
struct PatchEncoder {
    EncoderConfig cfg;
    int n = 0;
    Linear<T> patch_embed;
    TensorData<T> pos_embed;  // [n, d_enc]
    std::vector<TransformerBlock<T>> blocks;

    void init(Rng& rng, const EncoderConfig& c, int n_patches, int d_patch) {
        c.validate();
        cfg = c;
        n = n_patches;
        patch_embed.init(rng, d_patch, cfg.d_enc);
        pos_embed = TensorData<T>({n, cfg.d_enc}, true);
        init_normal(pos_embed, rng, 0.02);
        blocks.assign(static_cast<size_t>(cfg.depth), {});
        for (auto& b : blocks) b.init(rng, cfg.d_enc, cfg.heads, 4 * cfg.d_enc);
    }

    Var<T> forward(Tape<T>& t, Var<T> patches) {
        if (patches.rows() != n)
            throw std::invalid_argument("PatchEncoder: expected " + std::to_string(n) +
                                        " patches, got " + shape_str(patches.shape()));
        Var<T> x = add(patch_embed.forward(t, patches), t.watch(pos_embed));
        const int barrier = cfg.depth - cfg.trainable_blocks;  // detach before block[barrier]
        if (barrier == 0) x = detach(x);
        for (int i = 0; i < cfg.depth; ++i) {
            x = blocks[static_cast<size_t>(i)].forward(t, x);
            if (i + 1 == barrier) x = detach(x);
        }
        return x;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        patch_embed.visit(prefix + ".patch_embed", v);
        v(prefix + ".pos_embed", pos_embed);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(prefix + ".block" + std::to_string(i), v);
    }
};

template <typename T>
struct SlotAttentionModule {
    SlotConfig cfg;
    int d_in = 0;
    LayerNorm<T> norm_input, norm_slots, norm_mlp;
    Linear<T> wq, wk, wv;  // bias-free projections
    GruCell<T> gru;
    Linear<T> mlp1, mlp2;
    // gaussian init parameters (shared across slots)
    TensorData<T> mu, log_sigma;
    // learnable init queries
    TensorData<T> queries;

    void init(Rng& rng, const SlotConfig& c, int input_width) {
        c.validate();
        cfg = c;
        d_in = input_width;
        norm_input.init(input_width);
        norm_slots.init(cfg.d_u);
        norm_mlp.init(cfg.d_u);
        wq.init(rng, cfg.d_u, cfg.d_p, /*bias=*/false);
        wk.init(rng, input_width, cfg.d_p, /*bias=*/false);
        wv.init(rng, input_width, cfg.d_u, /*bias=*/false);
        gru.init(rng, cfg.d_u);
        mlp1.init(rng, cfg.d_u, cfg.mlp_hidden);
        mlp2.init(rng, cfg.mlp_hidden, cfg.d_u);
        if (cfg.init_mode == SlotInit::kGaussian) {
            mu = TensorData<T>({cfg.d_u}, true);
            init_normal(mu, rng, 0.02);
            log_sigma = TensorData<T>({cfg.d_u}, true);
            init_zeros(log_sigma);
        } else {
            // queries need spread comparable to the gaussian draw, otherwise
            // all slots start identical and the bottleneck cannot break the
            // symmetry (identical slots stay identical through every update)
            queries = TensorData<T>({cfg.k, cfg.d_u}, true);
            init_normal(queries, rng, 1.0);
        }
    }

    /// Initial slots. Gaussian mode draws eps once per call from `noise`;
    /// learnable mode returns the trainable query matrix.
    Var<T> init_slots(Tape<T>& t, Rng& noise) {
        if (cfg.init_mode == SlotInit::kLearnable) return t.watch(queries);
        std::vector<T> eps(static_cast<size_t>(cfg.k) * cfg.d_u);
        noise.fill_normal(eps);
        return init_slots_with_eps(t, eps);
    }

    Var<T> init_slots_with_eps(Tape<T>& t, const std::vector<T>& eps) {
        Var<T> ones = t.constant({cfg.k, 1}, std::vector<T>(static_cast<size_t>(cfg.k), T(1)));
        Var<T> mu_b = matmul(ones, reshape(t.watch(mu), {1, cfg.d_u}));
        Var<T> sig_b = matmul(ones, exp_op(reshape(t.watch(log_sigma), {1, cfg.d_u})));
        return add(mu_b, mul(sig_b, t.constant({cfg.k, cfg.d_u}, eps)));
    }

    /// first_hidden_override, when given, replaces the first iteration's
    /// recurrence input (and suppresses the learnable-mode gradient stop);
    /// it exists so tests can probe the stop-gradient wiring.
    SlotOutput<T> forward(Tape<T>& t, Var<T> features, Var<T> initial_slots,
                          Var<T>* first_hidden_override = nullptr) {
        if (features.cols() != d_in)
            throw std::invalid_argument("slot_attention: feature width " +
                                        std::to_string(features.cols()) + " != " +
                                        std::to_string(d_in));
        const int n = features.rows();
        const T inv_sqrt_dp = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.d_p)));
        Var<T> f_n = norm_input.forward(t, features);
        Var<T> keys = wk.forward(t, f_n);    // n x d_p
        Var<T> values = wv.forward(t, f_n);  // n x d_u

        Var<T> slots = initial_slots;
        Var<T> a_slot;
        for (int it = 0; it < cfg.iterations; ++it) {
            Var<T> q = wq.forward(t, norm_slots.forward(t, slots));  // k x d_p
            Var<T> logits = scale(matmul(q, transpose(keys)), inv_sqrt_dp);  // k x n
            Var<T> attn = softmax(logits, 0);  // softmax over the slot axis
            if (!all_finite(attn))
                throw std::runtime_error("slot_attention: NaN in attention at iteration " +
                                         std::to_string(it + 1));
            a_slot = transpose(attn);  // n x k

            // per-slot weighted mean of values, weights renormalized per slot
            Var<T> mass = sum_axis(a_slot, 0);                          // k
            Var<T> weights = div(a_slot, add_scalar(mass, static_cast<T>(1e-8)));
            Var<T> updates = matmul(transpose(weights), values);        // k x d_u

            Var<T> hidden = slots;
            if (it == 0 && first_hidden_override)
                hidden = *first_hidden_override;
            else if (it == 0 && cfg.init_mode == SlotInit::kLearnable)
                hidden = detach(hidden);
            slots = gru.forward(t, updates, hidden);
            slots = add(slots, mlp2.forward(t, relu(mlp1.forward(t, norm_mlp.forward(t, slots)))));
        }
        (void)n;
        return {slots, a_slot};
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        norm_input.visit(prefix + ".norm_input", v);
        norm_slots.visit(prefix + ".norm_slots", v);
        norm_mlp.visit(prefix + ".norm_mlp", v);
        wq.visit(prefix + ".wq", v);
        wk.visit(prefix + ".wk", v);
        wv.visit(prefix + ".wv", v);
        gru.visit(prefix + ".gru", v);
        mlp1.visit(prefix + ".mlp1", v);
        mlp2.visit(prefix + ".mlp2", v);
        if (cfg.init_mode == SlotInit::kGaussian) {
            v(prefix + ".mu", mu);
            v(prefix + ".log_sigma", log_sigma);
        } else {
            v(prefix + ".queries", queries);
        }
    }
};

}  // namespace spot
