#pragma once

// Autoregressive transformer decoder with sequence permutations, plus the
// MLP spatial-broadcast alternative.
//
// For permutation j the decoder consumes (BOS_j; y_sigma(1); ...;
// y_sigma(n-1)), runs causal self-attention over that sequence,
// cross-attends from patches to slots, and emits predictions in permuted
// order which are mapped back to canonical order with the inverse
// permutation. Positional embeddings index the canonical patch position of
// each input token (the BOS has its own position slot); the per-permutation
// BOS embedding is what tells the decoder which order it is following.

#include <stdexcept>
#include <string>
#include <vector>

#include "spot/nn.hpp"
#include "spot/permutations.hpp"
#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

constexpr int kNumPermutations = 9;

struct DecoderConfig {
    int d_dec = 48;
    int heads = 6;
    int blocks = 4;
    int ff_hidden = 192;
    int mlp_hidden = 256;  // used by the MLP decoder

    void validate() const {
        if (heads <= 0 || d_dec % heads != 0)
            throw std::invalid_argument("DecoderConfig: d_dec must be divisible by heads");
        if (blocks < 1) throw std::invalid_argument("DecoderConfig: need at least one block");
    }
};

template <typename T>
struct DecoderOutput {
    Var<T> y_hat;  // n x d_y, canonical order
    Var<T> a_dec;  // n x k, canonical order, rows sum to 1
};

template <typename T>
struct ArDecoderBlock {
    LayerNorm<T> ln1, ln2, ln3;
    MultiheadAttention<T> self_attn;
    MultiheadAttention<T> cross_attn;
    FeedForward<T> ff;

    void init(Rng& rng, int d, int heads, int ff_hidden, int d_u) {
        ln1.init(d);
        ln2.init(d);
        ln3.init(d);
        self_attn.init(rng, d, heads);
        cross_attn.init(rng, d, heads, d_u);
        ff.init(rng, d, ff_hidden);
    }

    Var<T> forward(Tape<T>& t, Var<T> x, Var<T> slots, Var<T>* causal,
                   Var<T>* cross_attn_mean = nullptr) {
        Var<T> h = ln1.forward(t, x);
        x = add(x, self_attn.forward(t, h, h, causal));
        x = add(x, cross_attn.forward(t, ln2.forward(t, x), slots, nullptr, cross_attn_mean));
        x = add(x, ff.forward(t, ln3.forward(t, x)));
        return x;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        ln1.visit(prefix + ".ln1", v);
        self_attn.visit(prefix + ".self", v);
        ln2.visit(prefix + ".ln2", v);
        cross_attn.visit(prefix + ".cross", v);
        ln3.visit(prefix + ".ln3", v);
        ff.visit(prefix + ".ff", v);
    }
};

template <typename T>
struct ArDecoder {
    DecoderConfig cfg;
    int n = 0, d_y = 0, d_u = 0;
    TensorData<T> bos;  // [9, d_y], one learnable BOS per permutation
    TensorData<T> pos;  // [n + 1, d_y]; row 0 for BOS, row 1+p for canonical patch p
    Linear<T> in_proj;
    std::vector<ArDecoderBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Linear<T> out_proj;
    std::vector<T> causal_values;

    void init(Rng& rng, const DecoderConfig& c, int n_patches, int target_width,
              int slot_width) {
        c.validate();
        cfg = c;
        n = n_patches;
        d_y = target_width;
        d_u = slot_width;
        bos = TensorData<T>({kNumPermutations, d_y}, true);
        init_normal(bos, rng, 0.02);
        pos = TensorData<T>({n + 1, d_y}, true);
        init_normal(pos, rng, 0.02);
        in_proj.init(rng, d_y, cfg.d_dec);
        blocks.assign(static_cast<size_t>(cfg.blocks), {});
        for (auto& b : blocks) b.init(rng, cfg.d_dec, cfg.heads, cfg.ff_hidden, d_u);
        ln_f.init(cfg.d_dec);
        out_proj.init(rng, cfg.d_dec, d_y);
        causal_values = causal_mask_values<T>(n);
    }

    /// Permuted, right-shifted decoder input: row 0 is the permutation's BOS
    /// embedding, row m is Y[order[m-1]]. The last patch in decoding order
    /// never appears in the input.
    Var<T> shift_with_bos(Tape<T>& t, Var<T> y, const PermutationSpec& perm) {
        if (y.rows() != n || y.cols() != d_y)
            throw std::invalid_argument("shift_with_bos: expected " + std::to_string(n) + "x" +
                                        std::to_string(d_y) + " targets, got " +
                                        shape_str(y.shape()));
        Var<T> bos_row = gather_rows(t.watch(bos), {perm.bos_id});
        if (n == 1) return bos_row;
        std::vector<int> prev(perm.order.begin(), perm.order.end() - 1);
        std::vector<Var<T>> parts{bos_row, gather_rows(y, prev)};
        return concat(parts, 0);
    }

    DecoderOutput<T> forward(Tape<T>& t, Var<T> y, Var<T> slots, const PermutationSpec& perm) {
        if (slots.cols() != d_u)
            throw std::invalid_argument("decode_ar: slot width " + std::to_string(slots.cols()) +
                                        " != " + std::to_string(d_u));
        std::vector<int> pos_idx(static_cast<size_t>(n));
        pos_idx[0] = 0;
        for (int m = 1; m < n; ++m) pos_idx[static_cast<size_t>(m)] = 1 + perm.order[m - 1];
        Var<T> x = add(shift_with_bos(t, y, perm), gather_rows(t.watch(pos), pos_idx));
        x = in_proj.forward(t, x);
        Var<T> causal = t.constant({n, n}, causal_values);
        Var<T> attn_mean;
        for (size_t b = 0; b < blocks.size(); ++b) {
            Var<T>* want = b + 1 == blocks.size() ? &attn_mean : nullptr;
            x = blocks[b].forward(t, x, slots, &causal, want);
        }
        Var<T> y_perm = out_proj.forward(t, ln_f.forward(t, x));
        return {gather_rows(y_perm, perm.inverse), gather_rows(attn_mean, perm.inverse)};
    }

    /// Test-time ensembling: decoder cross-attention masks averaged over all
    /// nine permutations, in canonical order.
    Var<T> ensemble_masks(Tape<T>& t, Var<T> y, Var<T> slots,
                          const std::vector<PermutationSpec>& perms) {
        Var<T> acc;
        for (size_t j = 0; j < perms.size(); ++j) {
            Var<T> a = forward(t, y, slots, perms[j]).a_dec;
            acc = j == 0 ? a : add(acc, a);
        }
        return scale(acc, static_cast<T>(1.0 / static_cast<double>(perms.size())));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        v(prefix + ".bos", bos);
        v(prefix + ".pos", pos);
        in_proj.visit(prefix + ".in_proj", v);
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].visit(prefix + ".block" + std::to_string(i), v);
        ln_f.visit(prefix + ".ln_f", v);
        out_proj.visit(prefix + ".out_proj", v);
    }
};

/// Spatial-broadcast decoder: each slot is copied to all n positions, tagged
/// with a learned position code, pushed through a shared 4-layer ReLU MLP
/// emitting d_y + 1 channels; the extra channel becomes the per-slot alpha
/// map (softmax over slots per position) that mixes slot reconstructions.
template <typename T>
struct MlpDecoder {
    int n = 0, d_y = 0, d_u = 0;
    TensorData<T> pos;  // [n, d_u]
    Linear<T> fc1, fc2, fc3, fc4;

    void init(Rng& rng, int n_patches, int target_width, int slot_width, int hidden) {
        n = n_patches;
        d_y = target_width;
        d_u = slot_width;
        pos = TensorData<T>({n, d_u}, true);
        init_normal(pos, rng, 0.02);
        fc1.init(rng, d_u, hidden);
        fc2.init(rng, hidden, hidden);
        fc3.init(rng, hidden, hidden);
        fc4.init(rng, hidden, d_y + 1);
    }

    DecoderOutput<T> forward(Tape<T>& t, Var<T> slots) {
        const int k = slots.rows();
        Var<T> ones = t.constant({n, 1}, std::vector<T>(static_cast<size_t>(n), T(1)));
        std::vector<Var<T>> recon;
        std::vector<Var<T>> alpha_logits;
        for (int s = 0; s < k; ++s) {
            Var<T> token = add(matmul(ones, slice_rows(slots, s, 1)), t.watch(pos));
            Var<T> h = relu(fc1.forward(t, token));
            h = relu(fc2.forward(t, h));
            h = relu(fc3.forward(t, h));
            Var<T> out = fc4.forward(t, h);  // n x (d_y + 1)
            recon.push_back(slice_cols(out, 0, d_y));
            alpha_logits.push_back(slice_cols(out, d_y, 1));
        }
        Var<T> alpha = softmax(concat(alpha_logits, 1), 1);  // n x k
        Var<T> y_hat;
        for (int s = 0; s < k; ++s) {
            Var<T> w = reshape(slice_cols(alpha, s, 1), {n});
            Var<T> contrib = row_scale(recon[static_cast<size_t>(s)], w);
            y_hat = s == 0 ? contrib : add(y_hat, contrib);
        }
        return {y_hat, alpha};
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& v) {
        v(prefix + ".pos", pos);
        fc1.visit(prefix + ".fc1", v);
        fc2.visit(prefix + ".fc2", v);
        fc3.visit(prefix + ".fc3", v);
        fc4.visit(prefix + ".fc4", v);
    }
};

}  // namespace spot
