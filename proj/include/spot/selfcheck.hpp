#pragma once

// Self-contained oracle and invariant checks, runnable from the CLI. The
// acceptance suite builds its first criteria directly on these.

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "spot/distill.hpp"
#include "spot/eval.hpp"
#include "spot/gradcheck.hpp"
#include "spot/metrics.hpp"
#include "spot/model.hpp"
#include "spot/reference.hpp"
#include "spot/scene.hpp"

namespace spot {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace selfcheck {

inline std::vector<double> random_vec(Rng& rng, size_t n, double s = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = s * rng.next_normal();
    return v;
}

inline CheckResult make_result(const std::string& name, bool pass, const std::string& detail) {
    return {name, pass, detail};
}

// --- criterion 1: gradient correctness --------------------------------------

inline ModelConfig micro_model_config() {
    ModelConfig mc;
    mc.grid_h = 2;
    mc.grid_w = 2;
    mc.d_y = 5;
    mc.d_patch = 6;
    mc.enc.d_enc = 8;
    mc.enc.depth = 1;
    mc.enc.heads = 2;
    mc.enc.trainable_blocks = 1;
    mc.slots.k = 2;
    mc.slots.d_u = 8;
    mc.slots.d_p = 8;
    mc.slots.iterations = 2;
    mc.slots.mlp_hidden = 12;
    mc.slots.init_mode = SlotInit::kGaussian;
    mc.dec.d_dec = 6;
    mc.dec.heads = 6;
    mc.dec.blocks = 2;
    mc.dec.ff_hidden = 12;
    mc.dec.mlp_hidden = 16;
    return mc;
}

inline std::vector<CheckResult> check_gradient_correctness() {
    std::vector<CheckResult> results;
    Rng rng(0xC1);

    // every primitive against central finite differences
    double worst_primitive = 0.0;
    std::string worst_name = "-";
    for (int trial = 0; trial < 3; ++trial) {
        const int m = rng.next_int(2, 4), n = rng.next_int(2, 4);
        TensorData<double> a({m, n}, true), b({m, n}, true), vl({n}, true), vr({m}, true);
        a.value = random_vec(rng, static_cast<size_t>(m) * n);
        b.value = random_vec(rng, static_cast<size_t>(m) * n);
        for (auto& x : b.value) x = (x >= 0 ? 1.0 : -1.0) * (0.5 + std::abs(x));
        vl.value = random_vec(rng, static_cast<size_t>(n));
        for (auto& x : vl.value) x = (x >= 0 ? 1.0 : -1.0) * (0.5 + std::abs(x));
        vr.value = random_vec(rng, static_cast<size_t>(m));
        TensorData<double> c({n, m}, true);
        c.value = random_vec(rng, static_cast<size_t>(m) * n);
        TensorData<double> gain({n}, true), bias({n}, true);
        gain.value = random_vec(rng, static_cast<size_t>(n));
        bias.value = random_vec(rng, static_cast<size_t>(n));

        using F = std::function<Var<double>(Tape<double>&)>;
        std::vector<std::pair<std::string, F>> cases;
        auto wa = [&](Tape<double>& t) { return t.watch(a); };
        cases.emplace_back("add", [&](Tape<double>& t) { return sum(add(wa(t), t.watch(b))); });
        cases.emplace_back("add_lastaxis", [&](Tape<double>& t) { return sum(add(wa(t), t.watch(vl))); });
        cases.emplace_back("sub", [&](Tape<double>& t) { return sum(sub(wa(t), t.watch(b))); });
        cases.emplace_back("mul", [&](Tape<double>& t) { return sum(mul(wa(t), t.watch(b))); });
        cases.emplace_back("div", [&](Tape<double>& t) { return sum(div(wa(t), t.watch(b))); });
        cases.emplace_back("scale", [&](Tape<double>& t) { return sum(scale(wa(t), 1.3)); });
        cases.emplace_back("matmul", [&](Tape<double>& t) { return sum(matmul(wa(t), t.watch(c))); });
        cases.emplace_back("transpose", [&](Tape<double>& t) { return sum(mul(transpose(wa(t)), t.watch(c))); });
        cases.emplace_back("row_scale", [&](Tape<double>& t) { return sum(row_scale(wa(t), t.watch(vr))); });
        cases.emplace_back("softmax1", [&](Tape<double>& t) { return sum(mul(softmax(wa(t), 1), t.watch(b))); });
        cases.emplace_back("softmax0", [&](Tape<double>& t) { return sum(mul(softmax(wa(t), 0), t.watch(b))); });
        cases.emplace_back("layer_norm", [&](Tape<double>& t) {
            return sum(mul(layer_norm(wa(t), t.watch(gain), t.watch(bias)), t.watch(b)));
        });
        cases.emplace_back("relu", [&](Tape<double>& t) { return sum(relu(wa(t))); });
        cases.emplace_back("gelu", [&](Tape<double>& t) { return sum(gelu(wa(t))); });
        cases.emplace_back("sigmoid", [&](Tape<double>& t) { return sum(mul(sigmoid(wa(t)), t.watch(b))); });
        cases.emplace_back("tanh", [&](Tape<double>& t) { return sum(mul(tanh_op(wa(t)), t.watch(b))); });
        cases.emplace_back("exp", [&](Tape<double>& t) { return sum(exp_op(wa(t))); });
        cases.emplace_back("log", [&](Tape<double>& t) {
            return sum(log_op(add_scalar(mul(wa(t), wa(t)), 0.5)));
        });
        cases.emplace_back("clamp_min", [&](Tape<double>& t) { return sum(clamp_min(wa(t), 0.05)); });
        cases.emplace_back("reshape", [&](Tape<double>& t) { return sum(reshape(wa(t), {n, m})); });
        cases.emplace_back("slice_rows", [&](Tape<double>& t) { return sum(slice_rows(wa(t), 0, m - 1 > 0 ? m - 1 : 1)); });
        cases.emplace_back("slice_cols", [&](Tape<double>& t) { return sum(slice_cols(wa(t), 0, n - 1 > 0 ? n - 1 : 1)); });
        cases.emplace_back("concat", [&](Tape<double>& t) {
            std::vector<Var<double>> parts{wa(t), t.watch(b)};
            return sum(mul(concat(parts, 0), concat(parts, 0)));
        });
        cases.emplace_back("gather_rows", [&](Tape<double>& t) {
            return sum(gather_rows(wa(t), {0, m - 1, 0}));
        });
        cases.emplace_back("sum_axis0", [&](Tape<double>& t) { return sum(mul(sum_axis(wa(t), 0), t.watch(vl))); });
        cases.emplace_back("sum_axis1", [&](Tape<double>& t) { return sum(mul(sum_axis(wa(t), 1), t.watch(vr))); });
        cases.emplace_back("mean", [&](Tape<double>& t) { return mean(mul(wa(t), wa(t))); });
        cases.emplace_back("mse", [&](Tape<double>& t) { return mse(wa(t), t.watch(b)); });
        cases.emplace_back("cross_entropy_rows", [&](Tape<double>& t) {
            return cross_entropy_rows(softmax(t.watch(b), 1), softmax(wa(t), 1));
        });
        for (auto& [name, f] : cases) {
            const double err = grad_check(f, {{"a", &a}, {"b", &b}, {"v", &vl}, {"r", &vr},
                                              {"c", &c}, {"gain", &gain}, {"bias", &bias}},
                                          1e-5, 6);
            if (err > worst_primitive) {
                worst_primitive = err;
                worst_name = name;
            }
        }
    }
    {
        std::ostringstream os;
        os << "max relative error " << worst_primitive << " (worst: " << worst_name << ")";
        results.push_back(make_result("gradients: primitives vs central differences",
                                      worst_primitive < 1e-4, os.str()));
    }

    // end-to-end micro model: full loss (reconstruction + distillation)
    {
        SpotModel<double> model;
        model.init(micro_model_config(), 7);
        Rng data(8);
        const int n = 4, d_y = 5, d_patch = 6, k = 2, d_u = 8;
        auto xv = random_vec(data, n * d_patch, 0.5);
        auto yv = random_vec(data, n * d_y, 0.5);
        auto eps = random_vec(data, k * d_u);

        // fixed teacher mask, matched once outside the differentiable path
        std::vector<uint8_t> matched;
        {
            Tape<double> t(false);
            auto x = t.constant({n, d_patch}, xv);
            auto y = t.constant({n, d_y}, yv);
            SlotOutput<double> enc = model.encode(t, x, model.slot_attn.init_slots_with_eps(t, eps));
            DecoderOutput<double> dec = model.decode(t, y, enc.slots, model.perms[8]);
            const auto hard = harden_masks(dec.a_dec);
            const auto iou = iou_cost(hard, enc.a_slot.data(), n, k);
            matched = apply_column_permutation(hard, n, k, hungarian_match(iou, k).perm);
        }

        // the patch/positional embeddings sit behind the freeze barrier, so
        // their gradients are zero by construction and FD cannot see that
        std::vector<GradCheckParam> params;
        model.visit([&](const std::string& name, TensorData<double>& p) {
            if (name.find("patch_embed") != std::string::npos) return;
            if (name.find("pos_embed") != std::string::npos) return;
            params.push_back({name, &p});
        });
        const double err = grad_check(
            [&](Tape<double>& t) {
                auto x = t.constant({n, d_patch}, xv);
                auto y = t.constant({n, d_y}, yv);
                SlotOutput<double> enc =
                    model.encode(t, x, model.slot_attn.init_slots_with_eps(t, eps));
                DecoderOutput<double> dec = model.decode(t, y, enc.slots, model.perms[8]);
                Var<double> l_rec = reconstruction_loss(y, dec.y_hat);
                Var<double> l_att = attn_distill_loss(t, matched, enc.a_slot);
                return add(l_rec, scale(l_att, 0.005));
            },
            params, 1e-5, 4);
        std::ostringstream os;
        os << "max relative error " << err << " over " << params.size() << " parameter tensors";
        results.push_back(
            make_result("gradients: micro-model end-to-end loss", err < 1e-4, os.str()));
    }
    return results;
}

// --- criterion 2: permutation suite ------------------------------------------

inline std::vector<CheckResult> check_permutation_suite() {
    std::vector<CheckResult> results;
    bool bijection_ok = true;
    std::string bad;
    for (auto [h, w] : {std::pair{4, 4}, std::pair{7, 7}}) {
        const auto perms = build_permutations(h, w);
        const int n = h * w;
        for (const auto& p : perms) {
            std::vector<bool> seen(static_cast<size_t>(n), false);
            for (int v : p.order) {
                if (v < 0 || v >= n || seen[static_cast<size_t>(v)]) bijection_ok = false;
                else seen[static_cast<size_t>(v)] = true;
            }
            for (int mpos = 0; mpos < n; ++mpos)
                if (p.inverse[static_cast<size_t>(p.order[mpos])] != mpos) bijection_ok = false;
            if (!bijection_ok && bad.empty())
                bad = p.name + " on " + std::to_string(h) + "x" + std::to_string(w);
        }
    }
    results.push_back(make_result("permutations: 9 bijections with exact inverses (4x4, 7x7)",
                                  bijection_ok, bijection_ok ? "all orders check out" : bad));

    // causality perturbations on a toy decoder, bitwise
    DecoderConfig dc;
    dc.d_dec = 12;
    dc.blocks = 2;
    dc.ff_hidden = 24;
    Rng rng(0xC2);
    ArDecoder<double> dec;
    const int n = 16, d_y = 4, d_u = 6, k = 2;
    dec.init(rng, dc, n, d_y, d_u);
    const auto perms = build_permutations(4, 4);
    auto yv = random_vec(rng, n * d_y);
    auto uv = random_vec(rng, k * d_u);
    bool causal_ok = true;
    std::string causal_detail = "bitwise invariance held at 10 positions per permutation";
    Rng pick(0xC3);
    for (const auto& perm : perms) {
        Tape<double> t(false);
        auto base = dec.forward(t, t.constant({n, d_y}, yv), t.constant({k, d_u}, uv), perm);
        for (int trial = 0; trial < 10; ++trial) {
            const int m = 1 + static_cast<int>(pick.next_below(n));
            const int mp = m + static_cast<int>(pick.next_below(static_cast<uint64_t>(n - m + 1)));
            auto perturbed = yv;
            const int patch = perm.order[mp - 1];
            for (int j = 0; j < d_y; ++j)
                perturbed[static_cast<size_t>(patch) * d_y + j] += 0.91 * (j + 1);
            Tape<double> t2(false);
            auto out = dec.forward(t2, t2.constant({n, d_y}, perturbed),
                                   t2.constant({k, d_u}, uv), perm);
            const int target = perm.order[m - 1];
            for (int j = 0; j < d_y; ++j)
                if (out.y_hat.data()[target * d_y + j] != base.y_hat.data()[target * d_y + j]) {
                    causal_ok = false;
                    causal_detail = "violation: perm " + std::to_string(perm.id) + " position " +
                                    std::to_string(m);
                }
        }
    }
    results.push_back(
        make_result("permutations: causality perturbation tests", causal_ok, causal_detail));
    return results;
}

// --- criterion 3: mask normalization -----------------------------------------

inline std::vector<CheckResult> check_mask_normalization() {
    double worst = 0.0;
    Rng rng(0xC4);
    auto update_worst = [&](const float* a, int rows, int cols) {
        for (int i = 0; i < rows; ++i) {
            double s = 0;
            for (int j = 0; j < cols; ++j) s += a[static_cast<size_t>(i) * cols + j];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    };
    for (int pass = 0; pass < 25; ++pass) {
        ModelConfig mc = micro_model_config();
        mc.slots.k = 2 + static_cast<int>(rng.next_below(3));
        SpotModel<float> model;
        model.init(mc, rng.next_u64());
        const int n = mc.n();
        Tape<float> t(false);
        std::vector<float> xv(static_cast<size_t>(n) * mc.d_patch), yv(static_cast<size_t>(n) * mc.d_y);
        for (auto& v : xv) v = static_cast<float>(rng.next_normal());
        for (auto& v : yv) v = static_cast<float>(rng.next_normal());
        auto x = t.constant({n, mc.d_patch}, xv);
        auto y = t.constant({n, mc.d_y}, yv);
        Rng noise(rng.next_u64());
        SlotOutput<float> enc = model.encode(t, x, model.slot_attn.init_slots(t, noise));
        update_worst(enc.a_slot.data(), n, mc.slots.k);
        DecoderOutput<float> dec =
            model.ar.forward(t, y, enc.slots, model.perms[rng.next_below(9)]);
        update_worst(dec.a_dec.data(), n, mc.slots.k);
        Var<float> ens = model.ar.ensemble_masks(t, y, enc.slots, model.perms);
        update_worst(ens.data(), n, mc.slots.k);
        MlpDecoder<float> mlp;
        Rng mr(rng.next_u64());
        mlp.init(mr, n, mc.d_y, mc.slots.d_u, 16);
        DecoderOutput<float> alpha = mlp.forward(t, enc.slots);
        update_worst(alpha.a_dec.data(), n, mc.slots.k);
    }
    std::ostringstream os;
    os << "100 forward passes; worst |row sum - 1| = " << worst;
    return {make_result("masks: A_SLOT / A_DEC / ensemble / alpha row-stochastic", worst <= 1e-6,
                        os.str())};
}

// --- criterion 4: assignment oracle -------------------------------------------

inline std::vector<CheckResult> check_assignment_oracle() {
    Rng rng(0xC5);
    bool ok = true;
    std::string detail = "100 random IoU matrices, k in 2..6, totals match brute force exactly";
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const int k = 2 + static_cast<int>(rng.next_below(5));
        std::vector<double> iou(static_cast<size_t>(k) * k);
        for (auto& x : iou) x = rng.next_double();
        const auto fast = hungarian_match(iou, k);
        const auto slow = refimpl::brute_force_max_assignment(iou, k);
        if (fast.perm != slow.perm || std::abs(fast.total_iou - slow.total) > 0.0) {
            ok = false;
            detail = "mismatch at trial " + std::to_string(trial) + " (k=" + std::to_string(k) + ")";
        }
    }
    return {make_result("assignment: hungarian equals factorial brute force", ok, detail)};
}

// --- criterion 5: metric oracles ----------------------------------------------

inline std::vector<CheckResult> check_metric_oracles() {
    std::vector<CheckResult> results;
    Rng rng(0xC6);
    bool ok = true;
    std::string detail = "50 random maps up to 8x8 with up to 5 labels";
    int used = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int h = 2 + static_cast<int>(rng.next_below(7));
        const int w = 2 + static_cast<int>(rng.next_below(7));
        LabelMap gt{h, w, {}}, pred{h, w, {}};
        gt.labels.resize(static_cast<size_t>(h) * w);
        pred.labels.resize(static_cast<size_t>(h) * w);
        const int gl = 1 + static_cast<int>(rng.next_below(4));
        const int pl = 1 + static_cast<int>(rng.next_below(5));
        for (auto& v : gt.labels) v = static_cast<int>(rng.next_below(static_cast<uint64_t>(gl + 1)));
        for (auto& v : pred.labels) v = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(pl)));
        const double ref_mbo = refimpl::mbo_reference(pred.labels, gt.labels);
        if (ref_mbo < 0) continue;
        ++used;
        if (std::abs(mbo(pred, gt) - ref_mbo) > 1e-12) ok = false;
        if (std::abs(miou_hungarian(pred, gt) - refimpl::miou_reference(pred.labels, gt.labels)) > 1e-9)
            ok = false;
        if (std::abs(fg_ari(pred, gt) - refimpl::fg_ari_reference(pred.labels, gt.labels)) > 1e-12)
            ok = false;
        if (fg_ari(gt, gt) != 1.0) ok = false;
        if (!ok) {
            detail = "oracle mismatch at trial " + std::to_string(trial);
            break;
        }
    }
    results.push_back(make_result("metrics: mbo/miou/fg_ari equal definitional oracles", ok,
                                  detail + " (" + std::to_string(used) + " with foreground)"));

    // the trivial-mask pathology: 1-block mask on single-object scenes
    SceneSpec spec;
    spec.objects_min = 1;
    spec.objects_max = 1;
    bool path_ok = true;
    double worst_mbo = 0.0;
    for (uint64_t seed = 0; seed < 25; ++seed) {
        const auto s = generate_scene(spec, seed);
        LabelMap gt{s.height, s.width, s.instance_labels};
        const auto block = nblock_baseline(1, 1, s.height, s.width);
        if (fg_ari(block, gt) != 1.0) path_ok = false;
        worst_mbo = std::max(worst_mbo, mbo(block, gt));
    }
    std::ostringstream os;
    os << "FG-ARI = 1.0 on all 25 single-object scenes; worst 1-block mBO_i = " << worst_mbo;
    results.push_back(make_result("metrics: 1-block mask pathology (high FG-ARI, low mBO)",
                                  path_ok && worst_mbo < 0.6, os.str()));
    return results;
}

// --- infrastructure extras -----------------------------------------------------

inline std::vector<CheckResult> check_infrastructure() {
    std::vector<CheckResult> results;

    {
        SceneSpec spec;
        const auto a = generate_scene(spec, 42);
        const auto b = generate_scene(spec, 42);
        const bool ok = a.image == b.image && a.instance_labels == b.instance_labels;
        results.push_back(make_result("scene: (spec, seed) regeneration is byte-identical", ok,
                                      ok ? "images and label maps match" : "mismatch"));
    }
    {
        SceneSpec spec;
        auto s = generate_scene(spec, 43);
        patchify_targets(s, spec, TargetMode::kPixels);
        const bool ok = unpatchify(s.patch_targets, spec) == s.image;
        results.push_back(make_result("scene: pixels patchify is lossless", ok,
                                      ok ? "unpatchify . patchify = identity" : "mismatch"));
    }
    {
        LrSchedule s;
        s.peak = 4e-4;
        s.low = 4e-7;
        s.warmup_steps = 500;
        s.total_steps = 2000;
        const bool ok = lr_at(0, s) == 0.0 && std::abs(lr_at(500, s) - 4e-4) < 1e-18 &&
                        std::abs(lr_at(2000, s) - 4e-7) < 1e-18;
        results.push_back(make_result("schedule: warmup/cosine endpoints pinned", ok,
                                      "lr(0)=0, lr(warmup)=4e-4, lr(end)=4e-7"));
    }
    {
        TensorData<double> p({1}, true);
        p.value = {1.0};
        p.ensure_grad();
        p.grad = {1.0};
        Adam<double> opt({{"p", &p}});
        opt.step(0.01);
        const bool ok = std::abs(p.value[0] - 0.99) < 1e-6;
        results.push_back(make_result("optimizer: first Adam step moves by -lr", ok,
                                      "bias-corrected unit gradient"));
    }
    return results;
}

inline std::vector<CheckResult> run_fast_checks() {
    std::vector<CheckResult> all;
    for (auto&& group :
         {check_gradient_correctness(), check_permutation_suite(), check_mask_normalization(),
          check_assignment_oracle(), check_metric_oracles(), check_infrastructure()})
        all.insert(all.end(), group.begin(), group.end());
    return all;
}

}  // namespace selfcheck
}  // namespace spot
