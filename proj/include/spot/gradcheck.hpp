#pragma once

// Finite-difference verification of analytic gradients. Always runs in
// 64-bit regardless of the training precision.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spot/rng.hpp"
#include "spot/tensor.hpp"

namespace spot {

struct GradCheckParam {
    std::string name;
    TensorData<double>* tensor;
};

/// Evaluates `f` (a deterministic scalar function of the given parameters,
/// built on a fresh tape per call) and returns the max relative error
/// between analytic gradients and central finite differences with step h:
/// max over sampled coordinates of |analytic - numeric| / max(1, |analytic|).
///
/// Coordinates are sampled (up to max_coords per parameter) with a seeded
/// generator so the check itself is deterministic.
inline double grad_check(const std::function<Var<double>(Tape<double>&)>& f,
                         std::vector<GradCheckParam> params, double h = 1e-5,
                         int max_coords = 24, uint64_t seed = 0x5eedcafe) {
    for (auto& p : params) p.tensor->requires_grad = true;

    Tape<double> tape;
    Var<double> loss = f(tape);
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
    if (!std::isfinite(loss.item()))
        throw std::runtime_error("grad_check: non-finite loss value");
    tape.zero_grads();
    for (auto& p : params) p.tensor->zero_grad();
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& p : params) {
        p.tensor->ensure_grad();
        analytic.push_back(p.tensor->grad);
        for (double g : p.tensor->grad)
            if (!std::isfinite(g))
                throw std::runtime_error("grad_check: non-finite gradient in parameter '" +
                                         p.name + "'");
    }

    Rng pick(seed);
    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& t = *params[pi].tensor;
        const int64_t n = t.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int c = 0; c < max_coords; ++c)
                coords.push_back(static_cast<int64_t>(pick.next_below(static_cast<uint64_t>(n))));
        }
        for (int64_t ci : coords) {
            const double saved = t.value[static_cast<size_t>(ci)];
            t.value[static_cast<size_t>(ci)] = saved + h;
            Tape<double> tp;
            const double lp = f(tp).item();
            t.value[static_cast<size_t>(ci)] = saved - h;
            Tape<double> tm;
            const double lm = f(tm).item();
            t.value[static_cast<size_t>(ci)] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw std::runtime_error("grad_check: non-finite perturbed loss at parameter '" +
                                         params[pi].name + "'");
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][static_cast<size_t>(ci)];
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace spot
