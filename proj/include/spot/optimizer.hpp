#pragma once

// Adam (beta1 0.9, beta2 0.999, eps 1e-8, no weight decay) and the
// linear-warmup-then-cosine learning-rate schedule.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "spot/nn.hpp"
#include "spot/tensor.hpp"

namespace spot {

struct LrSchedule {
    double peak = 4e-4;
    double low = 4e-7;
    int warmup_steps = 500;
    int total_steps = 10000;
};

/// Linear 0 -> peak over warmup_steps, then cosine peak -> low over the
/// remaining steps, constant low afterwards. Continuous at the junction.
inline double lr_at(int step, const LrSchedule& s) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (step < s.warmup_steps)
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (step >= s.total_steps) return s.low;
    const int span = std::max(1, s.total_steps - s.warmup_steps);
    const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
    return s.low + 0.5 * (s.peak - s.low) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
struct AdamParam {
    std::string name;
    TensorData<T>* tensor = nullptr;
};

template <typename T>
class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit Adam(std::vector<AdamParam<T>> params) : params_(std::move(params)) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor->value.size(), T(0));
            v_[i].assign(params_[i].tensor->value.size(), T(0));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = *params_[pi].tensor;
            p.ensure_grad();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (size_t i = 0; i < p.value.size(); ++i) {
                const double g = static_cast<double>(p.grad[i]);
                if (!std::isfinite(g))
                    throw std::runtime_error("adam_step: NaN gradient in parameter '" +
                                             params_[pi].name + "'");
                const double mi = kBeta1 * static_cast<double>(m[i]) + (1.0 - kBeta1) * g;
                const double vi = kBeta2 * static_cast<double>(v[i]) + (1.0 - kBeta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) -
                                            lr * mhat / (std::sqrt(vhat) + kEps));
            }
        }
    }

    int64_t steps_taken() const { return t_; }
    void set_steps_taken(int64_t t) { t_ = t; }
    size_t num_params() const { return params_.size(); }
    const AdamParam<T>& param(size_t i) const { return params_[i]; }
    std::vector<T>& moment1(size_t i) { return m_[i]; }
    std::vector<T>& moment2(size_t i) { return v_[i]; }

private:
    std::vector<AdamParam<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace spot
