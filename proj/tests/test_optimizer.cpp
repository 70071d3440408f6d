#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "spot/optimizer.hpp"
#include "spot/rng.hpp"

using namespace spot;

TEST_CASE("lr schedule pins and shape") {
    LrSchedule s;
    s.peak = 4e-4;
    s.low = 4e-7;
    s.warmup_steps = 500;
    s.total_steps = 4000;
    REQUIRE(lr_at(0, s) == 0.0);
    REQUIRE(lr_at(500, s) == Catch::Approx(4e-4).margin(1e-15));
    REQUIRE(lr_at(4000, s) == Catch::Approx(4e-7).margin(1e-15));
    REQUIRE(lr_at(9999, s) == Catch::Approx(4e-7).margin(1e-15));

    // continuity at the junction
    REQUIRE(std::abs(lr_at(499, s) - lr_at(500, s)) < 4e-4 / 250.0);

    // monotone nonincreasing after the peak
    double prev = lr_at(500, s);
    for (int step = 501; step <= 4200; ++step) {
        const double cur = lr_at(step, s);
        REQUIRE(cur <= prev + 1e-18);
        prev = cur;
    }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    TensorData<float> p({4}, true);
    p.value = {1.0f, -2.0f, 0.25f, 9.0f};
    p.ensure_grad();
    const auto before = p.value;
    Adam<float> opt({{"p", &p}});
    for (int i = 0; i < 25; ++i) opt.step(1e-3);
    REQUIRE(p.value == before);
}

TEST_CASE("adam first step with unit gradient moves by -lr") {
    TensorData<double> p({1}, true);
    p.value = {0.5};
    p.ensure_grad();
    p.grad = {1.0};
    Adam<double> opt({{"p", &p}});
    opt.step(0.01);
    REQUIRE(p.value[0] == Catch::Approx(0.5 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam trajectory matches an independent transcription on a quadratic") {
    // loss = 0.5 * sum(w * x^2) with constant per-coordinate curvature
    const std::vector<double> curvature = {1.0, 0.3, 2.5};
    TensorData<double> x({3}, true);
    x.value = {1.0, -2.0, 0.7};
    x.ensure_grad();
    Adam<double> opt({{"x", &x}});

    // reference transcription, kept deliberately separate
    std::vector<double> rx = x.value, rm(3, 0.0), rv(3, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;

    for (int step = 1; step <= 100; ++step) {
        for (int i = 0; i < 3; ++i) x.grad[static_cast<size_t>(i)] =
            curvature[static_cast<size_t>(i)] * x.value[static_cast<size_t>(i)];
        opt.step(lr);

        for (int i = 0; i < 3; ++i) {
            const double g = curvature[static_cast<size_t>(i)] * rx[static_cast<size_t>(i)];
            rm[static_cast<size_t>(i)] = b1 * rm[static_cast<size_t>(i)] + (1 - b1) * g;
            rv[static_cast<size_t>(i)] = b2 * rv[static_cast<size_t>(i)] + (1 - b2) * g * g;
            const double mhat = rm[static_cast<size_t>(i)] / (1 - std::pow(b1, step));
            const double vhat = rv[static_cast<size_t>(i)] / (1 - std::pow(b2, step));
            rx[static_cast<size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        for (int i = 0; i < 3; ++i) {
            REQUIRE(std::abs(x.value[static_cast<size_t>(i)] - rx[static_cast<size_t>(i)]) < 1e-10);
        }
        std::fill(x.grad.begin(), x.grad.end(), 0.0);
    }
}

TEST_CASE("adam rejects NaN gradients naming the parameter") {
    TensorData<double> p({2}, true);
    p.value = {1.0, 2.0};
    p.ensure_grad();
    p.grad = {0.0, std::nan("")};
    Adam<double> opt({{"weights.w", &p}});
    REQUIRE_THROWS_WITH(opt.step(0.01), Catch::Matchers::ContainsSubstring("weights.w"));
}
