#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "spot/gradcheck.hpp"
#include "spot/rng.hpp"
#include "spot/tensor.hpp"

using namespace spot;

namespace {

// Brute-force triple-loop product, the reference for matmul.
std::vector<double> matmul_reference(const std::vector<double>& a, const std::vector<double>& b,
                                     int m, int p, int q) {
    std::vector<double> c(static_cast<size_t>(m) * q, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < q; ++j)
            for (int k = 0; k < p; ++k) c[i * q + j] += a[i * p + k] * b[k * q + j];
    return c;
}

std::vector<double> random_vec(Rng& rng, size_t n, double s = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = s * rng.next_normal();
    return v;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
    Tape<double> t;
    auto eye = t.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto a = t.constant({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto c = matmul(eye, a);
    for (int i = 0; i < 9; ++i) REQUIRE(c.data()[i] == a.data()[i]);

    auto x = t.constant({1, 1}, {2.0});
    auto y = t.constant({1, 1}, {3.0});
    REQUIRE(matmul(x, y).item() == 6.0);
}

TEST_CASE("matmul matches triple-loop reference") {
    Rng rng(42);
    Tape<double> t;
    auto av = random_vec(rng, 12);
    auto bv = random_vec(rng, 8);
    auto a = t.constant({3, 4}, av);
    auto b = t.constant({4, 2}, bv);
    auto c = matmul(a, b);
    auto ref = matmul_reference(av, bv, 3, 4, 2);
    for (int i = 0; i < 6; ++i) REQUIRE(std::abs(c.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape<double> t;
    auto a = t.constant({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = t.constant({2, 2}, {1, 2, 3, 4});
    REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                          Catch::Matchers::ContainsSubstring("[2,2]"));
}

TEST_CASE("softmax basics") {
    Tape<double> t;
    auto z = t.constant({1, 3}, {0, 0, 0});
    auto s = softmax(z, 1);
    for (int i = 0; i < 3; ++i) REQUIRE(s.data()[i] == Catch::Approx(1.0 / 3));

    // shift invariance
    auto x = t.constant({1, 3}, {0.3, -1.2, 2.0});
    auto xc = t.constant({1, 3}, {0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5});
    auto sx = softmax(x, 1);
    auto sxc = softmax(xc, 1);
    for (int i = 0; i < 3; ++i) REQUIRE(sx.data()[i] == Catch::Approx(sxc.data()[i]).margin(1e-14));

    // direct evaluation oracle
    auto v = t.constant({1, 3}, {1, 2, 3});
    auto sv = softmax(v, 1);
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double z3 = e1 + e2 + e3;
    REQUIRE(std::abs(sv.data()[0] - e1 / z3) < 1e-12);
    REQUIRE(std::abs(sv.data()[1] - e2 / z3) < 1e-12);
    REQUIRE(std::abs(sv.data()[2] - e3 / z3) < 1e-12);
}

TEST_CASE("softmax along axis 0 normalizes columns") {
    Rng rng(7);
    Tape<double> t;
    auto a = t.constant({4, 3}, random_vec(rng, 12));
    auto s = softmax(a, 0);
    for (int j = 0; j < 3; ++j) {
        double col = 0;
        for (int i = 0; i < 4; ++i) col += s.data()[i * 3 + j];
        REQUIRE(col == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("layer_norm constant row and zero-mean output") {
    Tape<double> t;
    auto x = t.constant({1, 4}, {5, 5, 5, 5});
    auto g = t.constant({4}, {1, 1, 1, 1});
    auto b = t.constant({4}, {0, 0, 0, 0});
    auto y = layer_norm(x, g, b);
    for (int i = 0; i < 4; ++i) REQUIRE(std::abs(y.data()[i]) < 1e-10);

    Rng rng(3);
    auto x2 = t.constant({4, 8}, random_vec(rng, 32));
    auto g8 = t.constant({8}, std::vector<double>(8, 1.0));
    auto b8 = t.constant({8}, std::vector<double>(8, 0.0));
    auto y2 = layer_norm(x2, g8, b8);
    for (int r = 0; r < 4; ++r) {
        double m = 0;
        for (int j = 0; j < 8; ++j) m += y2.data()[r * 8 + j];
        REQUIRE(std::abs(m / 8) < 1e-10);
    }
}

TEST_CASE("layer_norm matches direct formula") {
    Rng rng(11);
    Tape<double> t;
    auto xv = random_vec(rng, 32);
    auto gv = random_vec(rng, 8);
    auto bv = random_vec(rng, 8);
    auto y = layer_norm(t.constant({4, 8}, xv), t.constant({8}, gv), t.constant({8}, bv));
    for (int r = 0; r < 4; ++r) {
        double mean = 0;
        for (int j = 0; j < 8; ++j) mean += xv[r * 8 + j];
        mean /= 8;
        double var = 0;
        for (int j = 0; j < 8; ++j) var += (xv[r * 8 + j] - mean) * (xv[r * 8 + j] - mean);
        var /= 8;
        for (int j = 0; j < 8; ++j) {
            const double ref = gv[j] * (xv[r * 8 + j] - mean) / std::sqrt(var + 1e-5) + bv[j];
            REQUIRE(std::abs(y.data()[r * 8 + j] - ref) < 1e-10);
        }
    }
}

TEST_CASE("backward computes 2x for sum of squares") {
    Tape<double> t;
    TensorData<double> x({4}, true);
    x.value = {1.0, -2.0, 0.5, 3.0};
    auto xv = t.watch(x);
    auto loss = sum(mul(xv, xv));
    t.backward(loss);
    for (int i = 0; i < 4; ++i) REQUIRE(x.grad[i] == Catch::Approx(2.0 * x.value[i]));
}

TEST_CASE("softmax + cross-entropy against one-hot gives p - y gradient") {
    Tape<double> t;
    TensorData<double> logits({1, 3}, true);
    logits.value = {0.2, -0.4, 1.3};
    auto lv = t.watch(logits);
    auto p = softmax(lv, 1);
    auto y = t.constant({1, 3}, {0, 1, 0});
    auto loss = cross_entropy_rows(y, p);
    t.backward(loss);
    // for one row, dL/dlogit = p - y
    for (int i = 0; i < 3; ++i)
        REQUIRE(logits.grad[i] == Catch::Approx(p.data()[i] - y.data()[i]).margin(1e-10));
}

TEST_CASE("backward on non-scalar loss is a contract error") {
    Tape<double> t;
    TensorData<double> x({2}, true);
    auto v = t.watch(x);
    auto y = mul(v, v);
    REQUIRE_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("gradient accumulation across fan-out is exact") {
    Tape<double> t;
    TensorData<double> x({3}, true);
    x.value = {1.0, 2.0, 3.0};
    auto xv = t.watch(x);
    // y = f(x) + g(x) with f = sum(2x), g = sum(x*x)
    auto loss = add(sum(scale(xv, 2.0)), sum(mul(xv, xv)));
    t.backward(loss);
    for (int i = 0; i < 3; ++i) REQUIRE(x.grad[i] == 2.0 + 2.0 * x.value[i]);
}

TEST_CASE("backward replay is deterministic") {
    Rng rng(5);
    Tape<double> t;
    TensorData<double> x({2, 3}, true);
    x.value = random_vec(rng, 6);
    auto xv = t.watch(x);
    auto w = t.constant({3, 2}, random_vec(rng, 6));
    auto loss = sum(gelu(matmul(xv, w)));
    t.backward(loss);
    auto first = x.grad;
    t.zero_grads();
    t.backward(loss);  // replay after zeroing: grads must be bitwise identical
    for (size_t i = 0; i < first.size(); ++i) REQUIRE(x.grad[i] == first[i]);
}

TEST_CASE("every primitive passes finite-difference checks on random shapes") {
    Rng rng(2024);
    auto rand_shape = [&](int lo = 1, int hi = 5) {
        return Shape{rng.next_int(lo, hi), rng.next_int(lo, hi)};
    };

    for (int trial = 0; trial < 10; ++trial) {
        const Shape sh = rand_shape(2, 5);
        const int m = sh[0], n = sh[1];
        TensorData<double> a(sh, true), b(sh, true);
        a.value = random_vec(rng, static_cast<size_t>(m) * n);
        b.value = random_vec(rng, static_cast<size_t>(m) * n);
        // keep b away from 0 so div stays well conditioned
        for (auto& x : b.value) x = (x >= 0 ? 1.0 : -1.0) * (0.5 + std::abs(x));
        TensorData<double> vlast({n}, true);
        vlast.value = random_vec(rng, static_cast<size_t>(n));
        for (auto& x : vlast.value) x = (x >= 0 ? 1.0 : -1.0) * (0.5 + std::abs(x));
        TensorData<double> vrows({m}, true);
        vrows.value = random_vec(rng, static_cast<size_t>(m));

        const int q = rng.next_int(2, 5);
        TensorData<double> c({n, q}, true);
        c.value = random_vec(rng, static_cast<size_t>(n) * q);

        struct Case {
            const char* name;
            std::function<Var<double>(Tape<double>&)> f;
            std::vector<GradCheckParam> params;
        };
        std::vector<Case> cases;
        auto wa = [&](Tape<double>& t) { return t.watch(a); };
        cases.push_back({"add", [&](Tape<double>& t) { return sum(add(wa(t), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"add_vec",
                         [&](Tape<double>& t) { return sum(add(wa(t), t.watch(vlast))); },
                         {{"a", &a}, {"v", &vlast}}});
        cases.push_back({"sub", [&](Tape<double>& t) { return sum(sub(wa(t), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"mul", [&](Tape<double>& t) { return sum(mul(wa(t), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"mul_vec",
                         [&](Tape<double>& t) { return sum(mul(wa(t), t.watch(vlast))); },
                         {{"a", &a}, {"v", &vlast}}});
        cases.push_back({"div", [&](Tape<double>& t) { return sum(div(wa(t), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"div_vec",
                         [&](Tape<double>& t) { return sum(div(wa(t), t.watch(vlast))); },
                         {{"a", &a}, {"v", &vlast}}});
        cases.push_back({"scale", [&](Tape<double>& t) { return sum(scale(wa(t), -1.7)); },
                         {{"a", &a}}});
        cases.push_back({"matmul",
                         [&](Tape<double>& t) { return sum(matmul(wa(t), t.watch(c))); },
                         {{"a", &a}, {"c", &c}}});
        cases.push_back({"transpose",
                         [&](Tape<double>& t) { return sum(mul(transpose(wa(t)), transpose(t.watch(b)))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"row_scale",
                         [&](Tape<double>& t) { return sum(row_scale(wa(t), t.watch(vrows))); },
                         {{"a", &a}, {"v", &vrows}}});
        cases.push_back({"softmax_rows",
                         [&](Tape<double>& t) { return sum(mul(softmax(wa(t), 1), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"softmax_cols",
                         [&](Tape<double>& t) { return sum(mul(softmax(wa(t), 0), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        TensorData<double> gain({n}, true), bias({n}, true);
        gain.value = random_vec(rng, static_cast<size_t>(n));
        bias.value = random_vec(rng, static_cast<size_t>(n));
        cases.push_back({"layer_norm",
                         [&](Tape<double>& t) {
                             return sum(mul(layer_norm(wa(t), t.watch(gain), t.watch(bias)),
                                            t.watch(b)));
                         },
                         {{"x", &a}, {"gain", &gain}, {"bias", &bias}}});
        cases.push_back({"relu", [&](Tape<double>& t) { return sum(relu(wa(t))); }, {{"a", &a}}});
        cases.push_back({"gelu", [&](Tape<double>& t) { return sum(gelu(wa(t))); }, {{"a", &a}}});
        cases.push_back({"sigmoid",
                         [&](Tape<double>& t) { return sum(mul(sigmoid(wa(t)), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"tanh",
                         [&](Tape<double>& t) { return sum(mul(tanh_op(wa(t)), t.watch(b))); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"exp", [&](Tape<double>& t) { return sum(exp_op(wa(t))); }, {{"a", &a}}});
        cases.push_back({"log",
                         [&](Tape<double>& t) {
                             return sum(log_op(add_scalar(mul(wa(t), wa(t)), 0.7)));
                         },
                         {{"a", &a}}});
        cases.push_back({"reshape",
                         [&](Tape<double>& t) { return sum(mul(reshape(wa(t), {n, m}), t.constant({n, m}, b.value))); },
                         {{"a", &a}}});
        cases.push_back({"slice_rows",
                         [&](Tape<double>& t) { return sum(slice_rows(wa(t), 0, std::max(1, m - 1))); },
                         {{"a", &a}}});
        cases.push_back({"slice_cols",
                         [&](Tape<double>& t) { return sum(slice_cols(wa(t), 1, n - 1)); },
                         {{"a", &a}}});
        cases.push_back({"concat0",
                         [&](Tape<double>& t) {
                             std::vector<Var<double>> ps{wa(t), t.watch(b)};
                             std::vector<Var<double>> qs{t.watch(b), wa(t)};
                             return sum(mul(concat(ps, 0), concat(qs, 0)));
                         },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"concat1",
                         [&](Tape<double>& t) {
                             std::vector<Var<double>> ps{wa(t), t.watch(b)};
                             return sum(concat(ps, 1));
                         },
                         {{"a", &a}, {"b", &b}}});
        std::vector<int> idx;
        for (int i = 0; i < m + 2; ++i) idx.push_back(static_cast<int>(rng.next_below(m)));
        cases.push_back({"gather_rows",
                         [&, idx](Tape<double>& t) { return sum(gather_rows(wa(t), idx)); },
                         {{"a", &a}}});
        cases.push_back({"mean", [&](Tape<double>& t) { return mean(wa(t)); }, {{"a", &a}}});
        cases.push_back({"sum_axis0",
                         [&](Tape<double>& t) { return sum(mul(sum_axis(wa(t), 0), t.watch(vlast))); },
                         {{"a", &a}, {"v", &vlast}}});
        cases.push_back({"sum_axis1",
                         [&](Tape<double>& t) { return sum(mul(sum_axis(wa(t), 1), t.watch(vrows))); },
                         {{"a", &a}, {"v", &vrows}}});
        cases.push_back({"mse", [&](Tape<double>& t) { return mse(wa(t), t.watch(b)); },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"cross_entropy_rows",
                         [&](Tape<double>& t) {
                             auto p = softmax(wa(t), 1);
                             auto tgt = softmax(t.watch(b), 1);
                             return cross_entropy_rows(tgt, p);
                         },
                         {{"a", &a}, {"b", &b}}});
        cases.push_back({"clamp_min",
                         [&](Tape<double>& t) { return sum(clamp_min(wa(t), 0.05)); },
                         {{"a", &a}}});

        for (auto& cse : cases) {
            INFO("primitive " << cse.name << " trial " << trial << " shape " << m << "x" << n);
            const double err = grad_check(cse.f, cse.params);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("grad_check is near-exact for a linear map") {
    Rng rng(77);
    TensorData<double> w({3, 3}, true);
    w.value = random_vec(rng, 9);
    TensorData<double> x({2, 3}, false);
    x.value = random_vec(rng, 6);
    const double err = grad_check(
        [&](Tape<double>& t) { return sum(matmul(t.constant({2, 3}, x.value), t.watch(w))); },
        {{"w", &w}});
    REQUIRE(err < 1e-9);
}

TEST_CASE("grad_check on a two-layer GELU MLP") {
    Rng rng(78);
    TensorData<double> w1({4, 6}, true), b1({6}, true), w2({6, 2}, true), b2({2}, true);
    w1.value = random_vec(rng, 24, 0.6);
    b1.value = random_vec(rng, 6, 0.2);
    w2.value = random_vec(rng, 12, 0.6);
    b2.value = random_vec(rng, 2, 0.2);
    std::vector<double> xv = random_vec(rng, 12);
    const double err = grad_check(
        [&](Tape<double>& t) {
            auto x = t.constant({3, 4}, xv);
            auto h = gelu(add(matmul(x, t.watch(w1)), t.watch(b1)));
            auto y = add(matmul(h, t.watch(w2)), t.watch(b2));
            return mean(mul(y, y));
        },
        {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}});
    REQUIRE(err < 1e-4);
}

TEST_CASE("detach blocks gradient flow") {
    Tape<double> t;
    TensorData<double> x({2}, true);
    x.value = {1.5, -0.5};
    auto v = t.watch(x);
    auto loss = sum(mul(detach(v), v));
    t.backward(loss);
    // only the live branch contributes: d/dx (c * x) = c = detached value
    REQUIRE(x.grad[0] == Catch::Approx(1.5));
    REQUIRE(x.grad[1] == Catch::Approx(-0.5));
}

TEST_CASE("no-grad tape records nothing") {
    Tape<double> t(false);
    TensorData<double> x({2, 2}, true);
    x.value = {1, 2, 3, 4};
    auto y = matmul(t.watch(x), t.watch(x));
    REQUIRE(t.num_ops() == 0);
    REQUIRE_FALSE(y.requires_grad());
}
