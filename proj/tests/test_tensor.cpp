#include <cmath>
#include <vector>

#include "doctest.h"
#include "emma/gradcheck.hpp"
#include "emma/optim.hpp"
#include "emma/rng.hpp"
#include "emma/tensor.hpp"

using namespace emma;

namespace {

TensorD randn_d(int r, int c, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return TensorD::randn(r, c, rng);
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("tensor construction rejects non-positive extents") {
    CHECK_THROWS_AS(TensorF({0, 3}), DimensionError);
    CHECK_THROWS_AS(TensorF({4, -1}), DimensionError);
    CHECK_NOTHROW(TensorF({1, 1}));
}

TEST_CASE("matmul forward matches hand-computed values") {
    auto a = TensorF::from_rows({{1, 2}, {3, 4}});
    auto b = TensorF::from_rows({{5, 6}, {7, 8}});
    auto c = matmul<float>(nullptr, a, b);
    CHECK(c.at(0, 0) == doctest::Approx(19));
    CHECK(c.at(0, 1) == doctest::Approx(22));
    CHECK(c.at(1, 0) == doctest::Approx(43));
    CHECK(c.at(1, 1) == doctest::Approx(50));
}

TEST_CASE("matmul shape mismatch names both operand shapes") {
    auto a = TensorF::zeros(2, 3);
    auto b = TensorF::zeros(4, 5);
    try {
        matmul<float>(nullptr, a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("softmax is stable under large shifts and sums to one") {
    auto x = TensorF::from_rows({{1000.0f, 1000.0f + std::log(2.0f)}});
    auto y = softmax_rows<float>(nullptr, x);
    CHECK(y.at(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(y.at(0, 1) == doctest::Approx(2.0 / 3.0));

    auto big = TensorF::from_rows({{-1e9f, 0.0f, -1e9f}});
    auto yb = softmax_rows<float>(nullptr, big);
    CHECK(yb.at(0, 1) == doctest::Approx(1.0));
    CHECK(yb.at(0, 0) == 0.0f);  // exp(-1e9) underflows to exactly zero
}

TEST_CASE("layer_norm output has zero mean and unit variance before affine") {
    auto x = TensorD::from_rows({{1, 2, 3, 4}, {-5, 0, 5, 10}});
    auto gain = TensorD::ones(1, 4);
    auto bias = TensorD::zeros(1, 4);
    auto y = layer_norm<double>(nullptr, x, gain, bias);
    for (int i = 0; i < 2; ++i) {
        double mean = 0, var = 0;
        for (int j = 0; j < 4; ++j) mean += y.at(i, j);
        mean /= 4;
        for (int j = 0; j < 4; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 4;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK_THROWS_AS(layer_norm<double>(nullptr, TensorD::zeros(2, 1), TensorD::ones(1, 1),
                                       TensorD::zeros(1, 1)),
                    DimensionError);
}

TEST_CASE("cross_entropy on uniform logits equals log(num_classes)") {
    auto logits = TensorF::zeros(3, 4);
    auto loss = cross_entropy<float>(nullptr, logits, {0, 1, 3});
    CHECK(loss.data()[0] == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(cross_entropy<float>(nullptr, logits, {0, 1, 4}), IndexError);
    CHECK_THROWS_AS(cross_entropy<float>(nullptr, logits, {0, 1}), DimensionError);
}

TEST_CASE("l2_normalize_rows produces unit rows") {
    auto x = TensorF::from_rows({{3, 4}, {0.1f, 0}});
    auto y = l2_normalize_rows<float>(nullptr, x);
    CHECK(y.at(0, 0) == doctest::Approx(0.6));
    CHECK(y.at(0, 1) == doctest::Approx(0.8));
    CHECK(y.at(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("concat and gather forward semantics") {
    auto a = TensorF::from_rows({{1, 2}});
    auto b = TensorF::from_rows({{3, 4}, {5, 6}});
    auto y = concat_tokens<float>(nullptr, a, b);
    CHECK(y.rows() == 3);
    CHECK(y.at(2, 1) == 6);
    CHECK_THROWS_AS(concat_tokens<float>(nullptr, a, TensorF::zeros(1, 3)), DimensionError);

    auto table = TensorF::from_rows({{0, 0}, {1, 1}, {2, 2}});
    auto g = gather_rows<float>(nullptr, table, {2, 2, 0});
    CHECK(g.at(0, 0) == 2);
    CHECK(g.at(1, 0) == 2);
    CHECK(g.at(2, 0) == 0);
    CHECK_THROWS_AS(gather_rows<float>(nullptr, table, {3}), IndexError);
    CHECK_THROWS_AS(gather_rows<float>(nullptr, table, {-1}), IndexError);
}

TEST_CASE("every op passes central-difference gradient checks") {
    std::vector<GradCheckReport> reports;

    {
        TensorD a = randn_d(3, 4, 11), b = randn_d(4, 5, 12);
        reports.push_back(check_gradients("matmul", {&a, &b}, [&](TapeD* t) {
            return matmul(t, a, b);
        }));
    }
    {
        TensorD x = randn_d(3, 5, 13);
        reports.push_back(check_gradients("transpose", {&x}, [&](TapeD* t) {
            return transpose(t, x);
        }));
    }
    {
        TensorD a = randn_d(4, 4, 14), b = randn_d(4, 4, 15);
        reports.push_back(check_gradients("add", {&a, &b}, [&](TapeD* t) { return add(t, a, b); }));
        reports.push_back(check_gradients("mul", {&a, &b}, [&](TapeD* t) { return mul(t, a, b); }));
    }
    {
        TensorD x = randn_d(5, 3, 16), bias = randn_d(1, 3, 17);
        reports.push_back(check_gradients("add_row_bias", {&x, &bias}, [&](TapeD* t) {
            return add_row_bias(t, x, bias);
        }));
    }
    {
        TensorD a = randn_d(2, 3, 18), b = randn_d(4, 3, 19), c = randn_d(1, 3, 20);
        reports.push_back(check_gradients("concat_rows", {&a, &b, &c}, [&](TapeD* t) {
            return concat_rows(t, std::vector<TensorD>{a, b, c});
        }));
    }
    {
        TensorD x = randn_d(4, 6, 21);
        reports.push_back(check_gradients("softmax_rows", {&x}, [&](TapeD* t) {
            return softmax_rows(t, x);
        }));
    }
    {
        TensorD x = randn_d(3, 8, 22), g = randn_d(1, 8, 23), b = randn_d(1, 8, 24);
        reports.push_back(check_gradients("layer_norm", {&x, &g, &b}, [&](TapeD* t) {
            return layer_norm(t, x, g, b);
        }));
    }
    {
        TensorD x = randn_d(5, 4, 25);
        reports.push_back(check_gradients("mean_pool_rows", {&x}, [&](TapeD* t) {
            return mean_pool_rows(t, x);
        }));
    }
    {
        TensorD x = randn_d(5, 4, 26), w = randn_d(5, 1, 27);
        reports.push_back(check_gradients("weighted_sum_rows", {&x, &w}, [&](TapeD* t) {
            return weighted_sum_rows(t, x, w);
        }));
    }
    {
        TensorD x = randn_d(4, 4, 28);
        // Shift away from the kink so finite differences stay clean.
        for (auto& v : x.data())
            if (std::abs(v) < 1e-3) v += 0.01;
        reports.push_back(check_gradients("relu", {&x}, [&](TapeD* t) { return relu(t, x); }));
    }
    {
        TensorD x = randn_d(3, 3, 29);
        reports.push_back(check_gradients("scale", {&x}, [&](TapeD* t) {
            return scale(t, x, 2.5);
        }));
        TensorD s = TensorD::scalar(1.7);
        reports.push_back(check_gradients("scale_by", {&x, &s}, [&](TapeD* t) {
            return scale_by(t, x, s);
        }));
    }
    {
        TensorD x = randn_d(3, 3, 30);
        reports.push_back(check_gradients("exp_elem", {&x}, [&](TapeD* t) {
            return exp_elem(t, x);
        }));
    }
    {
        TensorD table = randn_d(6, 3, 31);
        const std::vector<int> ids{1, 4, 1, 0};  // repeated id exercises scatter-add
        reports.push_back(check_gradients("gather_rows", {&table}, [&](TapeD* t) {
            return gather_rows(t, table, ids);
        }));
    }
    {
        TensorD logits = randn_d(4, 5, 32);
        const std::vector<int> labels{0, 3, 2, 4};
        reports.push_back(check_gradients("cross_entropy", {&logits}, [&](TapeD* t) {
            return cross_entropy(t, logits, labels);
        }));
    }
    {
        TensorD x = randn_d(3, 4, 33);
        reports.push_back(check_gradients("sum_all", {&x}, [&](TapeD* t) { return sum_all(t, x); }));
        reports.push_back(check_gradients("l2_normalize_rows", {&x}, [&](TapeD* t) {
            return l2_normalize_rows(t, x);
        }));
    }

    for (const auto& rep : reports) {
        INFO(rep.name << " max_rel_err=" << rep.max_rel_err << " over " << rep.checked << " slots");
        CHECK(rep.max_rel_err < kGradTol);
        CHECK(rep.checked > 0);
    }
}

TEST_CASE("composed expression passes gradient check") {
    TensorD x = randn_d(4, 6, 40);
    TensorD w1 = randn_d(6, 8, 41);
    TensorD b1 = randn_d(1, 8, 42);
    TensorD w2 = randn_d(8, 5, 43);
    TensorD g = TensorD::ones(1, 5);
    TensorD b = TensorD::zeros(1, 5);
    auto rep = check_gradients("mlp_block", {&x, &w1, &b1, &w2, &g, &b}, [&](TapeD* t) {
        auto h = relu(t, add_row_bias(t, matmul(t, x, w1), b1));
        auto o = layer_norm(t, matmul(t, h, w2), g, b);
        return softmax_rows(t, o);
    });
    INFO("max_rel_err=" << rep.max_rel_err);
    CHECK(rep.max_rel_err < kGradTol);
}

TEST_CASE("backward accumulates into leaves across calls") {
    TensorD x = TensorD::from_rows({{1, 2}});
    x.set_requires_grad(true);
    TapeD tape;
    auto y = sum_all(&tape, mul(&tape, x, x));
    tape.backward(y);
    const double gx0 = x.grad()[0];
    CHECK(gx0 == doctest::Approx(2.0));
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(2.0 * gx0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("constants never receive gradients") {
    TensorD x = TensorD::from_rows({{1, 2}});
    TensorD c = TensorD::from_rows({{3, 4}});
    x.set_requires_grad(true);
    TapeD tape;
    auto y = sum_all(&tape, mul(&tape, x, c));
    tape.backward(y);
    CHECK(x.has_grad());
    CHECK_FALSE(c.has_grad());
}

TEST_CASE("leaves unreachable from the loss keep absent gradients") {
    TensorD x = TensorD::from_rows({{1, 2}});
    TensorD z = TensorD::from_rows({{5, 6}});
    x.set_requires_grad(true);
    z.set_requires_grad(true);
    TapeD tape;
    auto used = sum_all(&tape, x);
    auto unused = sum_all(&tape, z);  // on tape, but not feeding the loss
    (void)unused;
    tape.backward(used);
    CHECK(x.has_grad());
    CHECK_FALSE(z.has_grad());
}

TEST_CASE("backward contract violations throw") {
    TensorD x = TensorD::from_rows({{1, 2}});
    x.set_requires_grad(true);
    TapeD tape;
    auto y = mul(&tape, x, x);  // not scalar
    CHECK_THROWS_AS(tape.backward(y), ContractError);

    TapeD other;
    auto z = sum_all(&other, x);
    CHECK_THROWS_AS(tape.backward(z), ContractError);

    TensorD plain = TensorD::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(plain), ContractError);
}

TEST_CASE("ops without a tape record nothing") {
    TensorD x = TensorD::from_rows({{1, 2}});
    x.set_requires_grad(true);
    TapeD tape;
    auto y = mul<double>(nullptr, x, x);
    (void)y;
    CHECK(tape.size() == 0);
}

TEST_CASE("sgd applies the exact update rule") {
    TensorF p = TensorF::from_rows({{1.0f, -2.0f}});
    OptimizerF opt(OptimKind::sgd, 0.1f, {p});
    p.grad_ref()[0] = 3.0f;
    p.grad_ref()[1] = -1.0f;
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(1.0 - 0.1 * 3.0));
    CHECK(p.data()[1] == doctest::Approx(-2.0 + 0.1 * 1.0));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam first step moves by almost exactly the learning rate") {
    TensorD p = TensorD::from_rows({{0.5, -0.5}});
    const double lr = 0.01;
    OptimizerD opt(OptimKind::adam, lr, {p});
    p.grad_ref()[0] = 1.0;
    p.grad_ref()[1] = -2.0;
    opt.step();
    const double d0 = 0.5 - p.data()[0];
    const double d1 = -0.5 - p.data()[1];
    CHECK(std::abs(d0 - lr) <= lr * 1e-7);   // moved down by ~lr
    CHECK(std::abs(d1 + lr) <= lr * 1e-7);   // moved up by ~lr
}

TEST_CASE("a present all-zero gradient leaves parameters unchanged") {
    TensorF p = TensorF::from_rows({{1.0f, 2.0f}});
    for (OptimKind kind : {OptimKind::sgd, OptimKind::adam}) {
        OptimizerF opt(kind, 0.1f, {p});
        (void)p.grad_ref();  // materialize zeros
        opt.step();
        CHECK(p.data()[0] == 1.0f);
        CHECK(p.data()[1] == 2.0f);
        p.clear_grad();
    }
}

TEST_CASE("optimizer step with absent gradient throws") {
    TensorF p = TensorF::from_rows({{1.0f}});
    OptimizerF opt(OptimKind::sgd, 0.1f, {p});
    CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("zero_grad empties gradient slots") {
    TensorF p = TensorF::from_rows({{1.0f}});
    OptimizerF opt(OptimKind::sgd, 0.1f, {p});
    p.grad_ref()[0] = 5.0f;
    opt.zero_grad();
    CHECK_FALSE(p.has_grad());
}

TEST_CASE("splitmix64 streams are deterministic and separable") {
    SplitMix64 a(42), b(42), c(43);
    for (int i = 0; i < 16; ++i) {
        const auto va = a.next_u64();
        CHECK(va == b.next_u64());
        CHECK(va != c.next_u64());
    }
    const auto d1 = SplitMix64::derive(42, 1);
    const auto d2 = SplitMix64::derive(42, 2);
    CHECK(d1 != d2);
    CHECK(SplitMix64::derive(42, 1) == d1);

    SplitMix64 u(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.next_double();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        const auto below = u.next_below(10);
        CHECK(below < 10);
    }
}
