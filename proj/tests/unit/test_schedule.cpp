#include <cmath>

#include "doctest.h"
#include "xad/diffusion.hpp"
#include "xad/gradcheck.hpp"

using namespace xad;

TEST_CASE("linear schedule closed form") {
    auto s = make_linear_schedule(2, 0.1, 0.2);
    CHECK(s.alpha_bar[0] == doctest::Approx(0.9));
    CHECK(s.alpha_bar[1] == doctest::Approx(0.72));  // 0.9 * 0.8
}

TEST_CASE("constant schedule gives geometric alpha_bar") {
    double b = 0.05;
    auto s = make_linear_schedule(7, b, b);
    for (int t = 0; t < 7; ++t)
        CHECK(s.alpha_bar[static_cast<size_t>(t)] == doctest::Approx(std::pow(1.0 - b, t + 1)));
}

TEST_CASE("alpha_bar is strictly decreasing") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    for (int t = 1; t < 100; ++t)
        CHECK(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]);
    CHECK(s.alpha_bar[0] == doctest::Approx(s.alpha[0]));
}

TEST_CASE("schedule bounds are validated") {
    CHECK_THROWS(make_linear_schedule(1, 0.1, 0.2));
    CHECK_THROWS(make_linear_schedule(10, 0.0, 0.2));
    CHECK_THROWS(make_linear_schedule(10, 0.3, 0.2));
    CHECK_THROWS(make_linear_schedule(10, 0.2, 1.0));
}

TEST_CASE("q_sample endpoints") {
    auto s = make_linear_schedule(10, 1e-3, 0.1);
    Rng rng(3);
    Tensor z0 = rng.normal_tensor<float>({1, 4, 2, 2});
    Tensor zero(z0.shape);

    Tensor zt = q_sample(z0, 4, zero, s);
    float a = static_cast<float>(s.sqrt_alpha_bar(4));
    for (int64_t i = 0; i < z0.numel(); ++i) CHECK(zt[i] == doctest::Approx(a * z0[i]));

    Tensor eps = rng.normal_tensor<float>({1, 4, 2, 2});
    Tensor zt2 = q_sample(zero, 4, eps, s);
    float b = static_cast<float>(s.sqrt_one_minus_alpha_bar(4));
    for (int64_t i = 0; i < z0.numel(); ++i) CHECK(zt2[i] == doctest::Approx(b * eps[i]));

    CHECK_THROWS(q_sample(z0, 10, eps, s));
    CHECK_THROWS(q_sample(z0, -1, eps, s));
}

TEST_CASE("q_sample marginal variance matches the closed form (Monte-Carlo)") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    int t = 60;
    const int draws = 10000;
    Rng rng(1234);
    Tensor z0({4});
    double mean = 0, m2 = 0;
    int64_t n = 0;
    for (int d = 0; d < draws; ++d) {
        Tensor eps = rng.normal_tensor<float>({4});
        Tensor zt = q_sample(z0, t, eps, s);
        for (int64_t i = 0; i < zt.numel(); ++i) {
            ++n;
            double delta = zt[i] - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (zt[i] - mean);
        }
    }
    double var = m2 / static_cast<double>(n - 1);
    double want = 1.0 - s.alpha_bar[static_cast<size_t>(t)];
    // standard error of the sample variance of a normal: var * sqrt(2/(n-1))
    double se = want * std::sqrt(2.0 / static_cast<double>(n - 1));
    CHECK(std::fabs(var - want) < 3.0 * se);
}

TEST_CASE("epsilon_loss values") {
    Tensor a({4}, {1, 1, 1, 1});
    Tensor z({4});
    CHECK(epsilon_loss(a, a) == 0.0);
    CHECK(epsilon_loss(z, a) == doctest::Approx(1.0));
    CHECK_THROWS(epsilon_loss(a, Tensor({3})));
}

TEST_CASE("epsilon_loss gradient is 2(pred-target)/numel") {
    Rng rng(7);
    TensorD target = rng.normal_tensor<double>({6});
    ScalarFn fn = [&](TapeD& t, const std::vector<int>& in) {
        return t.mse(in[0], t.constant(target));
    };
    TensorD pred = rng.normal_tensor<double>({6});
    CHECK(grad_check(fn, {pred}, 1e-6) < 1e-6);

    TapeD tape;
    int p = tape.leaf(pred, true);
    int loss = tape.mse(p, tape.constant(target));
    tape.backward(loss);
    for (int64_t i = 0; i < pred.numel(); ++i)
        CHECK(tape.grad(p)[i] == doctest::Approx(2.0 * (pred[i] - target[i]) / 6.0));
}

TEST_CASE("ddim single step on a 2-step schedule recovers z0 at t=0") {
    auto s = make_linear_schedule(2, 0.1, 0.2);
    Rng rng(11);
    Tensor z0 = rng.normal_tensor<float>({4});
    Tensor eps = rng.normal_tensor<float>({4});
    Tensor zt = q_sample(z0, 0, eps, s);
    Tensor rec = reverse_step(eps, zt, 0, s, SamplerKind::kDdimDeterministic);
    for (int64_t i = 0; i < z0.numel(); ++i) CHECK(rec[i] == doctest::Approx(z0[i]).epsilon(1e-5));
}

TEST_CASE("q_sample then oracle ddim step inverts exactly per step") {
    auto s = make_linear_schedule(50, 1e-4, 0.02);
    Rng rng(13);
    Tensor z0 = rng.normal_tensor<float>({2, 4, 2, 2});
    for (int t : {1, 10, 30, 49}) {
        Tensor eps = rng.normal_tensor<float>({2, 4, 2, 2});
        Tensor zt = q_sample(z0, t, eps, s);
        Tensor prev = reverse_step(eps, zt, t, s, SamplerKind::kDdimDeterministic);
        Tensor want = q_sample(z0, t - 1, eps, s);
        for (int64_t i = 0; i < z0.numel(); ++i)
            CHECK(std::fabs(prev[i] - want[i]) < 1e-5);
    }
}

TEST_CASE("ddim full chain with a delta-dataset oracle reconstructs the point") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(17);
    Tensor target = rng.normal_tensor<float>({1, 4, 2, 2});
    // oracle: the exact eps that would have produced z_t from the target
    auto oracle = [&](const Tensor& zt, int t) {
        double sa = s.sqrt_alpha_bar(t), sb = s.sqrt_one_minus_alpha_bar(t);
        Tensor eps(zt.shape);
        for (int64_t i = 0; i < zt.numel(); ++i)
            eps[i] = static_cast<float>((zt[i] - sa * target[i]) / sb);
        return eps;
    };
    Tensor z = rng.normal_tensor<float>({1, 4, 2, 2});
    for (int t = 99; t >= 0; --t) z = reverse_step(oracle(z, t), z, t, s, SamplerKind::kDdimDeterministic);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(std::fabs(z[i] - target[i]) < 1e-3);
}

TEST_CASE("ddpm step with zero noise is the posterior mean") {
    auto s = make_linear_schedule(20, 1e-3, 0.05);
    Rng rng(19);
    Tensor zt = rng.normal_tensor<float>({4});
    Tensor eps = rng.normal_tensor<float>({4});
    int t = 7;
    Tensor got = reverse_step(eps, zt, t, s, SamplerKind::kDdpmStochastic, Tensor({4}));
    double beta = s.beta[static_cast<size_t>(t)];
    double mean_c = 1.0 / std::sqrt(s.alpha[static_cast<size_t>(t)]);
    double coef = beta / std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(t)]);
    for (int64_t i = 0; i < zt.numel(); ++i)
        CHECK(got[i] == doctest::Approx(mean_c * (zt[i] - coef * eps[i])).epsilon(1e-5));
}

TEST_CASE("sampler preconditions") {
    auto s = make_linear_schedule(10, 1e-3, 0.05);
    Tensor z({4});
    Tensor eps({4});
    CHECK_THROWS_WITH_AS(reverse_step(eps, z, 3, s, SamplerKind::kDdpmStochastic),
                         doctest::Contains("requires noise"), std::runtime_error);
    CHECK_THROWS_WITH_AS(reverse_step(eps, z, 3, s, SamplerKind::kDdimDeterministic, Tensor({4})),
                         doctest::Contains("no noise"), std::runtime_error);
}
