#include <cmath>

#include "doctest.h"
#include "xad/gradcheck.hpp"
#include "xad/params.hpp"
#include "xad/tape.hpp"

using namespace xad;

TEST_CASE("backward of x squared") {
    TapeD tape;
    int x = tape.leaf(TensorD({1}, {3.0}), true);
    int y = tape.mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss") {
    TapeD tape;
    int x = tape.leaf(TensorD({2}, {1.0, 2.0}), true);
    int y = tape.add(x, x);
    CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("must be scalar"), std::runtime_error);
}

TEST_CASE("tape refuses a second backward") {
    TapeD tape;
    int x = tape.leaf(TensorD({1}, {2.0}), true);
    int y = tape.mul(x, x);
    tape.backward(y);
    CHECK_THROWS(tape.backward(y));
}

TEST_CASE("frozen parameter absent from gradient map") {
    ParamStore store;
    Rng rng(3);
    store.add("w.a", rng.normal_tensor<float>({2, 2}), true);
    store.add("w.frozen", rng.normal_tensor<float>({2, 2}), false);
    ModelRun run(store);
    int a = run.p("w.a");
    int f = run.p("w.frozen");
    int loss = run.tape.mse(run.tape.matmul(a, f), run.c(Tensor({2, 2}, {1, 0, 0, 1})));
    run.tape.backward(loss);
    auto grads = run.grads();
    CHECK(grads.count("w.a") == 1);
    CHECK(grads.count("w.frozen") == 0);
}

TEST_CASE("grad_check: linear map is exact") {
    ScalarFn fn = [](TapeD& t, const std::vector<int>& in) {
        int w = t.constant(TensorD({3}, {2.0, -1.0, 0.5}));
        return t.mse(t.mul(in[0], w), t.constant(TensorD({3})));
    };
    Rng rng(11);
    // mse of a linear map is quadratic; central differences are exact
    double err = grad_check(fn, {rng.normal_tensor<double>({3})}, 1e-4);
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check: constant function reports ~0") {
    ScalarFn fn = [](TapeD& t, const std::vector<int>&) {
        return t.constant(TensorD({1}, {42.0}));
    };
    double err = grad_check(fn, {TensorD({2}, {1.0, 2.0})}, 1e-4);
    CHECK(err < 1e-8);
}

TEST_CASE("mse(Ax, b) gradient matches finite differences") {
    Rng rng(19);
    TensorD a = rng.normal_tensor<double>({3, 3});
    TensorD b = rng.normal_tensor<double>({3, 2});
    ScalarFn fn = [&](TapeD& t, const std::vector<int>& in) {
        return t.mse(t.matmul(t.constant(a), in[0]), t.constant(b));
    };
    double err = grad_check(fn, {rng.normal_tensor<double>({3, 2})}, 1e-4);
    CHECK(err < 1e-3);
}

TEST_CASE("grad_check: composed conv -> groupnorm -> silu -> mse") {
    Rng rng(29);
    TensorD target = rng.normal_tensor<double>({1, 4, 4, 4});
    ScalarFn fn = [&](TapeD& t, const std::vector<int>& in) {
        int h = t.conv2d(in[0], in[1], in[2], 1);
        h = t.group_norm(h, 2);
        h = t.silu(h);
        return t.mse(h, t.constant(target));
    };
    std::vector<TensorD> point = {rng.normal_tensor<double>({1, 3, 4, 4}),
                                  rng.normal_tensor<double>({4, 3, 3, 3}),
                                  rng.normal_tensor<double>({4})};
    CHECK(grad_check(fn, point, 1e-5) < 1e-4);
}

TEST_CASE("per-op gradient spot checks") {
    Rng rng(31);
    auto check_op = [&](const char* name, const ScalarFn& fn, std::vector<TensorD> point) {
        double err = grad_check(fn, point, 1e-5);
        INFO(name);
        CHECK(err < 1e-4);
    };

    check_op("add+sub+mul+scalar_mul",
             [](TapeD& t, const std::vector<int>& in) {
                 int y = t.add(in[0], in[1]);
                 y = t.mul(y, t.sub(in[0], in[1]));
                 y = t.scalar_mul(y, 0.7);
                 return t.mse(y, t.constant(TensorD({5})));
             },
             {rng.normal_tensor<double>({5}), rng.normal_tensor<double>({5})});

    check_op("matmul",
             [](TapeD& t, const std::vector<int>& in) {
                 return t.mse(t.matmul(in[0], in[1]), t.constant(TensorD({2, 4})));
             },
             {rng.normal_tensor<double>({2, 3}), rng.normal_tensor<double>({3, 4})});

    check_op("concat+reshape",
             [](TapeD& t, const std::vector<int>& in) {
                 int y = t.concat(in[0], in[1], 1);
                 y = t.reshape(y, {1, 12});
                 return t.mse(y, t.constant(TensorD({1, 12})));
             },
             {rng.normal_tensor<double>({1, 2, 2, 2}), rng.normal_tensor<double>({1, 1, 2, 2})});

    check_op("upsample+avgpool",
             [](TapeD& t, const std::vector<int>& in) {
                 int y = t.upsample2x(in[0]);
                 y = t.avgpool2x(t.avgpool2x(y));
                 return t.mse(y, t.constant(TensorD({1, 2, 2, 2})));
             },
             {rng.normal_tensor<double>({1, 2, 4, 4})});

    check_op("tanh",
             [](TapeD& t, const std::vector<int>& in) {
                 return t.mse(t.tanh_act(in[0]), t.constant(TensorD({6})));
             },
             {rng.normal_tensor<double>({6})});

    check_op("embedding",
             [](TapeD& t, const std::vector<int>& in) {
                 int e = t.embedding(in[0], {1, 0, 1});
                 return t.mse(e, t.constant(TensorD({3, 2})));
             },
             {rng.normal_tensor<double>({3, 2})});

    check_op("add_channel_bias",
             [](TapeD& t, const std::vector<int>& in) {
                 return t.mse(t.add_channel_bias(in[0], in[1]), t.constant(TensorD({2, 3, 2, 2})));
             },
             {rng.normal_tensor<double>({2, 3, 2, 2}), rng.normal_tensor<double>({2, 3})});
}

TEST_CASE("gradient accumulates when a node is used twice") {
    TapeD tape;
    int x = tape.leaf(TensorD({1}, {2.0}), true);
    int y = tape.add(tape.mul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 5
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(5.0));
}

TEST_CASE("model run leafs a parameter once") {
    ParamStore store;
    Rng rng(37);
    store.add("w", rng.normal_tensor<float>({1}), true);
    ModelRun run(store);
    CHECK(run.p("w") == run.p("w"));
}
