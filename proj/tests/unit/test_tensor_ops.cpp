#include <cmath>

#include "doctest.h"
#include "xad/tape.hpp"
#include "xad/tensor.hpp"

using namespace xad;

TEST_CASE("tensor shape invariants") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK_THROWS(Tensor({2, 0}));
    CHECK_THROWS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}));
}

TEST_CASE("add / sub / mul forward") {
    Tape tape;
    int a = tape.constant(Tensor({2}, {1, 2}));
    int b = tape.constant(Tensor({2}, {3, 4}));
    CHECK(tape.value(tape.add(a, b)).data == std::vector<float>{4, 6});
    CHECK(tape.value(tape.sub(a, b)).data == std::vector<float>{-2, -2});
    CHECK(tape.value(tape.mul(a, b)).data == std::vector<float>{3, 8});
    int c = tape.constant(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS_WITH_AS(tape.add(a, c), doctest::Contains("add: shape mismatch"), std::runtime_error);
}

TEST_CASE("matmul identity leaves input unchanged") {
    Tape tape;
    Tensor id3({3, 3});
    for (int i = 0; i < 3; ++i) id3.at2(i, i) = 1.0f;
    Rng rng(5);
    Tensor x = rng.normal_tensor<float>({3, 5});
    int out = tape.matmul(tape.constant(id3), tape.constant(x));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(tape.value(out)[i] == doctest::Approx(x[i]));
}

TEST_CASE("silu closed form at zero") {
    Tape tape;
    int x = tape.constant(Tensor({1}, {0.0f}));
    CHECK(tape.value(tape.silu(x))[0] == 0.0f);

    // derivative at 0 is sigma(0)(1 + 0) = 0.5
    TapeD td;
    int xd = td.leaf(TensorD({1}, {0.0}), true);
    int y = td.silu(xd);
    td.backward(y);
    CHECK(td.grad(xd)[0] == doctest::Approx(0.5));
}

TEST_CASE("conv2d 1x1 identity kernel") {
    Tape tape;
    Rng rng(7);
    Tensor x = rng.normal_tensor<float>({1, 3, 4, 4});
    Tensor w({3, 3, 1, 1});
    for (int i = 0; i < 3; ++i) w.data[static_cast<size_t>(i) * 3 + i] = 1.0f;
    int out = tape.conv2d(tape.constant(x), tape.constant(w), -1, 0);
    CHECK(tape.value(out).shape == x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(tape.value(out)[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d all-zero weight and bias gives zeros") {
    Tape tape;
    Rng rng(9);
    Tensor x = rng.normal_tensor<float>({2, 3, 4, 4});
    int out = tape.conv2d(tape.constant(x), tape.constant(Tensor({5, 3, 3, 3})),
                          tape.constant(Tensor({5})), 1);
    for (int64_t i = 0; i < tape.value(out).numel(); ++i) CHECK(tape.value(out)[i] == 0.0f);
}

TEST_CASE("conv2d 3x3 ones kernel sums the neighborhood") {
    Rng rng(11);
    Tensor x = rng.normal_tensor<float>({1, 1, 4, 4});
    Tensor w({1, 1, 3, 3});
    for (auto& v : w.data) v = 1.0f;
    Tape tape;
    int out = tape.conv2d(tape.constant(x), tape.constant(w), -1, 1);
    // hand-summed window oracle at the center pixel (1,1)
    float expect = 0;
    for (int dy = 0; dy <= 2; ++dy)
        for (int dx = 0; dx <= 2; ++dx) expect += x.at4(0, 0, dy, dx);
    CHECK(tape.value(out).at4(0, 0, 1, 1) == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("conv2d channel mismatch error") {
    Tape tape;
    int x = tape.constant(Tensor({1, 3, 4, 4}));
    int w = tape.constant(Tensor({2, 4, 3, 3}));
    CHECK_THROWS_WITH_AS(tape.conv2d(x, w, -1, 1), doctest::Contains("channel mismatch"),
                         std::runtime_error);
}

TEST_CASE("group_norm validates group count") {
    Tape tape;
    int x = tape.constant(Tensor({1, 6, 2, 2}));
    CHECK_THROWS_WITH_AS(tape.group_norm(x, 4), doctest::Contains("not divisible"), std::runtime_error);
}

TEST_CASE("group_norm normalizes per group") {
    Rng rng(13);
    Tensor x = rng.normal_tensor<float>({2, 8, 3, 3});
    for (auto& v : x.data) v = v * 3.0f + 1.5f;
    Tape tape;
    int out = tape.group_norm(tape.constant(x), 4);
    const Tensor& y = tape.value(out);
    // each (sample, group) slice has mean ~0 and variance ~1
    for (int s = 0; s < 2; ++s)
        for (int g = 0; g < 4; ++g) {
            double mean = 0, var = 0;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int i = 0; i < 9; ++i) mean += y.at4(s, c, i / 3, i % 3);
            mean /= 18.0;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int i = 0; i < 9; ++i) {
                    double d = y.at4(s, c, i / 3, i % 3) - mean;
                    var += d * d;
                }
            var /= 18.0;
            CHECK(mean == doctest::Approx(0.0).epsilon(1e-4));
            CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("concat and reshape round structure") {
    Tape tape;
    int a = tape.constant(Tensor({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    int b = tape.constant(Tensor({1, 1, 2, 2}, {9, 10, 11, 12}));
    int cat = tape.concat(a, b, 1);
    CHECK(tape.value(cat).shape == std::vector<int>{1, 3, 2, 2});
    CHECK(tape.value(cat).data == std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    int r = tape.reshape(cat, {3, 4});
    CHECK(tape.value(r).shape == std::vector<int>{3, 4});
    CHECK_THROWS(tape.reshape(cat, {5, 2}));
}

TEST_CASE("upsample2x then avgpool2x is the identity") {
    Rng rng(17);
    Tensor x = rng.normal_tensor<float>({1, 2, 3, 3});
    Tape tape;
    int up = tape.upsample2x(tape.constant(x));
    CHECK(tape.value(up).shape == std::vector<int>{1, 2, 6, 6});
    int down = tape.avgpool2x(up);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(tape.value(down)[i] == doctest::Approx(x[i]));
}

TEST_CASE("embedding lookup rows") {
    Tape tape;
    Tensor table({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
    int t = tape.constant(table);
    int e = tape.embedding(t, {2, 0});
    CHECK(tape.value(e).shape == std::vector<int>{2, 2});
    CHECK(tape.value(e).data == std::vector<float>{20, 21, 0, 1});
    CHECK_THROWS(tape.embedding(t, {4}));
}

TEST_CASE("mse values") {
    Tape tape;
    int a = tape.constant(Tensor({4}, {1, 1, 1, 1}));
    int z = tape.constant(Tensor({4}));
    CHECK(tape.value(tape.mse(a, a))[0] == 0.0f);
    CHECK(tape.value(tape.mse(z, a))[0] == doctest::Approx(1.0));
    int bad = tape.constant(Tensor({3}));
    CHECK_THROWS_WITH_AS(tape.mse(a, bad), doctest::Contains("mse: shape mismatch"), std::runtime_error);
}

TEST_CASE("forward evaluation is deterministic") {
    auto run = [] {
        Rng rng(23);
        Tensor x = rng.normal_tensor<float>({1, 4, 8, 8});
        Tensor w = rng.normal_tensor<float>({4, 4, 3, 3});
        Tape tape;
        int h = tape.conv2d(tape.constant(x), tape.constant(w), -1, 1);
        h = tape.group_norm(h, 4);
        h = tape.silu(h);
        return tape.value(h).data;
    };
    CHECK(run() == run());
}
