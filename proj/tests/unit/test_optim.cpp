#include "doctest.h"
#include "xad/optim.hpp"

using namespace xad;

TEST_CASE("adamw rejects nonpositive lr and frozen parameters") {
    ParamStore store;
    store.add("w", Tensor({1}, {1.0f}), true);
    store.add("f", Tensor({1}, {1.0f}), false);
    CHECK_THROWS_WITH_AS(AdamW(store, {"w"}, 0.0), doctest::Contains("lr"), std::runtime_error);
    CHECK_THROWS_WITH_AS(AdamW(store, {"f"}, 0.1), doctest::Contains("frozen"), std::runtime_error);
}

TEST_CASE("zero gradient with zero weight decay leaves parameters alone") {
    ParamStore store;
    store.add("w", Tensor({2}, {0.5f, -0.25f}), true);
    AdamW opt(store, {"w"}, 0.1);
    std::map<std::string, Tensor> grads;
    grads["w"] = Tensor({2});
    opt.step(grads);
    CHECK(store.at("w").data == std::vector<float>{0.5f, -0.25f});
}

TEST_CASE("single scalar step matches the hand-computed update") {
    // w=1, g=1, lr=0.1, betas=(0.9,0.999), wd=0, step 1:
    // m_hat = v_hat = 1, so w <- 1 - 0.1 * 1/(1 + eps) ~ 0.9
    ParamStore store;
    store.add("w", Tensor({1}, {1.0f}), true);
    AdamW opt(store, {"w"}, 0.1);
    std::map<std::string, Tensor> grads;
    grads["w"] = Tensor({1}, {1.0f});
    opt.step(grads);
    CHECK(store.at("w")[0] == doctest::Approx(0.9).epsilon(1e-5));
}

TEST_CASE("frozen parameter untouched even with a gradient present") {
    ParamStore store;
    store.add("w", Tensor({1}, {1.0f}), true);
    store.add("frozen", Tensor({1}, {2.0f}), false);
    uint64_t before = store.content_hash("frozen");
    AdamW opt(store, {"w"}, 0.1);
    std::map<std::string, Tensor> grads;
    grads["w"] = Tensor({1}, {1.0f});
    grads["frozen"] = Tensor({1}, {5.0f});
    opt.step(grads);
    CHECK(store.content_hash("frozen") == before);
}

TEST_CASE("100 steps never write frozen parameters (hash equality)") {
    ParamStore store;
    Rng rng(41);
    store.add("train.w", rng.normal_tensor<float>({4, 4}), true);
    store.add("frozen.w", rng.normal_tensor<float>({4, 4}), false);
    uint64_t before = store.content_hash("frozen.");
    AdamW opt(store, {"train.w"}, 0.01, 0.9, 0.999, 0.01);
    for (int i = 0; i < 100; ++i) {
        std::map<std::string, Tensor> grads;
        grads["train.w"] = rng.normal_tensor<float>({4, 4});
        grads["frozen.w"] = rng.normal_tensor<float>({4, 4});
        opt.step(grads);
    }
    CHECK(store.content_hash("frozen.") == before);
}

TEST_CASE("decoupled weight decay shrinks weights without gradients") {
    ParamStore store;
    store.add("w", Tensor({1}, {1.0f}), true);
    AdamW opt(store, {"w"}, 0.1, 0.9, 0.999, 0.5);
    std::map<std::string, Tensor> grads;
    grads["w"] = Tensor({1});
    opt.step(grads);
    // update = lr * wd * w = 0.1 * 0.5 * 1
    CHECK(store.at("w")[0] == doctest::Approx(0.95f));
}
