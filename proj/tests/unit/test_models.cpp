#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "xad/checkpoint.hpp"
#include "xad/models.hpp"

using namespace xad;

namespace {

Tensor latent_for(const ModelVersion& mv, int n, uint64_t seed) {
    Rng rng(seed);
    return rng.normal_tensor<float>({n, mv.vae.latent_channels, mv.vae.latent_hw, mv.vae.latent_hw});
}

}  // namespace

TEST_CASE("shipped geometometries are incompatible by construction") {
    ModelVersion base = ModelVersion::make(Role::kBase, 1);
    ModelVersion up = ModelVersion::make(Role::kUpgraded, 2);
    CHECK(base.vae.image_hw == 16);
    CHECK(base.vae.latent_hw == 8);
    CHECK(up.vae.image_hw == 32);
    CHECK(up.vae.latent_hw == 16);
    REQUIRE(base.unet.stages() == up.unet.stages());
    for (int s = 0; s < base.unet.stages(); ++s) {
        CHECK(base.unet.stage_widths[static_cast<size_t>(s)] != up.unet.stage_widths[static_cast<size_t>(s)]);
        CHECK(base.unet.stage_hw(s) * 2 == up.unet.stage_hw(s));
    }
}

TEST_CASE("every parameter carries the version prefix and is enumerable") {
    ModelVersion base = ModelVersion::make(Role::kBase, 1);
    auto names = base.params.names();
    CHECK(names.size() > 20);
    for (const auto& n : names) CHECK(n.rfind("base.", 0) == 0);
}

TEST_CASE("vae encode output shape: base 16x16x3 -> 4ch 8x8") {
    ModelVersion base = ModelVersion::make(Role::kBase, 3);
    Rng rng(5);
    Tensor img = rng.normal_tensor<float>({2, 3, 16, 16});
    Tensor z = encode_image(base, img);
    CHECK(z.shape == std::vector<int>{2, 4, 8, 8});
    CHECK_THROWS_WITH(encode_image(base, rng.normal_tensor<float>({1, 3, 32, 32})),
                      doctest::Contains("does not match"));
}

TEST_CASE("untrained vae round-trip is deterministic") {
    ModelVersion base = ModelVersion::make(Role::kBase, 7);
    Rng rng(9);
    Tensor img = rng.normal_tensor<float>({1, 3, 16, 16});
    Tensor a = decode_latent(base, encode_image(base, img));
    Tensor b = decode_latent(base, encode_image(base, img));
    CHECK(a.data == b.data);
    for (float v : a.data) CHECK(std::fabs(v) <= 1.0f);  // tanh range
}

TEST_CASE("unet forward returns eps of latent shape and 6 taps") {
    ModelVersion up = ModelVersion::make(Role::kUpgraded, 11);
    ModelRun run(up.params);
    run.grad_enabled = false;
    Tensor z = latent_for(up, 2, 13);
    UnetOut out = unet_forward(run, up, run.c(z), {5, 50}, {1, 3});
    CHECK(run.tape.value(out.eps).shape == z.shape);
    CHECK(out.taps.size() == 6);
    for (const auto& [site, node] : out.taps) {
        const auto& s = run.tape.value(node).shape;
        CHECK(s[1] == up.unet.stage_widths[static_cast<size_t>(site.stage)]);
        CHECK(s[2] == up.unet.stage_hw(site.stage));
    }
}

TEST_CASE("zero-initialized output head predicts zero noise") {
    ModelVersion base = ModelVersion::make(Role::kBase, 17);
    ModelRun run(base.params);
    run.grad_enabled = false;
    UnetOut out = unet_forward(run, base, run.c(latent_for(base, 1, 19)), {42}, {2});
    for (float v : run.tape.value(out.eps).data) CHECK(v == 0.0f);
}

TEST_CASE("all-zero injections leave the forward bit-identical") {
    ModelVersion base = ModelVersion::make(Role::kBase, 23);
    Tensor z = latent_for(base, 1, 29);

    ModelRun plain(base.params);
    plain.grad_enabled = false;
    UnetOut a = unet_forward(plain, base, plain.c(z), {10}, {4});

    ModelRun injected(base.params);
    injected.grad_enabled = false;
    std::vector<Injection> inj;
    for (int s = 0; s < 3; ++s) {
        int c = base.unet.stage_widths[static_cast<size_t>(s)];
        int hw = base.unet.stage_hw(s);
        inj.push_back({{Side::kDecoder, s}, injected.c(Tensor({1, c, hw, hw}))});
    }
    UnetOut b = unet_forward(injected, base, injected.c(z), {10}, {4}, inj);
    CHECK(plain.tape.value(a.eps).data == injected.tape.value(b.eps).data);
}

TEST_CASE("injections are linear at a site: a then b equals a+b") {
    ModelVersion base = ModelVersion::make(Role::kBase, 31);
    Tensor z = latent_for(base, 1, 37);
    Rng rng(41);
    Tensor ga = rng.normal_tensor<float>({1, 64, 4, 4});
    Tensor gb = rng.normal_tensor<float>({1, 64, 4, 4});
    Tensor gsum(ga.shape);
    for (int64_t i = 0; i < ga.numel(); ++i) gsum[i] = ga[i] + gb[i];

    auto eps_with = [&](std::vector<Tensor> residuals) {
        ModelRun run(base.params);
        run.grad_enabled = false;
        std::vector<Injection> inj;
        for (auto& r : residuals) inj.push_back({{Side::kDecoder, 1}, run.c(r)});
        UnetOut out = unet_forward(run, base, run.c(z), {60}, {7}, inj);
        return run.tape.value(out.eps).data;
    };
    auto two = eps_with({ga, gb});
    auto one = eps_with({gsum});
    REQUIRE(two.size() == one.size());
    for (size_t i = 0; i < two.size(); ++i) CHECK(two[i] == doctest::Approx(one[i]).epsilon(1e-4));
}

TEST_CASE("injection validation names the site") {
    ModelVersion base = ModelVersion::make(Role::kBase, 43);
    ModelRun run(base.params);
    run.grad_enabled = false;
    Tensor z = latent_for(base, 1, 47);
    std::vector<Injection> unknown = {{{Side::kDecoder, 9}, run.c(Tensor({1, 1, 1, 1}))}};
    CHECK_THROWS_WITH(unet_forward(run, base, run.c(z), {1}, {1}, unknown),
                      doctest::Contains("unknown site dec9"));

    ModelRun run2(base.params);
    run2.grad_enabled = false;
    std::vector<Injection> bad_shape = {{{Side::kDecoder, 1}, run2.c(Tensor({1, 64, 8, 8}))}};
    CHECK_THROWS_WITH(unet_forward(run2, base, run2.c(z), {1}, {1}, bad_shape),
                      doctest::Contains("injection at dec1"));
}

TEST_CASE("model save/load round-trips parameters and manifest") {
    ModelVersion base = ModelVersion::make(Role::kBase, 53);
    base.latent_scale = 2.5f;
    base.vae_trained = true;
    std::string prefix = (std::filesystem::temp_directory_path() / "xad_model_rt").string();
    save_model(prefix, base);
    ModelVersion back = load_model(prefix);
    CHECK(back.latent_scale == base.latent_scale);
    CHECK(back.vae_trained);
    CHECK_FALSE(back.unet_trained);
    CHECK(back.params.content_hash() == base.params.content_hash());
    CHECK(back.checkpoint_checksum != 0);
    std::remove((prefix + ".ckpt").c_str());
    std::remove((prefix + ".json").c_str());
}

TEST_CASE("sinusoidal embedding is bounded and distinct per t") {
    Tensor a = sinusoidal_embedding({3, 90}, 64);
    CHECK(a.shape == std::vector<int>{2, 64});
    bool differ = false;
    for (int j = 0; j < 64; ++j) {
        CHECK(std::fabs(a.at2(0, j)) <= 1.0f);
        if (a.at2(0, j) != a.at2(1, j)) differ = true;
    }
    CHECK(differ);
}
