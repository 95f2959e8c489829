#include <cstdio>
#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "xad/checkpoint.hpp"

using namespace xad;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-identical") {
    Rng rng(3);
    std::map<std::string, Tensor> params;
    params["base.unet.stem.w"] = rng.normal_tensor<float>({8, 4, 3, 3});
    params["base.unet.stem.b"] = rng.normal_tensor<float>({8});
    params["up.vae.enc.w"] = rng.normal_tensor<float>({2, 2});
    std::string path = tmp_path("xad_ckpt_roundtrip.ckpt");
    save_checkpoint(path, params);
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == params.size());
    for (const auto& [name, t] : params) {
        REQUIRE(loaded.count(name) == 1);
        CHECK(loaded[name].shape == t.shape);
        CHECK(loaded[name].data == t.data);
    }
    // saving the loaded map again reproduces the same bytes
    std::string path2 = tmp_path("xad_ckpt_roundtrip2.ckpt");
    save_checkpoint(path2, loaded);
    CHECK(read_text_file(path) == read_text_file(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("checkpoint header layout is pinned") {
    std::map<std::string, Tensor> params;
    params["ab"] = Tensor({2}, {1.0f, 2.0f});
    std::string path = tmp_path("xad_ckpt_layout.ckpt");
    save_checkpoint(path, params);
    std::string buf = read_text_file(path);
    // magic + u32 count=1 + u16 len=2 + "ab" + dtype 0 + rank 1 + extent 2 + 8 value bytes
    REQUIRE(buf.size() == 8 + 4 + 2 + 2 + 1 + 1 + 4 + 8);
    CHECK(buf.substr(0, 8) == "XADCKPT1");
    CHECK(static_cast<uint8_t>(buf[8]) == 1);   // count LE
    CHECK(static_cast<uint8_t>(buf[12]) == 2);  // name length LE
    CHECK(buf.substr(14, 2) == "ab");
    CHECK(static_cast<uint8_t>(buf[16]) == 0);  // dtype f32
    CHECK(static_cast<uint8_t>(buf[17]) == 1);  // rank
    CHECK(static_cast<uint8_t>(buf[18]) == 2);  // extent LE
    float v0, v1;
    std::memcpy(&v0, buf.data() + 22, 4);
    std::memcpy(&v1, buf.data() + 26, 4);
    CHECK(v0 == 1.0f);
    CHECK(v1 == 2.0f);
    std::remove(path.c_str());
}

TEST_CASE("loader rejects unknown magic") {
    std::string path = tmp_path("xad_ckpt_magic.ckpt");
    write_text_file(path, "NOTACKPT----");
    CHECK_THROWS_AS(load_checkpoint(path), BadMagicError);
    std::remove(path.c_str());
}

TEST_CASE("loader reports truncation as corruption") {
    Rng rng(5);
    std::map<std::string, Tensor> params;
    params["w"] = rng.normal_tensor<float>({16});
    std::string path = tmp_path("xad_ckpt_trunc.ckpt");
    save_checkpoint(path, params);
    std::string buf = read_text_file(path);
    write_text_file(path, buf.substr(0, buf.size() - 7));
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpointError);
    std::remove(path.c_str());
}

TEST_CASE("load into store verifies names and shapes") {
    ParamStore store;
    Rng rng(7);
    store.add("a", rng.normal_tensor<float>({3}), true);
    std::string path = tmp_path("xad_ckpt_store.ckpt");
    save_store(path, store);

    ParamStore other;
    other.add("a", Tensor({3}), false);
    load_into_store(path, other);
    CHECK(other.at("a").data == store.at("a").data);
    CHECK_FALSE(other.trainable("a"));  // loading does not change freeze flags

    ParamStore wrong;
    wrong.add("a", Tensor({4}), true);
    CHECK_THROWS_AS(load_into_store(path, wrong), CorruptCheckpointError);
    std::remove(path.c_str());
}
