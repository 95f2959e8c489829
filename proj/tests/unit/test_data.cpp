#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "xad/data.hpp"
#include "xad/checkpoint.hpp"

using namespace xad;

TEST_CASE("token mapping is a bijection with null reserved") {
    CHECK(kNullToken == 0);
    for (int tok = 1; tok < kVocabSize; ++tok) CHECK(label_token(token_label(tok)) == tok);
    CHECK_THROWS(token_label(0));
    CHECK_THROWS(token_label(kVocabSize));
}

TEST_CASE("same seed produces a byte-identical dataset") {
    Dataset a = generate_dataset(16, 99);
    Dataset b = generate_dataset(16, 99);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.samples[i].image32.data == b.samples[i].image32.data);
        CHECK(a.samples[i].condition_edge == b.samples[i].condition_edge);
        CHECK(a.samples[i].label == b.samples[i].label);
    }
    Dataset c = generate_dataset(16, 100);
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i)
        if (c.samples[i].image32.data != a.samples[i].image32.data) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("label distribution uniform within 3 sigma over 9 cells") {
    Dataset ds = generate_dataset(9000, 4242);
    int counts[9] = {0};
    for (const auto& s : ds.samples)
        counts[static_cast<int>(s.label.shape) * 3 + static_cast<int>(s.label.color)]++;
    double expect = 1000.0;
    double sigma = std::sqrt(9000.0 * (1.0 / 9.0) * (8.0 / 9.0));
    for (int i = 0; i < 9; ++i) CHECK(std::fabs(counts[i] - expect) < 3.0 * sigma);
}

TEST_CASE("style saturation invariants hold for every sample") {
    Dataset ds = generate_dataset(300, 7);
    double min_plain = 1.0, max_outline = 0.0;
    for (const auto& s : ds.samples) {
        double sat = mean_saturation(s.image32);
        if (s.label.style == Style::kOutline) {
            CHECK(sat < 0.15);
            max_outline = std::max(max_outline, sat);
        } else {
            CHECK(sat > 0.40);
            min_plain = std::min(min_plain, sat);
        }
    }
    // classes linearly separable by the saturation statistic
    CHECK(min_plain - max_outline >= 0.25);
}

TEST_CASE("image16 equals the 2x average pool of image32") {
    ToySample s = generate_sample(5, 0);
    Tensor pooled = avgpool_image(s.image32);
    CHECK(pooled.data == s.image16.data);
}

TEST_CASE("conditions re-derive exactly from the image") {
    Dataset ds = generate_dataset(32, 21);
    for (const auto& s : ds.samples) CHECK(edge_map(s.image32) == s.condition_edge);
}

TEST_CASE("classifier inverts the generator on clean data") {
    Dataset ds = generate_dataset(1000, 31337);
    int hits = 0;
    for (const auto& s : ds.samples)
        if (classify(s.image32) == s.label) ++hits;
    CHECK(hits >= 990);
}

TEST_CASE("classifier is deterministic") {
    ToySample s = generate_sample(17, 3);
    Label a = classify(s.image32);
    Label b = classify(s.image32);
    CHECK(a == b);
}

TEST_CASE("pure gray image lands in the outline branch") {
    Tensor gray({3, 32, 32});
    for (auto& v : gray.data) v = 0.25f;
    CHECK(mean_saturation(gray) == doctest::Approx(0.0));
    CHECK(classify(gray).style == Style::kOutline);
}

TEST_CASE("dataset io round-trips byte-identically") {
    Dataset ds = generate_dataset(10, 77);
    std::string path = (std::filesystem::temp_directory_path() / "xad_data_rt.bin").string();
    save_dataset(path, ds);
    Dataset back = load_dataset(path);
    REQUIRE(back.size() == ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.samples[i].image32.data == ds.samples[i].image32.data);
        CHECK(back.samples[i].image16.data == ds.samples[i].image16.data);
        CHECK(back.samples[i].label == ds.samples[i].label);
        CHECK(back.samples[i].condition_edge == ds.samples[i].condition_edge);
    }
    // record size is the documented constant
    CHECK(std::filesystem::file_size(path) == 12 + ds.size() * kRecordBytes);
    CHECK(kRecordBytes == 15491);

    std::string garbled = read_text_file(path);
    garbled[0] = 'Y';
    write_text_file(path, garbled);
    CHECK_THROWS_WITH(load_dataset(path), doctest::Contains("bad magic"));

    save_dataset(path, ds);
    std::string trunc = read_text_file(path);
    write_text_file(path, trunc.substr(0, trunc.size() - 3));
    CHECK_THROWS_WITH(load_dataset(path), doctest::Contains("truncated"));
    std::remove(path.c_str());
}
