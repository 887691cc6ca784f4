#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "vithash/hash_head.hpp"

using namespace vith;
using namespace vith::testing;

TEST_CASE("head input dimension per feature mode") {
    HashHeadConfig cfg;
    cfg.bits = 32;

    auto tiny = ViTConfig::tiny();
    cfg.mode = FeatureMode::All;
    CHECK(cfg.input_dim(tiny) == 17 * 64);
    cfg.mode = FeatureMode::ClsOnly;
    CHECK(cfg.input_dim(tiny) == 64);

    // arithmetic only for the big presets; never allocate those weights here
    auto v16 = ViTConfig::vts16();
    cfg.mode = FeatureMode::All;
    CHECK(cfg.input_dim(v16) == 197 * 768);
    cfg.mode = FeatureMode::ClsOnly;
    CHECK(cfg.input_dim(v16) == 768);

    HashHeadConfig bad = cfg;
    bad.bits = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.dropout_p = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cls-only head sees exactly the first token row") {
    auto enc = ViTConfig::tiny();
    const std::size_t t = enc.tokens(), de = enc.hidden;
    HashHeadConfig cfg;
    cfg.bits = 8;
    cfg.hidden_dim = 24;
    cfg.mode = FeatureMode::ClsOnly;
    auto p = HashHeadParams<float>::fresh(enc, cfg, 7);

    Prng rng(3);
    auto te = Tensor::zeros({2, t, de});
    for (auto& v : te.data()) v = float(rng.next_unit() * 2 - 1);
    auto h = hash_forward_batch(te, p, {false, 0, 0});
    REQUIRE(h.shape() == Shape{2, 8});

    // manual: take row 0 of each item, run the same two layers
    for (std::size_t item = 0; item < 2; ++item) {
        std::vector<float> row(de);
        for (std::size_t j = 0; j < de; ++j) row[j] = te.data()[item * t * de + j];
        std::vector<float> hid(cfg.hidden_dim, 0.0f);
        for (std::size_t k = 0; k < de; ++k)
            for (std::size_t c = 0; c < cfg.hidden_dim; ++c)
                hid[c] += row[k] * p.w1.data()[k * cfg.hidden_dim + c];
        for (std::size_t c = 0; c < cfg.hidden_dim; ++c)
            hid[c] = std::max(0.0f, hid[c] + p.b1.data()[c]);
        for (std::size_t c = 0; c < cfg.bits; ++c) {
            float out = p.b2.data()[c];
            for (std::size_t k = 0; k < cfg.hidden_dim; ++k)
                out += hid[k] * p.w2.data()[k * cfg.bits + c];
            CHECK(h.data()[item * cfg.bits + c] == doctest::Approx(out).epsilon(1e-5));
        }
    }

    // all-mode output differs (it mixes every token)
    cfg.mode = FeatureMode::All;
    auto pa = HashHeadParams<float>::fresh(enc, cfg, 7);
    auto ha = hash_forward_batch(te, pa, {false, 0, 0});
    CHECK(ha.shape() == Shape{2, 8});
    CHECK(ha.data() != h.data());

    // feeding a mismatched feature width is an error
    auto wrong = Tensor::zeros({2, t + 1, de});
    CHECK_THROWS_AS(hash_forward_batch(wrong, pa, ForwardCtx{false, 0, 0}), ShapeError);
}

TEST_CASE("binarize packs sign bits LSB-first") {
    std::vector<float> h = {0.5f, -0.1f, 0.0f, 2.0f};
    auto words = binarize(h);
    REQUIRE(words.size() == 1);
    // bit set iff value > 0; exact zero stays clear
    CHECK(words[0] == 0b1001);

    // multi-word: 80 bits, every third bit positive
    std::vector<float> wide(80, -1.0f);
    for (std::size_t i = 0; i < 80; i += 3) wide[i] = 1.0f;
    auto w2 = binarize(wide);
    REQUIRE(w2.size() == 2);
    for (std::size_t i = 0; i < 80; ++i)
        CHECK(((w2[i / 64] >> (i % 64)) & 1) == (i % 3 == 0 ? 1 : 0));
    // pad bits beyond 80 stay zero
    CHECK((w2[1] >> 16) == 0);

    std::vector<float> bad = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(binarize(bad), NumericError);
    std::vector<float> inf = {std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(binarize(inf), NumericError);
}

TEST_CASE("head dropout: eval is clean, train is seeded and reproducible") {
    auto enc = ViTConfig::tiny();
    HashHeadConfig cfg;
    cfg.bits = 16;
    cfg.hidden_dim = 32;
    auto p = HashHeadParams<float>::fresh(enc, cfg, 11);
    Prng rng(5);
    auto te = Tensor::zeros({3, enc.tokens(), enc.hidden});
    for (auto& v : te.data()) v = float(rng.next_unit());

    auto e1 = hash_forward_batch(te, p, {false, 1, 0});
    auto e2 = hash_forward_batch(te, p, {false, 2, 5});
    CHECK(e1.data() == e2.data());

    auto t1 = hash_forward_batch(te, p, {true, 9, 0});
    auto t2 = hash_forward_batch(te, p, {true, 9, 0});
    CHECK(t1.data() == t2.data());
    auto t3 = hash_forward_batch(te, p, {true, 9, 1});
    CHECK(t1.data() != t3.data());
}

TEST_CASE("finite differences through the hash head") {
    auto enc = ViTConfig::tiny();
    HashHeadConfig cfg;
    cfg.bits = 6;
    cfg.hidden_dim = 12;
    cfg.mode = FeatureMode::All;
    auto p = HashHeadParams<double>::fresh(enc, cfg, 77);
    p.set_requires_grad(true);
    // shift b1 so no ReLU input sits near its kink
    for (auto& v : p.b1.data()) v = 0.05;

    Prng rng(21);
    auto te = rand_tensor({2, enc.tokens(), enc.hidden}, rng, -1.0, 1.0, true);
    auto w = rand_tensor({2, cfg.bits}, rng, -1.0, 1.0, false);
    std::vector<DTensor> inputs = {te, p.w1, p.b1, p.w2, p.b2};
    const double err = max_grad_error(
        inputs, [&] { return sum(mul(hash_forward_batch(te, p, ForwardCtx{false, 0, 0}), w)); });
    CHECK(err < 1e-4);
}
