#include <cmath>

#include "doctest.h"
#include "emma/encoder.hpp"
#include "emma/gradcheck.hpp"

using namespace emma;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.grid_h = 2;
    c.grid_w = 2;
    c.patch_width = 6;
    c.m = 4;
    c.d = 8;
    c.d_prime = 6;
    c.depth = 2;
    c.vocab_size = 16;
    c.embed_dim = 6;
    c.mlp_ratio = 2;
    return c;
}

}  // namespace

TEST_CASE("encoder config presets and validation") {
    auto desk = EncoderConfig::desk();
    CHECK(desk.n() == 16);
    CHECK(desk.m == 12);
    CHECK(desk.d == 32);
    CHECK(desk.d_prime == 24);
    desk.validate();

    auto paper = EncoderConfig::paper_shape();
    CHECK(paper.n() == 576);
    CHECK(paper.m == 77);
    CHECK(paper.d == 1024);
    CHECK(paper.d_prime == 768);

    auto bad = desk;
    bad.depth = 1;  // no penultimate block to tap
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = desk;
    bad.d = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("tap names round-trip") {
    CHECK(layer_tap_from_string("final") == LayerTap::final);
    CHECK(layer_tap_from_string("penultimate") == LayerTap::penultimate);
    CHECK_THROWS_AS(layer_tap_from_string("first"), ConfigError);
}

TEST_CASE("encoding shapes, taps, and determinism") {
    const auto cfg = EncoderConfig::desk();
    EncoderStackF enc(cfg, 42);
    SplitMix64 rng(5);
    auto patches = TensorF::randn(cfg.n(), cfg.patch_width, rng);

    auto v_final = enc.encode_image(nullptr, patches, LayerTap::final);
    auto v_pen = enc.encode_image(nullptr, patches, LayerTap::penultimate);
    CHECK(v_final.rows() == cfg.n());
    CHECK(v_final.cols() == cfg.d);
    bool differs = false;
    for (std::size_t i = 0; i < v_final.data().size(); ++i)
        differs |= v_final.data()[i] != v_pen.data()[i];
    CHECK(differs);  // the last block must do real work

    auto again = enc.encode_image(nullptr, patches, LayerTap::final);
    for (std::size_t i = 0; i < v_final.data().size(); ++i)
        CHECK(again.data()[i] == v_final.data()[i]);

    EncoderStackF same_seed(cfg, 42), other_seed(cfg, 43);
    auto p1 = enc.named_params("enc");
    auto p2 = same_seed.named_params("enc");
    auto p3 = other_seed.named_params("enc");
    REQUIRE(p1.size() == p2.size());
    bool any_diff_seed = false;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].first == p2[i].first);
        for (std::size_t j = 0; j < p1[i].second.data().size(); ++j) {
            CHECK(p1[i].second.data()[j] == p2[i].second.data()[j]);
            any_diff_seed |= p1[i].second.data()[j] != p3[i].second.data()[j];
        }
    }
    CHECK(any_diff_seed);
}

TEST_CASE("text encoding validates input and pads to the token budget") {
    const auto cfg = EncoderConfig::desk();
    EncoderStackF enc(cfg, 42);
    auto t = enc.encode_text(nullptr, {1, 3, 4, 9}, LayerTap::final);
    CHECK(t.tokens.rows() == cfg.m);
    CHECK(t.tokens.cols() == cfg.d_prime);
    CHECK(t.real_tokens == 4);
    for (int i = 0; i < cfg.m; ++i) CHECK(t.mask.at(i, 0) == (i < 4 ? 1.0f : 0.0f));

    CHECK_THROWS_AS(enc.encode_text(nullptr, std::vector<int>(cfg.m + 1, 1), LayerTap::final),
                    InputError);
    CHECK_THROWS_AS(enc.encode_text(nullptr, {cfg.vocab_size}, LayerTap::final), InputError);
    CHECK_THROWS_AS(enc.encode_text(nullptr, {-1}, LayerTap::final), InputError);
}

TEST_CASE("an empty instruction encodes without NaNs") {
    EncoderStackF enc(EncoderConfig::desk(), 42);
    auto t = enc.encode_text(nullptr, {}, LayerTap::final);
    CHECK(t.real_tokens == 0);
    for (float x : t.tokens.data()) CHECK(std::isfinite(x));
    auto e = enc.embed_text(nullptr, {});
    for (float x : e.data()) CHECK(std::isfinite(x));
}

TEST_CASE("padding keys are invisible to real tokens") {
    const auto cfg = EncoderConfig::desk();
    EncoderStackF enc(cfg, 42);
    const std::vector<int> ids{1, 3, 4, 9};
    auto before = enc.encode_text(nullptr, ids, LayerTap::final);

    // Corrupt the padding embedding through the shared parameter buffer.
    for (auto& [name, p] : enc.named_params("enc")) {
        if (name == "enc.text.tok_embed")
            for (int j = 0; j < p.cols(); ++j) p.at(0, j) += 10.0f;
    }
    auto after = enc.encode_text(nullptr, ids, LayerTap::final);

    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < cfg.d_prime; ++j)
            CHECK(after.tokens.at(i, j) == before.tokens.at(i, j));  // bitwise: masked out
    bool pad_changed = false;
    for (int i = 4; i < cfg.m; ++i)
        for (int j = 0; j < cfg.d_prime; ++j)
            pad_changed |= after.tokens.at(i, j) != before.tokens.at(i, j);
    CHECK(pad_changed);
}

TEST_CASE("contrastive embeddings are unit rows and the temperature starts at 0.07") {
    const auto cfg = EncoderConfig::desk();
    EncoderStackF enc(cfg, 42);
    SplitMix64 rng(5);
    auto ei = enc.embed_image(nullptr, TensorF::randn(cfg.n(), cfg.patch_width, rng));
    auto et = enc.embed_text(nullptr, {1, 3, 4, 9});
    CHECK(ei.rows() == 1);
    CHECK(ei.cols() == cfg.embed_dim);
    CHECK(et.cols() == cfg.embed_dim);
    double ni = 0, nt = 0;
    for (float x : ei.data()) ni += double(x) * x;
    for (float x : et.data()) nt += double(x) * x;
    CHECK(ni == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(nt == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(std::exp(enc.log_inv_temp().data()[0]) == doctest::Approx(1.0 / 0.07).epsilon(1e-5));
}

TEST_CASE("freezing stops gradient recording entirely") {
    const auto cfg = EncoderConfig::desk();
    EncoderStackF enc(cfg, 42);
    SplitMix64 rng(5);
    auto patches = TensorF::randn(cfg.n(), cfg.patch_width, rng);

    TapeF tape_before;
    (void)enc.encode_image(&tape_before, patches, LayerTap::final);
    CHECK(tape_before.size() > 0);

    enc.freeze();
    CHECK(enc.frozen());
    TapeF tape_after;
    (void)enc.encode_image(&tape_after, patches, LayerTap::final);
    CHECK(tape_after.size() == 0);
    for (const auto& [name, p] : enc.named_params("enc")) {
        (void)name;
        CHECK_FALSE(p.requires_grad());
    }
}

TEST_CASE("parameter names are unique and cover the declared count") {
    EncoderStackF enc(EncoderConfig::desk(), 42);
    auto params = enc.named_params("enc");
    std::int64_t total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        total += params[i].second.numel();
        for (std::size_t j = i + 1; j < params.size(); ++j)
            CHECK(params[i].first != params[j].first);
        CHECK(params[i].first.rfind("enc.", 0) == 0);
    }
    CHECK(total == enc.param_count());
    CHECK(total == 43505);  // desk geometry, pinned against accidental drift
}

TEST_CASE("image and text embeddings pass gradient checks") {
    const auto cfg = tiny_config();
    EncoderStackT<double> enc(cfg, 4);
    SplitMix64 rng(6);
    TensorD patches = TensorD::randn(cfg.n(), cfg.patch_width, rng);

    std::vector<TensorD*> img_inputs{&patches};
    auto params = enc.named_params("enc");
    std::vector<TensorD> held;
    held.reserve(params.size());
    for (auto& [name, p] : params) {
        if (name.find("vision.block0.attn") != std::string::npos ||
            name == "enc.vision.patch_proj.w" || name == "enc.head.vis_proj" ||
            name.find("vision.block1.ln2") != std::string::npos) {
            held.push_back(p);
            img_inputs.push_back(&held.back());
        }
    }
    auto rep = check_gradients("embed_image", img_inputs,
                               [&](TapeD* tape) { return enc.embed_image(tape, patches); });
    INFO("embed_image max_rel_err=" << rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-4);

    const std::vector<int> ids{1, 3, 5};
    std::vector<TensorD*> txt_inputs;
    std::vector<TensorD> held_txt;
    for (auto& [name, p] : params) {
        if (name == "enc.text.tok_embed" || name == "enc.head.txt_proj" ||
            name.find("text.block0.mlp") != std::string::npos) {
            held_txt.push_back(p);
        }
    }
    for (auto& p : held_txt) txt_inputs.push_back(&p);
    auto rep2 = check_gradients("embed_text", txt_inputs,
                                [&](TapeD* tape) { return enc.embed_text(tape, ids); });
    INFO("embed_text max_rel_err=" << rep2.max_rel_err);
    CHECK(rep2.max_rel_err < 1e-4);
}
