#pragma once

#include <vector>

#include "emma/adapter.hpp"
#include "emma/encoder.hpp"
#include "emma/gradcheck.hpp"
#include "emma/pipeline.hpp"

namespace emma {

// Central-difference verification of every differentiable operation plus a
// composed encoder -> adapter -> readout model, all in double precision.
// Each report carries the worst relative error over every input element.
inline std::vector<GradCheckReport> run_gradient_suite() {
    std::vector<GradCheckReport> reports;
    SplitMix64 rng(1234);

    auto randn = [&rng](int r, int c) { return TensorD::randn(r, c, rng); };

    {
        TensorD a = randn(3, 4), b = randn(4, 2);
        reports.push_back(check_gradients("matmul", {&a, &b}, [&](TapeD* t) {
            return matmul(t, a, b);
        }));
    }
    {
        TensorD a = randn(3, 4);
        reports.push_back(check_gradients("transpose", {&a}, [&](TapeD* t) {
            return transpose(t, a);
        }));
    }
    {
        TensorD a = randn(3, 4), b = randn(3, 4);
        reports.push_back(check_gradients("add", {&a, &b}, [&](TapeD* t) {
            return add(t, a, b);
        }));
    }
    {
        TensorD a = randn(3, 4), b = randn(3, 4);
        reports.push_back(check_gradients("mul", {&a, &b}, [&](TapeD* t) {
            return mul(t, a, b);
        }));
    }
    {
        TensorD a = randn(3, 4), b = randn(1, 4);
        reports.push_back(check_gradients("add_row_bias", {&a, &b}, [&](TapeD* t) {
            return add_row_bias(t, a, b);
        }));
    }
    {
        TensorD a = randn(3, 4);
        reports.push_back(check_gradients("scale", {&a}, [&](TapeD* t) {
            return scale(t, a, 0.37);
        }));
    }
    {
        TensorD a = randn(3, 4);
        TensorD s = TensorD::scalar(0.8);
        reports.push_back(check_gradients("scale_by", {&a, &s}, [&](TapeD* t) {
            return scale_by(t, a, s);
        }));
    }
    {
        // Inputs nudged away from the kink at zero so the numeric probe
        // (step 1e-5) stays on one side of it.
        TensorD a = randn(3, 4);
        for (auto& v : a.data()) v += (v >= 0.0 ? 0.05 : -0.05);
        reports.push_back(check_gradients("relu", {&a}, [&](TapeD* t) { return relu(t, a); }));
    }
    {
        TensorD a = randn(3, 4);
        reports.push_back(check_gradients("exp_elem", {&a}, [&](TapeD* t) {
            return exp_elem(t, a);
        }));
    }
    {
        TensorD a = randn(2, 4), b = randn(3, 4);
        reports.push_back(check_gradients("concat_tokens", {&a, &b}, [&](TapeD* t) {
            return concat_tokens(t, a, b);
        }));
    }
    {
        TensorD a = randn(1, 4), b = randn(1, 4), c = randn(1, 4);
        reports.push_back(check_gradients("concat_rows", {&a, &b, &c}, [&](TapeD* t) {
            return concat_rows(t, {a, b, c});
        }));
    }
    {
        TensorD a = randn(3, 5);
        reports.push_back(check_gradients("softmax_rows", {&a}, [&](TapeD* t) {
            return softmax_rows(t, a);
        }));
    }
    {
        TensorD a = randn(3, 5), gain = randn(1, 5), bias = randn(1, 5);
        reports.push_back(check_gradients("layer_norm", {&a, &gain, &bias}, [&](TapeD* t) {
            return layer_norm(t, a, gain, bias);
        }));
    }
    {
        TensorD a = randn(4, 3);
        reports.push_back(check_gradients("mean_pool_rows", {&a}, [&](TapeD* t) {
            return mean_pool_rows(t, a);
        }));
    }
    {
        TensorD a = randn(4, 3), w = randn(4, 1);
        reports.push_back(check_gradients("weighted_sum_rows", {&a, &w}, [&](TapeD* t) {
            return weighted_sum_rows(t, a, w);
        }));
    }
    {
        TensorD table = randn(6, 3);
        const std::vector<int> ids{1, 4, 1, 0};  // repeated id exercises accumulation
        reports.push_back(check_gradients("gather_rows", {&table}, [&](TapeD* t) {
            return gather_rows(t, table, ids);
        }));
    }
    {
        TensorD a = randn(3, 4);
        reports.push_back(check_gradients("sum_all", {&a}, [&](TapeD* t) {
            return sum_all(t, a);
        }));
    }
    {
        TensorD a = randn(3, 4);
        reports.push_back(check_gradients("l2_normalize_rows", {&a}, [&](TapeD* t) {
            return l2_normalize_rows(t, a);
        }));
    }
    {
        TensorD logits = randn(4, 5);
        const std::vector<int> labels{0, 3, 2, 3};
        reports.push_back(check_gradients("cross_entropy", {&logits}, [&](TapeD* t) {
            return cross_entropy(t, logits, labels);
        }));
    }

    // Composed model: a miniature encoder feeding the adapter and the answer
    // readout, differentiated end to end through the classification loss.
    {
        EncoderConfig cfg;
        cfg.grid_h = 2;
        cfg.grid_w = 2;
        cfg.patch_width = 5;
        cfg.m = 4;
        cfg.d = 8;
        cfg.d_prime = 6;
        cfg.depth = 2;
        cfg.vocab_size = 16;
        cfg.embed_dim = 6;
        cfg.mlp_ratio = 2;
        EncoderStackT<double> stack(cfg, 3);
        AdapterT<double> adapter(AdapterKind::linear, cfg.n(), cfg.m, cfg.d, cfg.d_prime, 4);
        // Move the mixer off its identity/zero initialization so its gradient
        // signal is generic.
        for (auto& v : adapter.named_params("adapt")[0].second.data())
            v += 0.01 * rng.next_normal();
        ReadoutT<double> readout(ReadoutMode::visual_only, cfg.d, 5, 3, 5);

        TensorD patches = randn(cfg.n(), cfg.patch_width);
        const std::vector<int> instruction{2, 5, 1};
        const std::vector<int> labels{1};

        // One representative parameter from each stage of the composition,
        // plus the image input itself.
        auto enc_params = stack.named_params("enc");
        TensorD* patch_proj = &enc_params[0].second;
        TensorD* block_attn = nullptr;
        TensorD* tok_embed = nullptr;
        for (auto& [name, p] : enc_params) {
            if (name == "enc.vision.block0.attn.wq") block_attn = &p;
            if (name == "enc.text.tok_embed") tok_embed = &p;
        }
        auto adapt_params = adapter.named_params("adapt");
        auto readout_params = readout.named_params("readout");
        std::vector<TensorD*> checked{&patches, patch_proj, block_attn, tok_embed};
        for (auto& [name, p] : adapt_params) checked.push_back(&p);
        for (auto& [name, p] : readout_params) checked.push_back(&p);

        reports.push_back(check_gradients("composed_model", checked, [&](TapeD* t) {
            auto v = stack.encode_image(t, patches, LayerTap::penultimate);
            auto txt = stack.encode_text(t, instruction, LayerTap::final);
            auto vtilde = adapter.adapt(t, v, txt.tokens);
            auto features = mean_pool_rows(t, vtilde);
            auto logits = readout.forward(t, features);
            return cross_entropy(t, logits, labels);
        }));
    }

    return reports;
}

}  // namespace emma
