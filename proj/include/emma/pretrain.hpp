#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "emma/encoder.hpp"
#include "emma/errors.hpp"
#include "emma/optim.hpp"
#include "emma/rng.hpp"
#include "emma/world.hpp"

namespace emma {

struct PretrainOptions {
    int steps = 600;
    float lr = 1e-3f;
    int batch_size = 32;
    std::uint64_t data_seed = 0;
};

struct PretrainResult {
    std::vector<float> losses;  // one symmetric InfoNCE value per step
};

namespace detail {
constexpr std::uint64_t kPretrainStream = 0x9E7AA1;
}

// Symmetric InfoNCE over (image, caption) pairs with a learnable temperature.
// Captions within one batch are kept distinct by rejection sampling so every
// off-diagonal really is a negative.
inline PretrainResult contrastive_pretrain(EncoderStackF& stack, const std::vector<Sample>& pool,
                                           const PretrainOptions& opt) {
    if (opt.batch_size < 2)
        throw ConfigError("contrastive batches need at least 2 pairs, got " +
                          std::to_string(opt.batch_size));
    if (opt.steps < 1) throw ConfigError("pretraining needs at least one step");
    if (static_cast<std::int64_t>(pool.size()) < opt.batch_size)
        throw ConfigError("sample pool smaller than one batch");
    if (stack.frozen()) throw ContractError("cannot pretrain a frozen encoder stack");

    std::vector<TensorF> params;
    for (auto& [name, p] : stack.named_params("enc")) {
        (void)name;
        params.push_back(p);
    }
    OptimizerF opt_state(OptimKind::adam, opt.lr, params);

    SplitMix64 rng(SplitMix64::derive(opt.data_seed, detail::kPretrainStream));
    PretrainResult result;
    result.losses.reserve(static_cast<std::size_t>(opt.steps));

    std::vector<int> labels(static_cast<std::size_t>(opt.batch_size));
    std::iota(labels.begin(), labels.end(), 0);

    for (int step = 0; step < opt.steps; ++step) {
        std::vector<const Sample*> batch;
        std::vector<std::vector<int>> captions;
        int tries = 0;
        while (static_cast<int>(batch.size()) < opt.batch_size) {
            if (++tries > 1000)
                throw InputError("could not assemble a batch of distinct captions after 1000 draws");
            const auto& s = pool[static_cast<std::size_t>(rng.next_below(pool.size()))];
            if (std::find(captions.begin(), captions.end(), s.caption) != captions.end()) continue;
            captions.push_back(s.caption);
            batch.push_back(&s);
        }

        TapeF tape;
        std::vector<TensorF> img_rows, txt_rows;
        for (const Sample* s : batch) {
            img_rows.push_back(stack.embed_image(&tape, s->patches));
            txt_rows.push_back(stack.embed_text(&tape, s->caption));
        }
        auto zi = concat_rows(&tape, img_rows);
        auto zt = concat_rows(&tape, txt_rows);
        auto temp = exp_elem(&tape, stack.log_inv_temp());
        auto logits = scale_by(&tape, matmul(&tape, zi, transpose(&tape, zt)), temp);
        auto loss_i = cross_entropy(&tape, logits, labels);
        auto loss_t = cross_entropy(&tape, transpose(&tape, logits), labels);
        auto loss = scale(&tape, add(&tape, loss_i, loss_t), 0.5f);

        const float loss_value = loss.data()[0];
        if (!std::isfinite(loss_value))
            throw EstimationError("contrastive loss became non-finite at step " +
                                  std::to_string(step));

        opt_state.zero_grad();
        tape.backward(loss);
        opt_state.step();
        result.losses.push_back(loss_value);
    }
    return result;
}

// Top-1 caption retrieval over held-out scenes: each image must pick its own
// caption out of the distinct captions present in the evaluation pool.
inline double retrieval_top1(const EncoderStackF& stack, const std::vector<Sample>& pool,
                             int count) {
    if (count < 2) throw ConfigError("retrieval needs at least 2 evaluation samples");
    if (static_cast<std::size_t>(count) > pool.size()) count = static_cast<int>(pool.size());
    std::vector<Sample> samples(pool.begin(), pool.begin() + count);

    std::map<std::vector<int>, int> caption_index;
    std::vector<TensorF> caption_embeds;
    for (const auto& s : samples) {
        if (caption_index.count(s.caption)) continue;
        caption_index[s.caption] = static_cast<int>(caption_embeds.size());
        caption_embeds.push_back(stack.embed_text(nullptr, s.caption));
    }

    int hits = 0;
    for (const auto& s : samples) {
        auto zi = stack.embed_image(nullptr, s.patches);
        int best = -1;
        double best_score = -1e30;
        for (std::size_t c = 0; c < caption_embeds.size(); ++c) {
            double score = 0;
            for (int j = 0; j < zi.cols(); ++j)
                score += static_cast<double>(zi.at(0, j)) * caption_embeds[c].at(0, j);
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(c);
            }
        }
        if (best == caption_index.at(s.caption)) ++hits;
    }
    return static_cast<double>(hits) / count;
}

}  // namespace emma
