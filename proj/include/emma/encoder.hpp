#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emma/errors.hpp"
#include "emma/optim.hpp"
#include "emma/rng.hpp"
#include "emma/tensor.hpp"

namespace emma {

// Which tower block supplies the token representations handed to the adapter.
enum class LayerTap { final, penultimate };

inline const char* to_string(LayerTap tap) {
    return tap == LayerTap::final ? "final" : "penultimate";
}

inline LayerTap layer_tap_from_string(const std::string& s) {
    if (s == "final") return LayerTap::final;
    if (s == "penultimate") return LayerTap::penultimate;
    throw ConfigError("unknown layer tap '" + s + "' (expected final or penultimate)");
}

struct EncoderConfig {
    int grid_h = 4;
    int grid_w = 4;
    int patch_width = 12;   // per-patch input features
    int m = 12;             // max textual tokens
    int d = 32;             // vision tower width
    int d_prime = 24;       // text tower width
    int depth = 2;          // blocks per tower
    int vocab_size = 64;
    int embed_dim = 24;     // shared contrastive embedding width
    int mlp_ratio = 4;

    int n() const { return grid_h * grid_w; }

    static EncoderConfig desk() { return EncoderConfig{}; }

    // Published-scale token geometry; used for parameter accounting only.
    static EncoderConfig paper_shape() {
        EncoderConfig c;
        c.grid_h = 24;
        c.grid_w = 24;  // n = 576
        c.m = 77;
        c.d = 1024;
        c.d_prime = 768;
        return c;
    }

    void validate() const {
        if (grid_h <= 0 || grid_w <= 0 || patch_width <= 0 || m <= 0 || d < 2 || d_prime < 2 ||
            vocab_size <= 1 || embed_dim <= 0 || mlp_ratio <= 0)
            throw ConfigError("encoder config has a non-positive or degenerate extent");
        if (depth < 2)
            throw ConfigError("encoder depth must be at least 2 so a penultimate tap exists, got " +
                              std::to_string(depth));
    }
};

// One pre-norm transformer block with a single attention head.
template <typename S>
struct TransformerBlockT {
    TensorT<S> ln1_gain, ln1_bias;
    TensorT<S> wq, wk, wv, wo;
    TensorT<S> ln2_gain, ln2_bias;
    TensorT<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    static TransformerBlockT init(int width, int mlp_ratio, SplitMix64& rng) {
        TransformerBlockT b;
        const S attn_scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(width)));
        b.ln1_gain = TensorT<S>::ones(1, width);
        b.ln1_bias = TensorT<S>::zeros(1, width);
        b.wq = TensorT<S>::randn(width, width, rng, attn_scale);
        b.wk = TensorT<S>::randn(width, width, rng, attn_scale);
        b.wv = TensorT<S>::randn(width, width, rng, attn_scale);
        b.wo = TensorT<S>::randn(width, width, rng, attn_scale);
        b.ln2_gain = TensorT<S>::ones(1, width);
        b.ln2_bias = TensorT<S>::zeros(1, width);
        const int hidden = width * mlp_ratio;
        b.mlp_w1 = TensorT<S>::randn(width, hidden, rng, attn_scale);
        b.mlp_b1 = TensorT<S>::zeros(1, hidden);
        b.mlp_w2 = TensorT<S>::randn(hidden, width, rng,
                                     S(1) / static_cast<S>(std::sqrt(static_cast<double>(hidden))));
        b.mlp_b2 = TensorT<S>::zeros(1, width);
        return b;
    }

    // key_mask_add: optional [tokens x tokens] additive mask (-1e9 on padded
    // key columns) applied to attention scores before the softmax.
    TensorT<S> forward(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>* key_mask_add) const {
        const int width = x.cols();
        auto h = layer_norm(tape, x, ln1_gain, ln1_bias);
        auto q = matmul(tape, h, wq);
        auto k = matmul(tape, h, wk);
        auto v = matmul(tape, h, wv);
        auto scores = scale(tape, matmul(tape, q, transpose(tape, k)),
                            S(1) / static_cast<S>(std::sqrt(static_cast<double>(width))));
        if (key_mask_add) scores = add(tape, scores, *key_mask_add);
        auto attn = softmax_rows(tape, scores);
        auto mixed = matmul(tape, matmul(tape, attn, v), wo);
        auto x1 = add(tape, x, mixed);
        auto h2 = layer_norm(tape, x1, ln2_gain, ln2_bias);
        auto mlp = matmul(tape, relu(tape, add_row_bias(tape, matmul(tape, h2, mlp_w1), mlp_b1)),
                          mlp_w2);
        return add(tape, x1, add_row_bias(tape, mlp, mlp_b2));
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, TensorT<S>>>& out) const {
        out.emplace_back(prefix + ".ln1.gain", ln1_gain);
        out.emplace_back(prefix + ".ln1.bias", ln1_bias);
        out.emplace_back(prefix + ".attn.wq", wq);
        out.emplace_back(prefix + ".attn.wk", wk);
        out.emplace_back(prefix + ".attn.wv", wv);
        out.emplace_back(prefix + ".attn.wo", wo);
        out.emplace_back(prefix + ".ln2.gain", ln2_gain);
        out.emplace_back(prefix + ".ln2.bias", ln2_bias);
        out.emplace_back(prefix + ".mlp.w1", mlp_w1);
        out.emplace_back(prefix + ".mlp.b1", mlp_b1);
        out.emplace_back(prefix + ".mlp.w2", mlp_w2);
        out.emplace_back(prefix + ".mlp.b2", mlp_b2);
    }
};

// Result of encoding one instruction: padded token matrix plus a column mask
// with 1 on real tokens and 0 on padding.
template <typename S>
struct TextEncodingT {
    TensorT<S> tokens;  // [m x d_prime]
    TensorT<S> mask;    // [m x 1]
    int real_tokens = 0;
};

// Frozen-after-pretraining dual encoder: a vision tower over patch grids and
// a text tower over token ids, with projection heads into a shared embedding
// space for contrastive training.
template <typename S>
class EncoderStackT {
public:
    EncoderStackT(EncoderConfig config, std::uint64_t seed) : cfg_(config) {
        cfg_.validate();
        SplitMix64 rng(SplitMix64::derive(seed, kInitStream));
        const S emb_scale = S(0.02);
        patch_proj_ = TensorT<S>::randn(cfg_.patch_width, cfg_.d, rng,
                                        S(1) / static_cast<S>(std::sqrt(double(cfg_.patch_width))));
        patch_bias_ = TensorT<S>::zeros(1, cfg_.d);
        vis_pos_ = TensorT<S>::randn(cfg_.n(), cfg_.d, rng, emb_scale);
        for (int i = 0; i < cfg_.depth; ++i)
            vis_blocks_.push_back(TransformerBlockT<S>::init(cfg_.d, cfg_.mlp_ratio, rng));
        tok_embed_ = TensorT<S>::randn(cfg_.vocab_size, cfg_.d_prime, rng, emb_scale);
        txt_pos_ = TensorT<S>::randn(cfg_.m, cfg_.d_prime, rng, emb_scale);
        for (int i = 0; i < cfg_.depth; ++i)
            txt_blocks_.push_back(TransformerBlockT<S>::init(cfg_.d_prime, cfg_.mlp_ratio, rng));
        vis_proj_ = TensorT<S>::randn(cfg_.d, cfg_.embed_dim, rng,
                                      S(1) / static_cast<S>(std::sqrt(double(cfg_.d))));
        txt_proj_ = TensorT<S>::randn(cfg_.d_prime, cfg_.embed_dim, rng,
                                      S(1) / static_cast<S>(std::sqrt(double(cfg_.d_prime))));
        log_inv_temp_ = TensorT<S>::scalar(static_cast<S>(std::log(1.0 / 0.07)));
        for (auto& [name, p] : named_params("enc")) {
            (void)name;
            p.set_requires_grad(true);
        }
    }

    const EncoderConfig& config() const { return cfg_; }

    // Token representations of one image at the requested tap: [n x d].
    TensorT<S> encode_image(TapeT<S>* tape, const TensorT<S>& patches, LayerTap tap) const {
        if (!patches.is_rank2() || patches.rows() != cfg_.n() || patches.cols() != cfg_.patch_width)
            throw DimensionError("encode_image: expected [" + std::to_string(cfg_.n()) + "x" +
                                 std::to_string(cfg_.patch_width) + "], got " + patches.shape_str());
        auto x = add(tape, add_row_bias(tape, matmul(tape, patches, patch_proj_), patch_bias_),
                     vis_pos_);
        const int stop = tap == LayerTap::final ? cfg_.depth : cfg_.depth - 1;
        for (int i = 0; i < stop; ++i) x = vis_blocks_[static_cast<std::size_t>(i)].forward(tape, x, nullptr);
        return x;
    }

    // Padded token representations of one instruction at the requested tap.
    TextEncodingT<S> encode_text(TapeT<S>* tape, const std::vector<int>& ids, LayerTap tap) const {
        if (static_cast<int>(ids.size()) > cfg_.m)
            throw InputError("encode_text: " + std::to_string(ids.size()) +
                             " tokens exceed the maximum of " + std::to_string(cfg_.m));
        for (int id : ids)
            if (id < 0 || id >= cfg_.vocab_size)
                throw InputError("encode_text: token id " + std::to_string(id) + " outside [0, " +
                                 std::to_string(cfg_.vocab_size) + ")");
        std::vector<int> padded(static_cast<std::size_t>(cfg_.m), 0);  // id 0 is padding
        for (std::size_t i = 0; i < ids.size(); ++i) padded[i] = ids[i];

        TextEncodingT<S> enc;
        enc.real_tokens = static_cast<int>(ids.size());
        enc.mask = TensorT<S>::zeros(cfg_.m, 1);
        for (std::size_t i = 0; i < ids.size(); ++i) enc.mask.at(static_cast<int>(i), 0) = S(1);

        TensorT<S> mask_add = TensorT<S>::zeros(cfg_.m, cfg_.m);
        for (int j = 0; j < cfg_.m; ++j)
            if (j >= enc.real_tokens)
                for (int i = 0; i < cfg_.m; ++i) mask_add.at(i, j) = S(-1e9);

        auto x = add(tape, gather_rows(tape, tok_embed_, padded), txt_pos_);
        const int stop = tap == LayerTap::final ? cfg_.depth : cfg_.depth - 1;
        for (int i = 0; i < stop; ++i)
            x = txt_blocks_[static_cast<std::size_t>(i)].forward(tape, x, &mask_add);
        enc.tokens = x;
        return enc;
    }

    // L2-normalized contrastive embedding of one image: [1 x embed_dim].
    TensorT<S> embed_image(TapeT<S>* tape, const TensorT<S>& patches) const {
        auto tokens = encode_image(tape, patches, LayerTap::final);
        return l2_normalize_rows(tape, matmul(tape, mean_pool_rows(tape, tokens), vis_proj_));
    }

    // L2-normalized contrastive embedding of one caption: [1 x embed_dim].
    TensorT<S> embed_text(TapeT<S>* tape, const std::vector<int>& ids) const {
        auto enc = encode_text(tape, ids, LayerTap::final);
        TensorT<S> pooled;
        if (enc.real_tokens == 0) {
            pooled = mean_pool_rows(tape, enc.tokens);
        } else {
            auto weights = scale(tape, enc.mask, S(1) / static_cast<S>(enc.real_tokens));
            pooled = weighted_sum_rows(tape, enc.tokens, weights);
        }
        return l2_normalize_rows(tape, matmul(tape, pooled, txt_proj_));
    }

    const TensorT<S>& log_inv_temp() const { return log_inv_temp_; }
    TensorT<S>& log_inv_temp() { return log_inv_temp_; }

    std::vector<std::pair<std::string, TensorT<S>>> named_params(const std::string& prefix) const {
        std::vector<std::pair<std::string, TensorT<S>>> out;
        out.emplace_back(prefix + ".vision.patch_proj.w", patch_proj_);
        out.emplace_back(prefix + ".vision.patch_proj.b", patch_bias_);
        out.emplace_back(prefix + ".vision.pos", vis_pos_);
        for (std::size_t i = 0; i < vis_blocks_.size(); ++i)
            vis_blocks_[i].collect_params(prefix + ".vision.block" + std::to_string(i), out);
        out.emplace_back(prefix + ".text.tok_embed", tok_embed_);
        out.emplace_back(prefix + ".text.pos", txt_pos_);
        for (std::size_t i = 0; i < txt_blocks_.size(); ++i)
            txt_blocks_[i].collect_params(prefix + ".text.block" + std::to_string(i), out);
        out.emplace_back(prefix + ".head.vis_proj", vis_proj_);
        out.emplace_back(prefix + ".head.txt_proj", txt_proj_);
        out.emplace_back(prefix + ".head.log_inv_temp", log_inv_temp_);
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, p] : named_params("enc")) {
            (void)name;
            n += p.numel();
        }
        return n;
    }

    bool frozen() const { return frozen_; }

    // Marks the stack immutable for the adapter stages: parameters stop
    // requiring gradients so any optimizer update attempt is a contract error.
    void freeze() {
        frozen_ = true;
        for (auto& [name, p] : named_params("enc")) {
            (void)name;
            p.set_requires_grad(false);
            p.clear_grad();
        }
    }

private:
    static constexpr std::uint64_t kInitStream = 0xE11C0DE5;

    EncoderConfig cfg_;
    TensorT<S> patch_proj_, patch_bias_, vis_pos_;
    std::vector<TransformerBlockT<S>> vis_blocks_;
    TensorT<S> tok_embed_, txt_pos_;
    std::vector<TransformerBlockT<S>> txt_blocks_;
    TensorT<S> vis_proj_, txt_proj_;
    TensorT<S> log_inv_temp_;
    bool frozen_ = false;
};

using EncoderStackF = EncoderStackT<float>;
using TextEncodingF = TextEncodingT<float>;

}  // namespace emma
