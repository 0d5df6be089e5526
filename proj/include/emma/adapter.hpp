#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emma/errors.hpp"
#include "emma/rng.hpp"
#include "emma/tensor.hpp"

namespace emma {

enum class AdapterKind { none, linear, cross_attention };

inline const char* to_string(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::none: return "none";
        case AdapterKind::linear: return "linear";
        case AdapterKind::cross_attention: return "xattn";
    }
    return "?";
}

inline AdapterKind adapter_kind_from_string(const std::string& s) {
    if (s == "none") return AdapterKind::none;
    if (s == "linear") return AdapterKind::linear;
    if (s == "xattn") return AdapterKind::cross_attention;
    throw ConfigError("unknown adapter kind '" + s + "' (expected none, linear, or xattn)");
}

// Affine map taking text-tower tokens [m x d_prime] into the visual width d.
template <typename S>
struct InstructionProjectionT {
    TensorT<S> w;  // [d_prime x d]
    TensorT<S> b;  // [1 x d]

    static InstructionProjectionT init(int d_prime, int d, SplitMix64& rng) {
        InstructionProjectionT p;
        p.w = TensorT<S>::randn(d_prime, d, rng,
                                S(1) / static_cast<S>(std::sqrt(static_cast<double>(d_prime))));
        p.b = TensorT<S>::zeros(1, d);
        return p;
    }

    TensorT<S> forward(TapeT<S>* tape, const TensorT<S>& t) const {
        return add_row_bias(tape, matmul(tape, t, w), b);
    }
};

// Token-mixing alignment: vtilde = W^T [v ; p(t)] with W in R^{(n+m) x n}.
// W starts as [I_n ; 0] so the adapter is an exact pass-through at
// initialization: the identity block copies the visual tokens and the zero
// block silences the instruction tokens until training opens the channel.
template <typename S>
struct VisualAlignmentT {
    TensorT<S> w;  // [(n+m) x n]
    int n = 0, m = 0;

    static VisualAlignmentT init(int n, int m) {
        VisualAlignmentT a;
        a.n = n;
        a.m = m;
        a.w = TensorT<S>::zeros(n + m, n);
        for (int i = 0; i < n; ++i) a.w.at(i, i) = S(1);
        return a;
    }

    TensorT<S> forward(TapeT<S>* tape, const TensorT<S>& v, const TensorT<S>& pt) const {
        if (v.rows() != n || pt.rows() != m || v.cols() != pt.cols())
            throw DimensionError("visual alignment expected [" + std::to_string(n) + "xd] and [" +
                                 std::to_string(m) + "xd], got " + v.shape_str() + " and " +
                                 pt.shape_str());
        auto stacked = concat_tokens(tape, v, pt);          // [(n+m) x d]
        return matmul(tape, transpose(tape, w), stacked);   // [n x d]
    }
};

// Ablation: single-head cross-attention from visual queries onto projected
// instruction tokens, added residually. The output projection starts at zero
// so this variant is also an exact pass-through at initialization.
template <typename S>
struct CrossAttentionAlignmentT {
    TensorT<S> wq, wk, wv, wo;  // all [d x d]

    static CrossAttentionAlignmentT init(int d, SplitMix64& rng) {
        CrossAttentionAlignmentT a;
        const S sc = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d)));
        a.wq = TensorT<S>::randn(d, d, rng, sc);
        a.wk = TensorT<S>::randn(d, d, rng, sc);
        a.wv = TensorT<S>::randn(d, d, rng, sc);
        a.wo = TensorT<S>::zeros(d, d);
        return a;
    }

    TensorT<S> forward(TapeT<S>* tape, const TensorT<S>& v, const TensorT<S>& pt) const {
        const int d = v.cols();
        auto q = matmul(tape, v, wq);
        auto k = matmul(tape, pt, wk);
        auto val = matmul(tape, pt, wv);
        auto scores = scale(tape, matmul(tape, q, transpose(tape, k)),
                            S(1) / static_cast<S>(std::sqrt(static_cast<double>(d))));
        auto attn = softmax_rows(tape, scores);
        auto mixed = matmul(tape, matmul(tape, attn, val), wo);
        return add(tape, v, mixed);
    }
};

// Number of trainable scalars for an adapter of the given kind and geometry.
// Both non-trivial kinds include the instruction projection (d_prime*d + d);
// the linear mixer adds its (n+m) x n matrix, the cross-attention ablation
// its four d x d maps.
inline std::int64_t adapter_param_count(AdapterKind kind, int n, int m, int d, int d_prime) {
    switch (kind) {
        case AdapterKind::none:
            return 0;
        case AdapterKind::linear:
            return static_cast<std::int64_t>(n + m) * n +
                   static_cast<std::int64_t>(d_prime) * d + d;
        case AdapterKind::cross_attention:
            return 4ll * d * d + static_cast<std::int64_t>(d_prime) * d + d;
    }
    return 0;
}

// The modality adapter under study: projects instruction tokens into the
// visual space and realigns the visual tokens conditioned on them.
template <typename S>
class AdapterT {
public:
    AdapterT(AdapterKind kind, int n, int m, int d, int d_prime, std::uint64_t seed)
        : kind_(kind), n_(n), m_(m), d_(d), d_prime_(d_prime) {
        if (n <= 0 || m <= 0 || d <= 0 || d_prime <= 0)
            throw ConfigError("adapter geometry must be positive");
        SplitMix64 rng(SplitMix64::derive(seed, kInitStream));
        if (kind_ != AdapterKind::none) {
            proj_ = InstructionProjectionT<S>::init(d_prime, d, rng);
            if (kind_ == AdapterKind::linear) {
                align_ = VisualAlignmentT<S>::init(n, m);
            } else {
                xattn_ = CrossAttentionAlignmentT<S>::init(d, rng);
            }
        }
        for (auto& [name, p] : named_params("adapt")) {
            (void)name;
            p.set_requires_grad(true);
        }
    }

    AdapterKind kind() const { return kind_; }
    int n() const { return n_; }
    int m() const { return m_; }
    int d() const { return d_; }
    int d_prime() const { return d_prime_; }

    // v: visual tokens [n x d]; t: text-tower tokens [m x d_prime].
    // Returns adapted visual tokens [n x d].
    TensorT<S> adapt(TapeT<S>* tape, const TensorT<S>& v, const TensorT<S>& t) const {
        if (!v.is_rank2() || v.rows() != n_ || v.cols() != d_)
            throw DimensionError("adapter expected visual tokens [" + std::to_string(n_) + "x" +
                                 std::to_string(d_) + "], got " + v.shape_str());
        if (kind_ == AdapterKind::none) return v;
        if (!t.is_rank2() || t.rows() != m_ || t.cols() != d_prime_)
            throw DimensionError("adapter expected text tokens [" + std::to_string(m_) + "x" +
                                 std::to_string(d_prime_) + "], got " + t.shape_str());
        auto pt = proj_.forward(tape, t);  // [m x d]
        if (kind_ == AdapterKind::linear) return align_.forward(tape, v, pt);
        return xattn_.forward(tape, v, pt);
    }

    // Projected instruction tokens [m x d]; the textual half of the mixer input.
    TensorT<S> project_instruction(TapeT<S>* tape, const TensorT<S>& t) const {
        if (kind_ == AdapterKind::none)
            throw ContractError("adapter kind none has no instruction projection");
        return proj_.forward(tape, t);
    }

    // Mixing weights W [(n+m) x n] of the linear alignment.
    const TensorT<S>& alignment_weights() const {
        if (kind_ != AdapterKind::linear)
            throw ContractError("alignment weights exist only for the linear adapter");
        return align_.w;
    }

    std::vector<std::pair<std::string, TensorT<S>>> named_params(const std::string& prefix) const {
        std::vector<std::pair<std::string, TensorT<S>>> out;
        if (kind_ == AdapterKind::none) return out;
        if (kind_ == AdapterKind::linear) out.emplace_back(prefix + ".align.w", align_.w);
        if (kind_ == AdapterKind::cross_attention) {
            out.emplace_back(prefix + ".xattn.wq", xattn_.wq);
            out.emplace_back(prefix + ".xattn.wk", xattn_.wk);
            out.emplace_back(prefix + ".xattn.wv", xattn_.wv);
            out.emplace_back(prefix + ".xattn.wo", xattn_.wo);
        }
        out.emplace_back(prefix + ".proj.w", proj_.w);
        out.emplace_back(prefix + ".proj.b", proj_.b);
        return out;
    }

    std::int64_t param_count() const {
        std::int64_t c = 0;
        for (const auto& [name, p] : named_params("adapt")) {
            (void)name;
            c += p.numel();
        }
        return c;
    }

private:
    static constexpr std::uint64_t kInitStream = 0xADA97E5;

    AdapterKind kind_;
    int n_, m_, d_, d_prime_;
    InstructionProjectionT<S> proj_;
    VisualAlignmentT<S> align_;
    CrossAttentionAlignmentT<S> xattn_;
};

using AdapterF = AdapterT<float>;

}  // namespace emma
