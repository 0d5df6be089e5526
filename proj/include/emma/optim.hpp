#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "emma/errors.hpp"
#include "emma/tensor.hpp"

namespace emma {

enum class OptimKind { sgd, adam };

// Plain SGD or Adam over an explicit parameter list. Parameters are aliases
// (shared buffers), so stepping here updates the model that registered them.
template <typename S>
class OptimizerT {
public:
    OptimizerT(OptimKind kind, S lr, std::vector<TensorT<S>> params, S beta1 = S(0.9),
               S beta2 = S(0.999), S eps = S(1e-8))
        : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), params_(std::move(params)) {
        if (lr_ <= S(0)) throw ConfigError("learning rate must be positive");
        if (kind_ == OptimKind::adam) {
            m_.reserve(params_.size());
            v_.reserve(params_.size());
            for (const auto& p : params_) {
                m_.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
                v_.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
            }
        }
        for (auto& p : params_) p.set_requires_grad(true);
    }

    void step() {
        ++step_count_;
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.has_grad())
                throw ContractError("optimizer step with absent gradient on parameter " +
                                    std::to_string(pi) + " " + p.shape_str());
            const auto& g = p.grad();
            auto& w = p.data();
            if (kind_ == OptimKind::sgd) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
            } else {
                auto& m = m_[pi];
                auto& v = v_[pi];
                const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), static_cast<double>(step_count_)));
                const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), static_cast<double>(step_count_)));
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = beta1_ * m[i] + (S(1) - beta1_) * g[i];
                    v[i] = beta2_ * v[i] + (S(1) - beta2_) * g[i] * g[i];
                    const S mhat = m[i] / bc1;
                    const S vhat = v[i] / bc2;
                    w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                }
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.clear_grad();
    }

    std::int64_t step_count() const { return step_count_; }
    const std::vector<TensorT<S>>& params() const { return params_; }
    std::vector<TensorT<S>>& params() { return params_; }

private:
    OptimKind kind_;
    S lr_;
    S beta1_, beta2_, eps_;
    std::vector<TensorT<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    std::int64_t step_count_ = 0;
};

using OptimizerF = OptimizerT<float>;
using OptimizerD = OptimizerT<double>;

}  // namespace emma
