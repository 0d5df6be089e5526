#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "emma/errors.hpp"
#include "emma/rng.hpp"

namespace emma {

// Dense row-major tensor over scalar S (float for training, double for the
// gradient-check harness). Data and gradient buffers are shared between
// copies; a copy is a cheap alias, not a deep clone. The gradient buffer is
// "absent" while empty and is materialized on first accumulation.
template <typename S>
class TensorT {
public:
    using Scalar = S;

    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        std::int64_t n = 1;
        for (int e : shape_) {
            if (e <= 0) throw DimensionError("tensor extent must be positive, got " + std::to_string(e));
            n *= e;
        }
        if (shape_.empty()) throw DimensionError("tensor rank must be at least 1");
        data_ = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n), S(0));
        state_ = std::make_shared<State>();
    }

    static TensorT zeros(int rows, int cols) { return TensorT({rows, cols}); }

    static TensorT full(int rows, int cols, S value) {
        TensorT t({rows, cols});
        for (auto& v : *t.data_) v = value;
        return t;
    }

    static TensorT ones(int rows, int cols) { return full(rows, cols, S(1)); }

    static TensorT scalar(S value) { return full(1, 1, value); }

    static TensorT randn(int rows, int cols, SplitMix64& rng, S stddev = S(1)) {
        TensorT t({rows, cols});
        for (auto& v : *t.data_) v = static_cast<S>(rng.next_normal()) * stddev;
        return t;
    }

    static TensorT identity(int n) {
        TensorT t({n, n});
        for (int i = 0; i < n; ++i) t.at(i, i) = S(1);
        return t;
    }

    static TensorT from_rows(std::vector<std::vector<S>> rows) {
        if (rows.empty() || rows[0].empty()) throw DimensionError("from_rows: empty input");
        TensorT t({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())});
        for (int i = 0; i < t.rows(); ++i) {
            if (static_cast<int>(rows[i].size()) != t.cols())
                throw DimensionError("from_rows: ragged input");
            for (int j = 0; j < t.cols(); ++j) t.at(i, j) = rows[i][j];
        }
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    bool is_rank2() const { return shape_.size() == 2; }
    int rows() const { return shape_.at(0); }
    int cols() const { return shape_.at(1); }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int e : shape_) n *= e;
        return shape_.empty() ? 0 : n;
    }

    bool defined() const { return static_cast<bool>(data_); }

    S& at(int i, int j) { return (*data_)[static_cast<std::size_t>(i) * cols() + j]; }
    S at(int i, int j) const { return (*data_)[static_cast<std::size_t>(i) * cols() + j]; }

    std::vector<S>& data() { return *data_; }
    const std::vector<S>& data() const { return *data_; }

    bool requires_grad() const { return state_ && state_->requires_grad; }

    TensorT& set_requires_grad(bool on) {
        state_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return state_ && !state_->grad.empty(); }

    // Gradient buffer, materialized (zero-filled) on demand. Shared across copies.
    std::vector<S>& grad_ref() {
        if (state_->grad.empty()) state_->grad.assign(static_cast<std::size_t>(numel()), S(0));
        return state_->grad;
    }

    const std::vector<S>& grad() const {
        if (!has_grad()) throw ContractError("gradient is absent");
        return state_->grad;
    }

    void clear_grad() {
        if (state_) state_->grad.clear();
    }

    // Tape node handle; -1 until the tensor joins a tape. Shared across copies.
    int node_id() const { return state_ ? state_->node : -1; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    bool same_buffer(const TensorT& other) const { return data_ == other.data_; }

private:
    template <typename T>
    friend class TapeT;

    // Autodiff state shared by all copies of a tensor: the gradient buffer
    // (empty means "absent"), the tape node handle plus the serial of the
    // tape that issued it, and the leaf flag.
    struct State {
        std::vector<S> grad;
        int node = -1;
        std::uint64_t tape_serial = 0;
        bool requires_grad = false;
    };

    std::vector<int> shape_;
    std::shared_ptr<std::vector<S>> data_;
    std::shared_ptr<State> state_;
};

template <typename To, typename From>
TensorT<To> cast_tensor(const TensorT<From>& src) {
    TensorT<To> out(src.shape());
    for (std::int64_t i = 0; i < src.numel(); ++i)
        out.data()[static_cast<std::size_t>(i)] = static_cast<To>(src.data()[static_cast<std::size_t>(i)]);
    return out;
}

// One recorded operation: kind, node ids of differentiable inputs (-1 marks a
// constant), the output tensor, and the closure that applies the chain rule.
template <typename S>
struct TapeOpT {
    const char* kind;
    std::vector<int> input_ids;
    int output_id;
    TensorT<S> output;
    std::function<void()> backward;
};

// Per-training-step record of operations in execution order. Appending in
// execution order keeps the list topological: inputs precede consumers.
template <typename S>
class TapeT {
public:
    void record(const char* kind, std::initializer_list<const TensorT<S>*> inputs,
                TensorT<S>& output, std::function<void()> backward) {
        record_many(kind, std::vector<const TensorT<S>*>(inputs), output, std::move(backward));
    }

    void record_many(const char* kind, const std::vector<const TensorT<S>*>& inputs,
                     TensorT<S>& output, std::function<void()> backward) {
        TapeOpT<S> op;
        op.kind = kind;
        for (const TensorT<S>* in : inputs) {
            if (in->requires_grad()) {
                if (in->state_->tape_serial != serial_ || in->state_->node < 0) {
                    in->state_->node = next_id_++;  // leaf joins this tape
                    in->state_->tape_serial = serial_;
                }
                op.input_ids.push_back(in->state_->node);
            } else {
                op.input_ids.push_back(-1);  // constant: never differentiated
            }
        }
        output.set_requires_grad(true);
        output.state_->node = next_id_++;
        output.state_->tape_serial = serial_;
        op.output_id = output.state_->node;
        op.output = output;
        op.backward = std::move(backward);
        ops_.push_back(std::move(op));
    }

    // Reverse sweep from a scalar loss. Gradients of intermediates are
    // recomputed each call; leaf gradients accumulate across calls.
    void backward(const TensorT<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + loss.shape_str());
        const int loss_id =
            (loss.state_ && loss.state_->tape_serial == serial_) ? loss.state_->node : -1;
        bool found = false;
        for (const auto& op : ops_)
            if (op.output_id == loss_id) { found = true; break; }
        if (loss_id < 0 || !found)
            throw ContractError("loss was not produced on this tape");

        for (auto& op : ops_) op.output.clear_grad();
        for (auto& op : ops_) {
            if (op.output_id == loss_id) op.output.grad_ref()[0] = S(1);
        }
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            if (!it->output.has_grad()) continue;  // unreachable from the loss
            it->backward();
        }
    }

    std::size_t size() const { return ops_.size(); }

private:
    static std::uint64_t fresh_serial() {
        static std::uint64_t counter = 0;
        return ++counter;
    }

    std::vector<TapeOpT<S>> ops_;
    int next_id_ = 0;
    std::uint64_t serial_ = fresh_serial();
};

namespace detail {

template <typename S>
inline void require_rank2(const TensorT<S>& t, const char* op) {
    if (!t.defined() || !t.is_rank2())
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor");
}

template <typename S>
inline bool should_record(const TapeT<S>* tape, std::initializer_list<const TensorT<S>*> inputs) {
    if (!tape) return false;
    for (const TensorT<S>* in : inputs)
        if (in->requires_grad()) return true;
    return false;
}

template <typename S>
inline void accumulate(TensorT<S>& t, const std::vector<S>& contribution) {
    auto& g = t.grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations. Every op takes an optional tape; passing nullptr evaluates
// without recording (inference).
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner extents differ: " + a.shape_str() + " vs " + b.shape_str());
    const int p = a.rows(), q = a.cols(), r = b.cols();
    TensorT<S> c({p, r});
    for (int i = 0; i < p; ++i) {
        for (int k = 0; k < q; ++k) {
            const S aik = a.at(i, k);
            if (aik == S(0)) continue;
            S* crow = &c.at(i, 0);
            const S* brow = &const_cast<TensorT<S>&>(b).at(k, 0);
            for (int j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
    if (detail::should_record(tape, {&a, &b})) {
        TensorT<S> ca = a, cb = b, cc = c;
        tape->record("matmul", {&a, &b}, c, [ca, cb, cc]() mutable {
            const auto& gc = cc.grad();
            const int p2 = ca.rows(), q2 = ca.cols(), r2 = cb.cols();
            if (ca.requires_grad()) {
                auto& ga = ca.grad_ref();
                for (int i = 0; i < p2; ++i)
                    for (int k = 0; k < q2; ++k) {
                        S acc = S(0);
                        for (int j = 0; j < r2; ++j)
                            acc += gc[static_cast<std::size_t>(i) * r2 + j] * cb.at(k, j);
                        ga[static_cast<std::size_t>(i) * q2 + k] += acc;
                    }
            }
            if (cb.requires_grad()) {
                auto& gb = cb.grad_ref();
                for (int k = 0; k < q2; ++k)
                    for (int i = 0; i < p2; ++i) {
                        const S aik = ca.at(i, k);
                        if (aik == S(0)) continue;
                        for (int j = 0; j < r2; ++j)
                            gb[static_cast<std::size_t>(k) * r2 + j] += aik * gc[static_cast<std::size_t>(i) * r2 + j];
                    }
            }
        });
    }
    return c;
}

template <typename S>
TensorT<S> transpose(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "transpose");
    TensorT<S> y({x.cols(), x.rows()});
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) y.at(j, i) = x.at(i, j);
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("transpose", {&x}, y, [cx, cy]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            for (int i = 0; i < cx.rows(); ++i)
                for (int j = 0; j < cx.cols(); ++j)
                    gx[static_cast<std::size_t>(i) * cx.cols() + j] +=
                        gy[static_cast<std::size_t>(j) * cx.rows() + i];
        });
    }
    return y;
}

template <typename S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank2(a, "add");
    detail::require_rank2(b, "add");
    if (a.shape() != b.shape())
        throw DimensionError("add: shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    TensorT<S> y(a.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
    if (detail::should_record(tape, {&a, &b})) {
        TensorT<S> ca = a, cb = b, cy = y;
        tape->record("add", {&a, &b}, y, [ca, cb, cy]() mutable {
            const auto& gy = cy.grad();
            if (ca.requires_grad()) detail::accumulate(ca, gy);
            if (cb.requires_grad()) detail::accumulate(cb, gy);
        });
    }
    return y;
}

template <typename S>
TensorT<S> mul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank2(a, "mul");
    detail::require_rank2(b, "mul");
    if (a.shape() != b.shape())
        throw DimensionError("mul: shapes differ: " + a.shape_str() + " vs " + b.shape_str());
    TensorT<S> y(a.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] = a.data()[i] * b.data()[i];
    if (detail::should_record(tape, {&a, &b})) {
        TensorT<S> ca = a, cb = b, cy = y;
        tape->record("mul", {&a, &b}, y, [ca, cb, cy]() mutable {
            const auto& gy = cy.grad();
            if (ca.requires_grad()) {
                auto& ga = ca.grad_ref();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * cb.data()[i];
            }
            if (cb.requires_grad()) {
                auto& gb = cb.grad_ref();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * ca.data()[i];
            }
        });
    }
    return y;
}

// y = x + ones(rows) * bias; the only broadcast in the op set.
template <typename S>
TensorT<S> add_row_bias(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& bias) {
    detail::require_rank2(x, "add_row_bias");
    detail::require_rank2(bias, "add_row_bias");
    if (bias.rows() != 1 || bias.cols() != x.cols())
        throw DimensionError("add_row_bias: bias " + bias.shape_str() + " does not match " + x.shape_str());
    TensorT<S> y(x.shape());
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) y.at(i, j) = x.at(i, j) + bias.at(0, j);
    if (detail::should_record(tape, {&x, &bias})) {
        TensorT<S> cx = x, cb = bias, cy = y;
        tape->record("add_row_bias", {&x, &bias}, y, [cx, cb, cy]() mutable {
            const auto& gy = cy.grad();
            if (cx.requires_grad()) detail::accumulate(cx, gy);
            if (cb.requires_grad()) {
                auto& gb = cb.grad_ref();
                for (int i = 0; i < cy.rows(); ++i)
                    for (int j = 0; j < cy.cols(); ++j)
                        gb[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(i) * cy.cols() + j];
            }
        });
    }
    return y;
}

template <typename S>
TensorT<S> scale(TapeT<S>* tape, const TensorT<S>& x, S factor) {
    detail::require_rank2(x, "scale");
    TensorT<S> y(x.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] = x.data()[i] * factor;
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("scale", {&x}, y, [cx, cy, factor]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
        });
    }
    return y;
}

// y = s * x where s is a [1x1] tensor (e.g. a learnable temperature).
template <typename S>
TensorT<S> scale_by(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& s) {
    detail::require_rank2(x, "scale_by");
    if (s.numel() != 1) throw DimensionError("scale_by: scale must be [1x1], got " + s.shape_str());
    const S f = s.data()[0];
    TensorT<S> y(x.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] = x.data()[i] * f;
    if (detail::should_record(tape, {&x, &s})) {
        TensorT<S> cx = x, cs = s, cy = y;
        tape->record("scale_by", {&x, &s}, y, [cx, cs, cy, f]() mutable {
            const auto& gy = cy.grad();
            if (cx.requires_grad()) {
                auto& gx = cx.grad_ref();
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * f;
            }
            if (cs.requires_grad()) {
                S acc = S(0);
                for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * cx.data()[i];
                cs.grad_ref()[0] += acc;
            }
        });
    }
    return y;
}

template <typename S>
TensorT<S> relu(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "relu");
    TensorT<S> y(x.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("relu", {&x}, y, [cx, cy]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            for (std::size_t i = 0; i < gy.size(); ++i)
                if (cx.data()[i] > S(0)) gx[i] += gy[i];
        });
    }
    return y;
}

template <typename S>
TensorT<S> exp_elem(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "exp_elem");
    TensorT<S> y(x.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] = std::exp(x.data()[i]);
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("exp_elem", {&x}, y, [cx, cy]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * cy.data()[i];
        });
    }
    return y;
}

// Rows of each input stacked in order; all inputs share the feature width.
template <typename S>
TensorT<S> concat_rows(TapeT<S>* tape, const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    int total_rows = 0;
    const int d = parts[0].defined() && parts[0].is_rank2() ? parts[0].cols() : -1;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != d)
            throw DimensionError("concat_rows: feature widths differ: " + parts[0].shape_str() +
                                 " vs " + p.shape_str());
        total_rows += p.rows();
    }
    TensorT<S> y({total_rows, d});
    int row = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < p.rows(); ++i)
            for (int j = 0; j < d; ++j) y.at(row + i, j) = p.at(i, j);
        row += p.rows();
    }
    bool any_grad = false;
    for (const auto& p : parts) any_grad |= p.requires_grad();
    if (tape && any_grad) {
        std::vector<const TensorT<S>*> ptrs;
        for (const auto& p : parts) ptrs.push_back(&p);
        std::vector<TensorT<S>> cparts = parts;
        TensorT<S> cy = y;
        // record() takes an initializer_list; register inputs manually via a
        // two-input split is not possible here, so use the vector overload.
        tape->record_many("concat_rows", ptrs, y, [cparts, cy]() mutable {
            const auto& gy = cy.grad();
            int row0 = 0;
            for (auto& p : cparts) {
                if (p.requires_grad()) {
                    auto& gp = p.grad_ref();
                    const int d2 = p.cols();
                    for (int i = 0; i < p.rows(); ++i)
                        for (int j = 0; j < d2; ++j)
                            gp[static_cast<std::size_t>(i) * d2 + j] +=
                                gy[static_cast<std::size_t>(row0 + i) * d2 + j];
                }
                row0 += p.rows();
            }
        });
    }
    return y;
}

// Visual tokens followed by textual tokens; the adapter's input layout.
template <typename S>
TensorT<S> concat_tokens(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_rank2(a, "concat_tokens");
    detail::require_rank2(b, "concat_tokens");
    if (a.cols() != b.cols())
        throw DimensionError("concat_tokens: feature widths differ: " + a.shape_str() + " vs " +
                             b.shape_str());
    return concat_rows(tape, std::vector<TensorT<S>>{a, b});
}

template <typename S>
TensorT<S> softmax_rows(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "softmax_rows");
    TensorT<S> y(x.shape());
    const int r = x.rows(), d = x.cols();
    for (int i = 0; i < r; ++i) {
        S mx = x.at(i, 0);
        for (int j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
        S sum = S(0);
        for (int j = 0; j < d; ++j) {
            const S e = std::exp(x.at(i, j) - mx);
            y.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < d; ++j) y.at(i, j) /= sum;
    }
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("softmax_rows", {&x}, y, [cx, cy]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            const int r2 = cy.rows(), d2 = cy.cols();
            for (int i = 0; i < r2; ++i) {
                S dot = S(0);
                for (int j = 0; j < d2; ++j)
                    dot += gy[static_cast<std::size_t>(i) * d2 + j] * cy.at(i, j);
                for (int j = 0; j < d2; ++j)
                    gx[static_cast<std::size_t>(i) * d2 + j] +=
                        cy.at(i, j) * (gy[static_cast<std::size_t>(i) * d2 + j] - dot);
            }
        });
    }
    return y;
}

// Row-wise normalization to mean 0 / unit variance, then y = xhat*gain + bias.
template <typename S>
TensorT<S> layer_norm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S eps = S(1e-6)) {
    detail::require_rank2(x, "layer_norm");
    detail::require_rank2(gain, "layer_norm");
    detail::require_rank2(bias, "layer_norm");
    const int r = x.rows(), d = x.cols();
    if (d < 2) throw DimensionError("layer_norm: feature extent must be >= 2, got " + x.shape_str());
    if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
        throw DimensionError("layer_norm: affine params must be [1x" + std::to_string(d) + "]");
    TensorT<S> y(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(static_cast<std::size_t>(r) * d);
    auto inv = std::make_shared<std::vector<S>>(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        S mean = S(0);
        for (int j = 0; j < d; ++j) mean += x.at(i, j);
        mean /= S(d);
        S var = S(0);
        for (int j = 0; j < d; ++j) {
            const S c = x.at(i, j) - mean;
            var += c * c;
        }
        var /= S(d);
        const S iv = S(1) / std::sqrt(var + eps);
        (*inv)[static_cast<std::size_t>(i)] = iv;
        for (int j = 0; j < d; ++j) {
            const S h = (x.at(i, j) - mean) * iv;
            (*xhat)[static_cast<std::size_t>(i) * d + j] = h;
            y.at(i, j) = h * gain.at(0, j) + bias.at(0, j);
        }
    }
    if (detail::should_record(tape, {&x, &gain, &bias})) {
        TensorT<S> cx = x, cg = gain, cb = bias, cy = y;
        tape->record("layer_norm", {&x, &gain, &bias}, y, [cx, cg, cb, cy, xhat, inv]() mutable {
            const auto& gy = cy.grad();
            const int r2 = cy.rows(), d2 = cy.cols();
            if (cg.requires_grad()) {
                auto& gg = cg.grad_ref();
                for (int i = 0; i < r2; ++i)
                    for (int j = 0; j < d2; ++j)
                        gg[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(i) * d2 + j] *
                                                           (*xhat)[static_cast<std::size_t>(i) * d2 + j];
            }
            if (cb.requires_grad()) {
                auto& gb = cb.grad_ref();
                for (int i = 0; i < r2; ++i)
                    for (int j = 0; j < d2; ++j)
                        gb[static_cast<std::size_t>(j)] += gy[static_cast<std::size_t>(i) * d2 + j];
            }
            if (cx.requires_grad()) {
                auto& gx = cx.grad_ref();
                for (int i = 0; i < r2; ++i) {
                    S sum_dh = S(0), sum_dh_h = S(0);
                    for (int j = 0; j < d2; ++j) {
                        const S dh = gy[static_cast<std::size_t>(i) * d2 + j] * cg.at(0, j);
                        const S h = (*xhat)[static_cast<std::size_t>(i) * d2 + j];
                        sum_dh += dh;
                        sum_dh_h += dh * h;
                    }
                    const S mean_dh = sum_dh / S(d2);
                    const S mean_dh_h = sum_dh_h / S(d2);
                    const S iv = (*inv)[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d2; ++j) {
                        const S dh = gy[static_cast<std::size_t>(i) * d2 + j] * cg.at(0, j);
                        const S h = (*xhat)[static_cast<std::size_t>(i) * d2 + j];
                        gx[static_cast<std::size_t>(i) * d2 + j] += iv * (dh - mean_dh - h * mean_dh_h);
                    }
                }
            }
        });
    }
    return y;
}

template <typename S>
TensorT<S> mean_pool_rows(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "mean_pool_rows");
    const int r = x.rows(), d = x.cols();
    TensorT<S> y({1, d});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < d; ++j) y.at(0, j) += x.at(i, j);
    for (int j = 0; j < d; ++j) y.at(0, j) /= S(r);
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("mean_pool_rows", {&x}, y, [cx, cy]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            const int r2 = cx.rows(), d2 = cx.cols();
            for (int i = 0; i < r2; ++i)
                for (int j = 0; j < d2; ++j)
                    gx[static_cast<std::size_t>(i) * d2 + j] += gy[static_cast<std::size_t>(j)] / S(r2);
        });
    }
    return y;
}

// y[0,j] = sum_i w[i,0] * x[i,j]; used for mask-weighted pooling.
template <typename S>
TensorT<S> weighted_sum_rows(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& w) {
    detail::require_rank2(x, "weighted_sum_rows");
    detail::require_rank2(w, "weighted_sum_rows");
    if (w.cols() != 1 || w.rows() != x.rows())
        throw DimensionError("weighted_sum_rows: weights " + w.shape_str() + " do not match " +
                             x.shape_str());
    const int r = x.rows(), d = x.cols();
    TensorT<S> y({1, d});
    for (int i = 0; i < r; ++i) {
        const S wi = w.at(i, 0);
        if (wi == S(0)) continue;
        for (int j = 0; j < d; ++j) y.at(0, j) += wi * x.at(i, j);
    }
    if (detail::should_record(tape, {&x, &w})) {
        TensorT<S> cx = x, cw = w, cy = y;
        tape->record("weighted_sum_rows", {&x, &w}, y, [cx, cw, cy]() mutable {
            const auto& gy = cy.grad();
            const int r2 = cx.rows(), d2 = cx.cols();
            if (cx.requires_grad()) {
                auto& gx = cx.grad_ref();
                for (int i = 0; i < r2; ++i) {
                    const S wi = cw.at(i, 0);
                    for (int j = 0; j < d2; ++j)
                        gx[static_cast<std::size_t>(i) * d2 + j] += wi * gy[static_cast<std::size_t>(j)];
                }
            }
            if (cw.requires_grad()) {
                auto& gw = cw.grad_ref();
                for (int i = 0; i < r2; ++i) {
                    S acc = S(0);
                    for (int j = 0; j < d2; ++j) acc += cx.at(i, j) * gy[static_cast<std::size_t>(j)];
                    gw[static_cast<std::size_t>(i)] += acc;
                }
            }
        });
    }
    return y;
}

// y[i,:] = table[ids[i],:]; backward scatter-adds into the table.
template <typename S>
TensorT<S> gather_rows(TapeT<S>* tape, const TensorT<S>& table, const std::vector<int>& ids) {
    detail::require_rank2(table, "gather_rows");
    if (ids.empty()) throw DimensionError("gather_rows: empty id list");
    for (int id : ids)
        if (id < 0 || id >= table.rows())
            throw IndexError("gather_rows: id " + std::to_string(id) + " outside [0, " +
                             std::to_string(table.rows()) + ")");
    const int d = table.cols();
    TensorT<S> y({static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j) y.at(static_cast<int>(i), j) = table.at(ids[i], j);
    if (detail::should_record(tape, {&table})) {
        TensorT<S> ct = table, cy = y;
        tape->record("gather_rows", {&table}, y, [ct, cy, ids]() mutable {
            auto& gt = ct.grad_ref();
            const auto& gy = cy.grad();
            const int d2 = ct.cols();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d2; ++j)
                    gt[static_cast<std::size_t>(ids[i]) * d2 + j] += gy[i * d2 + j];
        });
    }
    return y;
}

template <typename S>
TensorT<S> sum_all(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "sum_all");
    TensorT<S> y({1, 1});
    for (const S v : x.data()) y.data()[0] += v;
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("sum_all", {&x}, y, [cx, cy]() mutable {
            auto& gx = cx.grad_ref();
            const S g = cy.grad()[0];
            for (auto& v : gx) v += g;
        });
    }
    return y;
}

// Rows scaled to unit Euclidean norm (with a tiny epsilon under the sqrt).
template <typename S>
TensorT<S> l2_normalize_rows(TapeT<S>* tape, const TensorT<S>& x) {
    detail::require_rank2(x, "l2_normalize_rows");
    const int r = x.rows(), d = x.cols();
    TensorT<S> y(x.shape());
    auto norms = std::make_shared<std::vector<S>>(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        S s = S(0);
        for (int j = 0; j < d; ++j) s += x.at(i, j) * x.at(i, j);
        const S nrm = std::sqrt(s + S(1e-12));
        (*norms)[static_cast<std::size_t>(i)] = nrm;
        for (int j = 0; j < d; ++j) y.at(i, j) = x.at(i, j) / nrm;
    }
    if (detail::should_record(tape, {&x})) {
        TensorT<S> cx = x, cy = y;
        tape->record("l2_normalize_rows", {&x}, y, [cx, cy, norms]() mutable {
            auto& gx = cx.grad_ref();
            const auto& gy = cy.grad();
            const int r2 = cy.rows(), d2 = cy.cols();
            for (int i = 0; i < r2; ++i) {
                S dot = S(0);
                for (int j = 0; j < d2; ++j)
                    dot += gy[static_cast<std::size_t>(i) * d2 + j] * cy.at(i, j);
                const S nrm = (*norms)[static_cast<std::size_t>(i)];
                for (int j = 0; j < d2; ++j)
                    gx[static_cast<std::size_t>(i) * d2 + j] +=
                        (gy[static_cast<std::size_t>(i) * d2 + j] - cy.at(i, j) * dot) / nrm;
            }
        });
    }
    return y;
}

// Mean negative log-softmax of the true class over the batch.
template <typename S>
TensorT<S> cross_entropy(TapeT<S>* tape, const TensorT<S>& logits, const std::vector<int>& labels) {
    detail::require_rank2(logits, "cross_entropy");
    const int b = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != b)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(b) + " rows");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= c)
            throw IndexError("cross_entropy: label " + std::to_string(lbl) + " outside [0, " +
                             std::to_string(c) + ")");
    auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(b) * c);
    S loss = S(0);
    for (int i = 0; i < b; ++i) {
        S mx = logits.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        S sum = S(0);
        for (int j = 0; j < c; ++j) {
            const S e = std::exp(logits.at(i, j) - mx);
            (*probs)[static_cast<std::size_t>(i) * c + j] = e;
            sum += e;
        }
        for (int j = 0; j < c; ++j) (*probs)[static_cast<std::size_t>(i) * c + j] /= sum;
        loss -= std::log((*probs)[static_cast<std::size_t>(i) * c + labels[static_cast<std::size_t>(i)]]);
    }
    TensorT<S> y = TensorT<S>::scalar(loss / S(b));
    if (detail::should_record(tape, {&logits})) {
        TensorT<S> cl = logits, cy = y;
        tape->record("cross_entropy", {&logits}, y, [cl, cy, probs, labels]() mutable {
            auto& gl = cl.grad_ref();
            const S g = cy.grad()[0];
            const int b2 = cl.rows(), c2 = cl.cols();
            for (int i = 0; i < b2; ++i)
                for (int j = 0; j < c2; ++j) {
                    S p = (*probs)[static_cast<std::size_t>(i) * c2 + j];
                    if (j == labels[static_cast<std::size_t>(i)]) p -= S(1);
                    gl[static_cast<std::size_t>(i) * c2 + j] += g * p / S(b2);
                }
        });
    }
    return y;
}

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;
using TapeF = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace emma
