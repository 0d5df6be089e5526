#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "emma/adapter.hpp"
#include "emma/config.hpp"
#include "emma/dataset_io.hpp"
#include "emma/encoder.hpp"
#include "emma/errors.hpp"
#include "emma/optim.hpp"
#include "emma/pretrain.hpp"
#include "emma/world.hpp"

namespace emma {

// Answer head over pooled features: a small MLP (or a linear map when
// hidden == 0) into the answer classes.
template <typename S>
class ReadoutT {
public:
    ReadoutT(ReadoutMode mode, int d, int hidden, int classes, std::uint64_t seed)
        : mode_(mode), d_(d), hidden_(hidden), classes_(classes) {
        if (d <= 0 || hidden < 0 || classes < 2) throw ConfigError("degenerate readout geometry");
        SplitMix64 rng(SplitMix64::derive(seed, kInitStream));
        const int in = input_width();
        if (hidden_ > 0) {
            w1_ = TensorT<S>::randn(in, hidden_, rng,
                                    S(1) / static_cast<S>(std::sqrt(static_cast<double>(in))));
            b1_ = TensorT<S>::zeros(1, hidden_);
            w2_ = TensorT<S>::randn(hidden_, classes_, rng,
                                    S(1) / static_cast<S>(std::sqrt(static_cast<double>(hidden_))));
            b2_ = TensorT<S>::zeros(1, classes_);
        } else {
            w2_ = TensorT<S>::randn(in, classes_, rng,
                                    S(1) / static_cast<S>(std::sqrt(static_cast<double>(in))));
            b2_ = TensorT<S>::zeros(1, classes_);
        }
        for (auto& [name, p] : named_params("readout")) {
            (void)name;
            p.set_requires_grad(true);
        }
    }

    ReadoutMode mode() const { return mode_; }
    int input_width() const { return mode_ == ReadoutMode::visual_only ? d_ : 2 * d_; }
    int classes() const { return classes_; }

    // features: [batch x input_width] -> logits [batch x classes].
    TensorT<S> forward(TapeT<S>* tape, const TensorT<S>& features) const {
        if (!features.is_rank2() || features.cols() != input_width())
            throw DimensionError("readout expected [*x" + std::to_string(input_width()) +
                                 "], got " + features.shape_str());
        if (hidden_ > 0) {
            auto h = relu(tape, add_row_bias(tape, matmul(tape, features, w1_), b1_));
            return add_row_bias(tape, matmul(tape, h, w2_), b2_);
        }
        return add_row_bias(tape, matmul(tape, features, w2_), b2_);
    }

    std::vector<std::pair<std::string, TensorT<S>>> named_params(const std::string& prefix) const {
        std::vector<std::pair<std::string, TensorT<S>>> out;
        if (hidden_ > 0) {
            out.emplace_back(prefix + ".w1", w1_);
            out.emplace_back(prefix + ".b1", b1_);
        }
        out.emplace_back(prefix + ".w2", w2_);
        out.emplace_back(prefix + ".b2", b2_);
        return out;
    }

private:
    static constexpr std::uint64_t kInitStream = 0x9EAD07;

    ReadoutMode mode_;
    int d_, hidden_, classes_;
    TensorT<S> w1_, b1_, w2_, b2_;
};

using ReadoutF = ReadoutT<float>;

// Frozen-encoder representations of one sample, cached once per split so the
// adapter stages never re-run the towers.
struct EncodedSample {
    TensorF v;        // visual tokens at the configured tap [n x d]
    TensorF t;        // text tokens [m x d_prime]
    TensorF mask;     // [m x 1]
    int real_tokens = 0;
    int answer = 0;
    bool ambiguous = false;
};

std::vector<EncodedSample> encode_split(const EncoderStackF& stack,
                                        const std::vector<Sample>& samples, LayerTap tap);

struct StepMetric {
    int step = 0;       // global step across both stages
    int stage = 1;      // 1: adapter only, 2: adapter + readout
    float loss = 0.0f;
    bool has_eval = false;
    double acc_ambiguous = 0.0;
    double acc_unambiguous = 0.0;
    double acc_all = 0.0;
};

struct EvalResult {
    double acc_ambiguous = 0.0;
    double acc_unambiguous = 0.0;
    double acc_all = 0.0;
    std::int64_t n_ambiguous = 0;
    std::int64_t n_unambiguous = 0;
    std::vector<std::int64_t> confusion;  // [classes x classes], true * classes + predicted
    int classes = 0;
};

// Pooled feature row(s) for the readout from cached encodings: the mean of
// the adapted visual tokens, optionally joined with the mean of the projected
// instruction tokens over real positions.
TensorF readout_features(TapeF* tape, const AdapterF& adapter, ReadoutMode mode,
                         const EncodedSample& sample);

EvalResult evaluate_cached(const AdapterF& adapter, const ReadoutF& readout,
                           const std::vector<EncodedSample>& eval_set, int classes);

// Full model bundle produced by training.
struct TrainedModel {
    RunConfig config;
    EncoderStackF stack;
    AdapterF adapter;
    ReadoutF readout;
    std::vector<float> pretrain_losses;
    double retrieval = 0.0;
    std::vector<StepMetric> metrics;
    EvalResult final_eval;
};

// Builds an adapter / readout with the shapes and seed derivation used by
// train_pipeline, so checkpointed parameters can be loaded back into models
// of identical layout.
AdapterF make_model_adapter(const RunConfig& config);
ReadoutF make_model_readout(const RunConfig& config);

// Every named parameter of the full model, in checkpoint order:
// encoders ("enc.*"), adapter ("adapt.*"), readout ("readout.*").
std::vector<std::pair<std::string, TensorF>> model_named_params(const EncoderStackF& stack,
                                                                const AdapterF& adapter,
                                                                const ReadoutF& readout);

// Pretrains and freezes the encoders, then runs the two adapter stages.
// Stage 1 updates only the adapter against a fixed random readout; stage 2
// updates adapter and readout jointly.
TrainedModel train_pipeline(const RunConfig& config, const Dataset& train, const Dataset& eval,
                            const std::function<void(const std::string&)>& log = nullptr);

// The adapter stages alone, for a stack that is already pretrained+frozen.
std::vector<StepMetric> train_adapter_stages(const RunConfig& config, const EncoderStackF& stack,
                                             AdapterF& adapter, ReadoutF& readout,
                                             const Dataset& train, const Dataset& eval,
                                             const std::function<void(const std::string&)>& log =
                                                 nullptr);

// Serializes step metrics as CSV ("step,stage,loss,acc_ambiguous,...").
std::string metrics_to_csv(const std::vector<StepMetric>& metrics);

}  // namespace emma
