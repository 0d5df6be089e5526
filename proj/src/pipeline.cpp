#include "emma/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace emma {

namespace {

constexpr std::uint64_t kStageStream = 0x57A6E5;
constexpr std::uint64_t kReadoutStream = 0x9EAD;

void set_requires_grad(std::vector<std::pair<std::string, TensorF>> params, bool on) {
    for (auto& [name, p] : params) {
        (void)name;
        p.set_requires_grad(on);
        if (!on) p.clear_grad();
    }
}

std::vector<TensorF> bare_params(std::vector<std::pair<std::string, TensorF>> named) {
    std::vector<TensorF> out;
    out.reserve(named.size());
    for (auto& [name, p] : named) {
        (void)name;
        out.push_back(p);
    }
    return out;
}

}  // namespace

std::vector<EncodedSample> encode_split(const EncoderStackF& stack,
                                        const std::vector<Sample>& samples, LayerTap tap) {
    if (!stack.frozen())
        throw ContractError("refusing to cache encodings from an unfrozen encoder stack");
    std::vector<EncodedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        EncodedSample e;
        // The tap selects the visual representation; instruction tokens come
        // from the text tower's final block as in the contrastive head.
        e.v = stack.encode_image(nullptr, s.patches, tap);
        auto txt = stack.encode_text(nullptr, s.instruction, LayerTap::final);
        e.t = txt.tokens;
        e.mask = txt.mask;
        e.real_tokens = txt.real_tokens;
        e.answer = s.answer;
        e.ambiguous = s.ambiguous;
        out.push_back(std::move(e));
    }
    return out;
}

TensorF readout_features(TapeF* tape, const AdapterF& adapter, ReadoutMode mode,
                         const EncodedSample& sample) {
    auto vtilde = adapter.adapt(tape, sample.v, sample.t);
    auto pooled_v = mean_pool_rows(tape, vtilde);
    if (mode == ReadoutMode::visual_only) return pooled_v;
    if (adapter.kind() == AdapterKind::none)
        throw ConfigError("readout_mode visual_plus_instruction requires an adapter with an "
                          "instruction projection");
    auto pt = adapter.project_instruction(tape, sample.t);  // [m x d]
    TensorF pooled_t;
    if (sample.real_tokens == 0) {
        pooled_t = mean_pool_rows(tape, pt);
    } else {
        auto weights = scale(tape, sample.mask, 1.0f / static_cast<float>(sample.real_tokens));
        pooled_t = weighted_sum_rows(tape, pt, weights);
    }
    // [1 x d] + [1 x d] -> [1 x 2d]
    return transpose(tape, concat_tokens(tape, transpose(tape, pooled_v), transpose(tape, pooled_t)));
}

EvalResult evaluate_cached(const AdapterF& adapter, const ReadoutF& readout,
                           const std::vector<EncodedSample>& eval_set, int classes) {
    if (eval_set.empty()) throw ContractError("evaluation set is empty");
    EvalResult r;
    r.classes = classes;
    r.confusion.assign(static_cast<std::size_t>(classes) * classes, 0);
    std::int64_t hit_amb = 0, hit_unamb = 0;
    for (const auto& e : eval_set) {
        auto features = readout_features(nullptr, adapter, readout.mode(), e);
        auto logits = readout.forward(nullptr, features);
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (logits.at(0, c) > logits.at(0, best)) best = c;
        if (e.answer < 0 || e.answer >= classes)
            throw ContractError("evaluation answer " + std::to_string(e.answer) +
                                " outside the readout's " + std::to_string(classes) + " classes");
        ++r.confusion[static_cast<std::size_t>(e.answer) * classes + best];
        if (e.ambiguous) {
            ++r.n_ambiguous;
            hit_amb += best == e.answer;
        } else {
            ++r.n_unambiguous;
            hit_unamb += best == e.answer;
        }
    }
    r.acc_ambiguous = r.n_ambiguous ? static_cast<double>(hit_amb) / r.n_ambiguous : 0.0;
    r.acc_unambiguous = r.n_unambiguous ? static_cast<double>(hit_unamb) / r.n_unambiguous : 0.0;
    r.acc_all = static_cast<double>(hit_amb + hit_unamb) / static_cast<double>(eval_set.size());
    return r;
}

namespace {

// One optimization stage over cached encodings.
void run_stage(int stage, int steps, const RunConfig& cfg, const AdapterF& adapter,
               const ReadoutF& readout, OptimizerF& optimizer,
               const std::vector<EncodedSample>& train_set,
               const std::vector<EncodedSample>& eval_set, SplitMix64& rng, int& global_step,
               std::vector<StepMetric>& metrics,
               const std::function<void(const std::string&)>& log) {
    const int classes = readout.classes();
    for (int s = 0; s < steps; ++s) {
        TapeF tape;
        std::vector<TensorF> rows;
        std::vector<int> labels;
        rows.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& e = train_set[static_cast<std::size_t>(rng.next_below(train_set.size()))];
            rows.push_back(readout_features(&tape, adapter, readout.mode(), e));
            labels.push_back(e.answer);
        }
        auto batch = concat_rows(&tape, rows);
        auto logits = readout.forward(&tape, batch);
        auto loss = cross_entropy(&tape, logits, labels);
        const float loss_value = loss.data()[0];
        if (!std::isfinite(loss_value))
            throw EstimationError("training loss became non-finite at step " +
                                  std::to_string(global_step) + " (stage " +
                                  std::to_string(stage) + ")");
        optimizer.zero_grad();
        tape.backward(loss);
        optimizer.step();

        ++global_step;
        StepMetric m;
        m.step = global_step;
        m.stage = stage;
        m.loss = loss_value;
        const bool boundary = global_step % cfg.eval_every == 0 || s + 1 == steps;
        if (boundary) {
            auto ev = evaluate_cached(adapter, readout, eval_set, classes);
            m.has_eval = true;
            m.acc_ambiguous = ev.acc_ambiguous;
            m.acc_unambiguous = ev.acc_unambiguous;
            m.acc_all = ev.acc_all;
            if (log)
                log("stage " + std::to_string(stage) + " step " + std::to_string(global_step) +
                    " loss " + format_number(loss_value) + " acc_ambiguous " +
                    format_number(ev.acc_ambiguous) + " acc_all " + format_number(ev.acc_all));
        }
        metrics.push_back(m);
    }
}

}  // namespace

std::vector<StepMetric> train_adapter_stages(const RunConfig& config, const EncoderStackF& stack,
                                             AdapterF& adapter, ReadoutF& readout,
                                             const Dataset& train, const Dataset& eval,
                                             const std::function<void(const std::string&)>& log) {
    if (!stack.frozen())
        throw ContractError("adapter stages require a frozen encoder stack");
    if (train.master_seed == eval.master_seed)
        throw ConfigError("train and eval splits share the same master seed; their sample "
                          "streams would overlap");
    if (train.samples.empty() || eval.samples.empty())
        throw ConfigError("both splits need samples");

    auto train_cache = encode_split(stack, train.samples, config.layer_tap);
    auto eval_cache = encode_split(stack, eval.samples, config.layer_tap);

    std::vector<StepMetric> metrics;
    SplitMix64 rng(SplitMix64::derive(config.seed, kStageStream));
    int global_step = 0;

    // Stage 1: adapter only. The readout stays at its random initialization
    // and must not record gradients.
    set_requires_grad(readout.named_params("readout"), false);
    if (config.stage1_steps > 0) {
        if (adapter.kind() == AdapterKind::none) {
            if (log) log("stage 1 skipped: adapter kind none has no trainable parameters");
        } else {
            OptimizerF opt(OptimKind::adam, static_cast<float>(config.stage1_lr),
                           bare_params(adapter.named_params("adapt")));
            run_stage(1, config.stage1_steps, config, adapter, readout, opt,
                      train_cache, eval_cache, rng, global_step, metrics, log);
        }
    }
    set_requires_grad(readout.named_params("readout"), true);

    // Stage 2: adapter and readout jointly (readout alone for kind none).
    if (config.stage2_steps > 0) {
        auto params = bare_params(readout.named_params("readout"));
        for (auto& p : bare_params(adapter.named_params("adapt"))) params.push_back(p);
        OptimizerF opt(OptimKind::adam, static_cast<float>(config.stage2_lr), std::move(params));
        run_stage(2, config.stage2_steps, config, adapter, readout, opt,
                  train_cache, eval_cache, rng, global_step, metrics, log);
    }
    return metrics;
}

AdapterF make_model_adapter(const RunConfig& config) {
    const auto enc_cfg = config.encoder_config();
    return AdapterF(config.adapter, enc_cfg.n(), enc_cfg.m, enc_cfg.d, enc_cfg.d_prime,
                    config.seed);
}

ReadoutF make_model_readout(const RunConfig& config) {
    return ReadoutF(config.readout_mode, config.encoder_config().d, config.readout_hidden,
                    config.world_config().num_answers(),
                    SplitMix64::derive(config.seed, kReadoutStream));
}

std::vector<std::pair<std::string, TensorF>> model_named_params(const EncoderStackF& stack,
                                                                const AdapterF& adapter,
                                                                const ReadoutF& readout) {
    std::vector<std::pair<std::string, TensorF>> params = stack.named_params("enc");
    for (auto& entry : adapter.named_params("adapt")) params.push_back(std::move(entry));
    for (auto& entry : readout.named_params("readout")) params.push_back(std::move(entry));
    return params;
}

TrainedModel train_pipeline(const RunConfig& config, const Dataset& train, const Dataset& eval,
                            const std::function<void(const std::string&)>& log) {
    config.validate();
    EncoderStackF stack(config.encoder_config(), config.seed);

    PretrainOptions popt;
    popt.steps = config.pretrain_steps;
    popt.lr = static_cast<float>(config.pretrain_lr);
    popt.batch_size = config.pretrain_batch;
    popt.data_seed = config.seed;
    auto pre = contrastive_pretrain(stack, train.samples, popt);
    stack.freeze();
    const double retrieval =
        retrieval_top1(stack, eval.samples, std::min<int>(256, static_cast<int>(eval.samples.size())));
    if (log) log("pretraining done, held-out retrieval " + format_number(retrieval));

    AdapterF adapter = make_model_adapter(config);
    ReadoutF readout = make_model_readout(config);

    auto metrics = train_adapter_stages(config, stack, adapter, readout, train, eval, log);

    auto eval_cache = encode_split(stack, eval.samples, config.layer_tap);
    auto final_eval =
        evaluate_cached(adapter, readout, eval_cache, config.world_config().num_answers());

    TrainedModel model{config,
                       std::move(stack),
                       std::move(adapter),
                       std::move(readout),
                       std::move(pre.losses),
                       retrieval,
                       std::move(metrics),
                       std::move(final_eval)};
    return model;
}

std::string metrics_to_csv(const std::vector<StepMetric>& metrics) {
    std::string out = "step,stage,loss,acc_ambiguous,acc_unambiguous,acc_all\n";
    for (const auto& m : metrics) {
        out += std::to_string(m.step);
        out += ",";
        out += std::to_string(m.stage);
        out += ",";
        out += format_number(m.loss);
        if (m.has_eval) {
            out += ",";
            out += format_number(m.acc_ambiguous);
            out += ",";
            out += format_number(m.acc_unambiguous);
            out += ",";
            out += format_number(m.acc_all);
        } else {
            out += ",,,";
        }
        out += "\n";
    }
    return out;
}

}  // namespace emma
