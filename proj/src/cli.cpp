#include "emma/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "emma/analysis.hpp"
#include "emma/checkpoint.hpp"
#include "emma/config.hpp"
#include "emma/dataset_io.hpp"
#include "emma/digest.hpp"
#include "emma/errors.hpp"
#include "emma/gradcheck_suite.hpp"
#include "emma/pipeline.hpp"
#include "emma/report.hpp"
#include "emma/rng.hpp"

namespace emma {
namespace {

namespace fs = std::filesystem;

// Gradient checks must stay below this maximum relative error to pass.
constexpr double kGradTolerance = 1e-4;

// A required input file that does not exist. Reported as a single line and
// mapped to exit code 2.
struct MissingInput : std::runtime_error {
    explicit MissingInput(const std::string& path)
        : std::runtime_error("missing input: " + path) {}
};

// Values of the shared command-line flags; a flag only takes effect when the
// parser actually saw it (checked via count()), so file values win otherwise.
struct Flags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string adapter;
    std::string layer_tap;
    std::string checkpoint;
    std::string data;
};

void add_common_flags(CLI::App* sub, Flags& f) {
    sub->add_option("--config", f.config_path, "Run configuration file (key = value lines)");
    sub->add_option("--seed", f.seed, "Master seed override");
    sub->add_option("--out-dir", f.out_dir, "Artifact directory override");
    sub->add_option("--adapter", f.adapter, "Adapter kind override: none|linear|xattn");
    sub->add_option("--layer-tap", f.layer_tap,
                    "Vision feature tap override: final|penultimate");
    sub->add_option("--checkpoint", f.checkpoint, "Checkpoint to load instead of the default");
    sub->add_option("--data", f.data, "Dataset file or directory holding the generated splits");
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

const std::string& require_file(const std::string& path) {
    if (!fs::exists(path)) throw MissingInput(path);
    return path;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void apply_overrides(RunConfig& c, const CLI::App* sub, const Flags& f) {
    if (sub->count("--seed")) c.seed = f.seed;
    if (sub->count("--out-dir")) c.out_dir = f.out_dir;
    if (sub->count("--adapter")) c.adapter = adapter_kind_from_string(f.adapter);
    if (sub->count("--layer-tap")) c.layer_tap = layer_tap_from_string(f.layer_tap);
}

// Config for subcommands that start a run from scratch: the file named by
// --config (defaults when absent) with flag overrides on top.
RunConfig effective_config(const CLI::App* sub, const Flags& f) {
    RunConfig c;
    if (sub->count("--config")) c = load_run_config(require_file(f.config_path));
    apply_overrides(c, sub, f);
    c.validate();
    return c;
}

void ensure_world_matches(const WorldConfig& expected, const WorldConfig& got,
                          const std::string& what) {
    if (expected.grid_h != got.grid_h || expected.grid_w != got.grid_w ||
        expected.num_colors != got.num_colors || expected.num_shapes != got.num_shapes ||
        expected.noise_std != got.noise_std ||
        expected.ambiguous_fraction != got.ambiguous_fraction)
        throw ContractError("'" + what + "' was generated under a different world configuration");
}

void ensure_encoders_match(const EncoderConfig& expected, const EncoderConfig& got,
                           const std::string& what) {
    if (expected.grid_h != got.grid_h || expected.grid_w != got.grid_w ||
        expected.patch_width != got.patch_width || expected.m != got.m || expected.d != got.d ||
        expected.d_prime != got.d_prime || expected.depth != got.depth ||
        expected.vocab_size != got.vocab_size || expected.embed_dim != got.embed_dim ||
        expected.mlp_ratio != got.mlp_ratio)
        throw ContractError("'" + what +
                            "' holds encoders of a different shape than the run configuration");
}

// Reproducibility stamp written into out_dir by every subcommand: the exact
// effective config plus a digest for each file read or written.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& config)
        : command_(std::move(command)), config_text_(serialize_run_config(config)) {}

    void add_input(const std::string& path) { files_.emplace_back("input", path); }
    void add_output(const std::string& path) { files_.emplace_back("output", path); }

    void write(const std::string& out_dir) const {
        std::string text = "command: " + command_ + "\n\n[config]\n" + config_text_ + "\n[files]\n";
        for (const auto& [role, path] : files_)
            text += role + " " + path + " fnv1a64:" + hex_digest(file_digest(path)) + "\n";
        write_text_file(join(out_dir, "manifest.txt"), text);
    }

private:
    std::string command_;
    std::string config_text_;
    std::vector<std::pair<std::string, std::string>> files_;
};

struct Splits {
    Dataset train;
    Dataset eval;
    std::string train_path;
    std::string eval_path;
};

// --data names the directory holding both splits; it defaults to out_dir so
// the gen-data -> train flow works without extra flags.
Splits load_splits(const RunConfig& c, const std::string& data) {
    const std::string base = data.empty() ? c.out_dir : data;
    Splits s;
    s.train_path = require_file(join(base, "train.emmadata"));
    s.eval_path = require_file(join(base, "eval.emmadata"));
    s.train = load_dataset(s.train_path);
    s.eval = load_dataset(s.eval_path);
    ensure_world_matches(c.world_config(), s.train.world, s.train_path);
    ensure_world_matches(c.world_config(), s.eval.world, s.eval_path);
    return s;
}

// --data may name the split file itself or a directory holding eval.emmadata.
std::string resolve_eval_path(const RunConfig& c, const std::string& data) {
    if (!data.empty() && data.ends_with(".emmadata")) return require_file(data);
    const std::string base = data.empty() ? c.out_dir : data;
    return require_file(join(base, "eval.emmadata"));
}

// Rebuilds a frozen encoder stack for config `c` from checkpoint tensors
// (either an encoders-only or full-model checkpoint; extra tensors are
// ignored by the assignment).
EncoderStackF load_frozen_stack(const RunConfig& c, const Checkpoint& ckpt,
                                const std::string& path) {
    const RunConfig stored = parse_run_config(ckpt.config_text);
    ensure_encoders_match(c.encoder_config(), stored.encoder_config(), path);
    EncoderStackF stack(c.encoder_config(), stored.seed);
    assign_named_tensors(stack.named_params("enc"), ckpt.tensors, "'" + path + "'");
    stack.freeze();
    return stack;
}

// A trained model reconstructed from a full checkpoint, plus the effective
// config used for everything downstream of it.
struct LoadedModel {
    RunConfig config;
    EncoderStackF stack;
    AdapterF adapter;
    ReadoutF readout;
    std::string path;
};

// Loads the model for eval/analyze. The stored config is the source of truth
// for shapes; a --config file replaces it as the base when given, and flag
// overrides apply either way. Structural mismatches surface as contract
// errors from the tensor assignment.
LoadedModel load_model(const CLI::App* sub, const Flags& f) {
    RunConfig base;
    if (sub->count("--config")) base = load_run_config(require_file(f.config_path));
    if (sub->count("--out-dir")) base.out_dir = f.out_dir;
    const std::string path = sub->count("--checkpoint")
                                 ? f.checkpoint
                                 : join(base.out_dir, "model.emmackpt");
    const Checkpoint ckpt = load_checkpoint(require_file(path));

    RunConfig c = sub->count("--config") ? base : parse_run_config(ckpt.config_text);
    apply_overrides(c, sub, f);
    c.validate();

    ensure_encoders_match(c.encoder_config(),
                          parse_run_config(ckpt.config_text).encoder_config(), path);
    EncoderStackF stack(c.encoder_config(), c.seed);
    assign_named_tensors(stack.named_params("enc"), ckpt.tensors, "'" + path + "'");
    stack.freeze();
    AdapterF adapter = make_model_adapter(c);
    assign_named_tensors(adapter.named_params("adapt"), ckpt.tensors, "'" + path + "'");
    ReadoutF readout = make_model_readout(c);
    assign_named_tensors(readout.named_params("readout"), ckpt.tensors, "'" + path + "'");
    return LoadedModel{std::move(c), std::move(stack), std::move(adapter), std::move(readout),
                       path};
}

Checkpoint model_checkpoint(const RunConfig& c, const EncoderStackF& stack,
                            const AdapterF& adapter, const ReadoutF& readout) {
    return Checkpoint{serialize_run_config(c), model_named_params(stack, adapter, readout)};
}

std::string eval_summary_csv(const EvalResult& r) {
    const std::int64_t total = r.n_ambiguous + r.n_unambiguous;
    std::string out = "split,accuracy,n\n";
    out += "ambiguous," + format_number(r.acc_ambiguous) + "," + std::to_string(r.n_ambiguous) +
           "\n";
    out += "unambiguous," + format_number(r.acc_unambiguous) + "," +
           std::to_string(r.n_unambiguous) + "\n";
    out += "all," + format_number(r.acc_all) + "," + std::to_string(total) + "\n";
    return out;
}

std::string confusion_csv(const EvalResult& r) {
    std::string out = "actual,predicted,count\n";
    for (int a = 0; a < r.classes; ++a)
        for (int p = 0; p < r.classes; ++p)
            out += std::to_string(a) + "," + std::to_string(p) + "," +
                   std::to_string(r.confusion[static_cast<std::size_t>(a * r.classes + p)]) +
                   "\n";
    return out;
}

void print_eval(const EvalResult& r) {
    std::cout << "acc_ambiguous " << format_number(r.acc_ambiguous) << "\n";
    std::cout << "acc_unambiguous " << format_number(r.acc_unambiguous) << "\n";
    std::cout << "acc_all " << format_number(r.acc_all) << "\n";
}

int cmd_gen_data(const CLI::App* sub, const Flags& f) {
    const RunConfig c = effective_config(sub, f);
    ensure_dir(c.out_dir);
    const auto wc = c.world_config();
    const Dataset train =
        generate_dataset(wc, SplitMix64::derive(c.seed, kTrainSplitStream), c.train_samples);
    const Dataset eval =
        generate_dataset(wc, SplitMix64::derive(c.seed, kEvalSplitStream), c.eval_samples);
    const std::string train_path = join(c.out_dir, "train.emmadata");
    const std::string eval_path = join(c.out_dir, "eval.emmadata");
    save_dataset(train_path, train);
    save_dataset(eval_path, eval);
    Manifest man("gen-data", c);
    man.add_output(train_path);
    man.add_output(eval_path);
    man.write(c.out_dir);
    std::cout << "wrote " << train_path << " samples " << train.samples.size() << "\n";
    std::cout << "wrote " << eval_path << " samples " << eval.samples.size() << "\n";
    return 0;
}

int cmd_pretrain_encoders(const CLI::App* sub, const Flags& f) {
    const RunConfig c = effective_config(sub, f);
    ensure_dir(c.out_dir);
    const Splits splits = load_splits(c, f.data);

    EncoderStackF stack(c.encoder_config(), c.seed);
    PretrainOptions opt;
    opt.steps = c.pretrain_steps;
    opt.lr = static_cast<float>(c.pretrain_lr);
    opt.batch_size = c.pretrain_batch;
    opt.data_seed = c.seed;
    const PretrainResult result = contrastive_pretrain(stack, splits.train.samples, opt);
    stack.freeze();
    const double retrieval = retrieval_top1(
        stack, splits.eval.samples,
        std::min<int>(256, static_cast<int>(splits.eval.samples.size())));

    const std::string ckpt_path = join(c.out_dir, "encoders.emmackpt");
    save_checkpoint(ckpt_path, Checkpoint{serialize_run_config(c), stack.named_params("enc")});
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < result.losses.size(); ++i)
        csv += std::to_string(i + 1) + "," + format_number(result.losses[i]) + "\n";
    const std::string loss_path = join(c.out_dir, "pretrain_losses.csv");
    write_text_file(loss_path, csv);

    Manifest man("pretrain-encoders", c);
    man.add_input(splits.train_path);
    man.add_input(splits.eval_path);
    man.add_output(ckpt_path);
    man.add_output(loss_path);
    man.write(c.out_dir);
    std::cout << "retrieval_top1 " << format_number(retrieval) << "\n";
    std::cout << "wrote " << ckpt_path << "\n";
    return 0;
}

int cmd_train(const CLI::App* sub, const Flags& f) {
    const RunConfig c = effective_config(sub, f);
    ensure_dir(c.out_dir);
    const Splits splits = load_splits(c, f.data);
    const std::string enc_path = sub->count("--checkpoint")
                                     ? f.checkpoint
                                     : join(c.out_dir, "encoders.emmackpt");
    const Checkpoint enc_ckpt = load_checkpoint(require_file(enc_path));
    const EncoderStackF stack = load_frozen_stack(c, enc_ckpt, enc_path);

    AdapterF adapter = make_model_adapter(c);
    ReadoutF readout = make_model_readout(c);
    const auto metrics =
        train_adapter_stages(c, stack, adapter, readout, splits.train, splits.eval,
                             [](const std::string& line) { std::cout << line << "\n"; });
    const auto eval_cache = encode_split(stack, splits.eval.samples, c.layer_tap);
    const EvalResult final_eval =
        evaluate_cached(adapter, readout, eval_cache, c.world_config().num_answers());

    const std::string model_path = join(c.out_dir, "model.emmackpt");
    save_checkpoint(model_path, model_checkpoint(c, stack, adapter, readout));
    const std::string metrics_path = join(c.out_dir, "metrics.csv");
    write_text_file(metrics_path, metrics_to_csv(metrics));

    Manifest man("train", c);
    man.add_input(splits.train_path);
    man.add_input(splits.eval_path);
    man.add_input(enc_path);
    man.add_output(model_path);
    man.add_output(metrics_path);
    man.write(c.out_dir);
    print_eval(final_eval);
    std::cout << "wrote " << model_path << "\n";
    return 0;
}

int cmd_eval(const CLI::App* sub, const Flags& f) {
    LoadedModel m = load_model(sub, f);
    ensure_dir(m.config.out_dir);
    const std::string eval_path = resolve_eval_path(m.config, f.data);
    const Dataset ds = load_dataset(eval_path);
    ensure_world_matches(m.config.world_config(), ds.world, eval_path);

    const auto cache = encode_split(m.stack, ds.samples, m.config.layer_tap);
    const EvalResult r =
        evaluate_cached(m.adapter, m.readout, cache, m.config.world_config().num_answers());

    const std::string summary_path = join(m.config.out_dir, "eval.csv");
    const std::string confusion_path = join(m.config.out_dir, "confusion.csv");
    write_text_file(summary_path, eval_summary_csv(r));
    write_text_file(confusion_path, confusion_csv(r));

    Manifest man("eval", m.config);
    man.add_input(m.path);
    man.add_input(eval_path);
    man.add_output(summary_path);
    man.add_output(confusion_path);
    man.write(m.config.out_dir);
    print_eval(r);
    return 0;
}

int cmd_analyze_weights(const CLI::App* sub, const Flags& f) {
    LoadedModel m = load_model(sub, f);
    ensure_dir(m.config.out_dir);
    const auto rows = attribution_rows(m.adapter);

    const std::string csv_path = join(m.config.out_dir, "attribution.csv");
    const std::string svg_path = join(m.config.out_dir, "fig_attribution.svg");
    write_text_file(csv_path, attribution_to_csv(rows));
    write_text_file(svg_path, render_attribution_figure(rows));

    double visual = 0.0, text = 0.0;
    std::int64_t nv = 0, nt = 0;
    for (const auto& row : rows) {
        if (row.is_text) {
            text += row.l1_norm;
            ++nt;
        } else {
            visual += row.l1_norm;
            ++nv;
        }
    }
    Manifest man("analyze weights", m.config);
    man.add_input(m.path);
    man.add_output(csv_path);
    man.add_output(svg_path);
    man.write(m.config.out_dir);
    std::cout << "mean_l1_visual " << format_number(nv ? visual / static_cast<double>(nv) : 0.0)
              << "\n";
    std::cout << "mean_l1_text " << format_number(nt ? text / static_cast<double>(nt) : 0.0)
              << "\n";
    return 0;
}

int cmd_analyze_mi(const CLI::App* sub, const Flags& f) {
    LoadedModel m = load_model(sub, f);
    ensure_dir(m.config.out_dir);
    const std::string eval_path = resolve_eval_path(m.config, f.data);
    const Dataset ds = load_dataset(eval_path);
    ensure_world_matches(m.config.world_config(), ds.world, eval_path);
    const World world(ds.world, ds.master_seed);

    const MiComparison mi =
        compare_mi(m.stack, m.adapter, m.stack, world, ds.samples, m.config.mi_k,
                   m.config.layer_tap, m.config.seed);

    const std::string csv_path = join(m.config.out_dir, "mi.csv");
    const std::string svg_path = join(m.config.out_dir, "fig_mi.svg");
    write_text_file(csv_path, mi_to_csv(mi));
    write_text_file(svg_path, render_mi_figure(mi));

    Manifest man("analyze mi", m.config);
    man.add_input(m.path);
    man.add_input(eval_path);
    man.add_output(csv_path);
    man.add_output(svg_path);
    man.write(m.config.out_dir);
    std::cout << "mi_adapted " << format_number(mi.adapted.mi_nats) << "\n";
    std::cout << "mi_raw " << format_number(mi.raw.mi_nats) << "\n";
    if (mi.raw.mi_nats > 1e-12)
        std::cout << "mi_ratio " << format_number(mi.adapted.mi_nats / mi.raw.mi_nats) << "\n";
    else
        std::cout << "mi_ratio n/a\n";
    return 0;
}

int cmd_analyze_distances(const CLI::App* sub, const Flags& f) {
    LoadedModel m = load_model(sub, f);
    ensure_dir(m.config.out_dir);
    // Pairs are drawn from the eval-split world so they are held out from
    // training.
    const World world(m.config.world_config(),
                      SplitMix64::derive(m.config.seed, kEvalSplitStream));
    const DistanceShiftReport report =
        distance_shift(m.stack, m.adapter, world, m.config.num_pairs, m.config.layer_tap);

    const std::string csv_path = join(m.config.out_dir, "distances.csv");
    const std::string svg_path = join(m.config.out_dir, "fig_distance_shift.svg");
    write_text_file(csv_path, distances_to_csv(report.rows));
    write_text_file(svg_path, render_distance_figure(report.rows));

    Manifest man("analyze distances", m.config);
    man.add_input(m.path);
    man.add_output(csv_path);
    man.add_output(svg_path);
    man.write(m.config.out_dir);
    std::cout << "mean_pre " << format_number(report.mean_pre) << "\n";
    std::cout << "mean_post " << format_number(report.mean_post) << "\n";
    std::cout << "shift " << format_number(report.shift) << "\n";
    return 0;
}

// Shared scaffolding for the two ablations: load splits + frozen encoders,
// train one variant per row with everything else held fixed.
struct AblationContext {
    RunConfig config;
    Splits splits;
    EncoderStackF stack;
    std::string enc_path;
};

AblationContext ablation_context(const CLI::App* sub, const Flags& f) {
    RunConfig c = effective_config(sub, f);
    ensure_dir(c.out_dir);
    Splits splits = load_splits(c, f.data);
    const std::string enc_path = sub->count("--checkpoint")
                                     ? f.checkpoint
                                     : join(c.out_dir, "encoders.emmackpt");
    const Checkpoint enc_ckpt = load_checkpoint(require_file(enc_path));
    EncoderStackF stack = load_frozen_stack(c, enc_ckpt, enc_path);
    return AblationContext{std::move(c), std::move(splits), std::move(stack), enc_path};
}

EvalResult train_variant(const RunConfig& c, const EncoderStackF& stack, const Splits& splits) {
    AdapterF adapter = make_model_adapter(c);
    ReadoutF readout = make_model_readout(c);
    train_adapter_stages(c, stack, adapter, readout, splits.train, splits.eval, nullptr);
    const auto cache = encode_split(stack, splits.eval.samples, c.layer_tap);
    return evaluate_cached(adapter, readout, cache, c.world_config().num_answers());
}

int cmd_ablate_adapter(const CLI::App* sub, const Flags& f) {
    AblationContext ctx = ablation_context(sub, f);
    std::string csv = "adapter,acc_ambiguous,acc_unambiguous,acc_all\n";
    for (const AdapterKind kind :
         {AdapterKind::none, AdapterKind::linear, AdapterKind::cross_attention}) {
        RunConfig rc = ctx.config;
        rc.adapter = kind;
        const EvalResult r = train_variant(rc, ctx.stack, ctx.splits);
        const std::string row = std::string(to_string(kind)) + "," +
                                format_number(r.acc_ambiguous) + "," +
                                format_number(r.acc_unambiguous) + "," + format_number(r.acc_all);
        csv += row + "\n";
        std::cout << row << "\n";
    }
    const std::string csv_path = join(ctx.config.out_dir, "ablate_adapter.csv");
    write_text_file(csv_path, csv);
    Manifest man("ablate adapter", ctx.config);
    man.add_input(ctx.splits.train_path);
    man.add_input(ctx.splits.eval_path);
    man.add_input(ctx.enc_path);
    man.add_output(csv_path);
    man.write(ctx.config.out_dir);
    return 0;
}

int cmd_ablate_layer_tap(const CLI::App* sub, const Flags& f) {
    AblationContext ctx = ablation_context(sub, f);
    const World world(ctx.config.world_config(),
                      SplitMix64::derive(ctx.config.seed, kEvalSplitStream));
    std::string csv = "layer_tap,acc_ambiguous,acc_unambiguous,acc_all,distance_shift\n";
    for (const LayerTap tap : {LayerTap::final, LayerTap::penultimate}) {
        RunConfig rc = ctx.config;
        rc.layer_tap = tap;
        AdapterF adapter = make_model_adapter(rc);
        ReadoutF readout = make_model_readout(rc);
        train_adapter_stages(rc, ctx.stack, adapter, readout, ctx.splits.train, ctx.splits.eval,
                             nullptr);
        const auto cache = encode_split(ctx.stack, ctx.splits.eval.samples, tap);
        const EvalResult r =
            evaluate_cached(adapter, readout, cache, rc.world_config().num_answers());
        const double shift =
            distance_shift(ctx.stack, adapter, world, rc.num_pairs, tap).shift;
        const std::string row = std::string(to_string(tap)) + "," +
                                format_number(r.acc_ambiguous) + "," +
                                format_number(r.acc_unambiguous) + "," +
                                format_number(r.acc_all) + "," + format_number(shift);
        csv += row + "\n";
        std::cout << row << "\n";
    }
    const std::string csv_path = join(ctx.config.out_dir, "ablate_layer_tap.csv");
    write_text_file(csv_path, csv);
    Manifest man("ablate layer-tap", ctx.config);
    man.add_input(ctx.splits.train_path);
    man.add_input(ctx.splits.eval_path);
    man.add_input(ctx.enc_path);
    man.add_output(csv_path);
    man.write(ctx.config.out_dir);
    return 0;
}

int cmd_gradcheck(const CLI::App* sub, const Flags& f) {
    const RunConfig c = effective_config(sub, f);
    ensure_dir(c.out_dir);
    const auto reports = run_gradient_suite();
    bool all_ok = true;
    std::string csv = "op,max_rel_err,max_abs_err,checked\n";
    for (const auto& r : reports) {
        const bool ok = r.max_rel_err < kGradTolerance;
        all_ok = all_ok && ok;
        std::cout << r.name << " max_rel_err " << format_number(r.max_rel_err) << " "
                  << (ok ? "ok" : "FAIL") << "\n";
        csv += r.name + "," + format_number(r.max_rel_err) + "," + format_number(r.max_abs_err) +
               "," + std::to_string(r.checked) + "\n";
    }
    const std::string csv_path = join(c.out_dir, "gradcheck.csv");
    write_text_file(csv_path, csv);
    Manifest man("gradcheck", c);
    man.add_output(csv_path);
    man.write(c.out_dir);
    std::cout << (all_ok ? "gradcheck pass" : "gradcheck fail") << "\n";
    return all_ok ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Instruction-conditioned visual-token adaptation: data generation, training, "
                 "evaluation, and analysis"};
    app.name("emma");
    app.require_subcommand(1);
    Flags f;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the train and eval splits");
    CLI::App* pretrain =
        app.add_subcommand("pretrain-encoders", "Contrastively pretrain and freeze the encoders");
    CLI::App* train =
        app.add_subcommand("train", "Run the two-stage adapter training against frozen encoders");
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a trained model on the eval split");
    CLI::App* analyze = app.add_subcommand("analyze", "Interpretability reports");
    analyze->require_subcommand(1);
    CLI::App* an_weights =
        analyze->add_subcommand("weights", "Per-token attribution of the alignment matrix");
    CLI::App* an_mi = analyze->add_subcommand(
        "mi", "Mutual information between visual representations and the response");
    CLI::App* an_dist = analyze->add_subcommand(
        "distances", "Confusable-pair distances before and after adaptation");
    CLI::App* ablate = app.add_subcommand("ablate", "Comparison runs holding everything else fixed");
    ablate->require_subcommand(1);
    CLI::App* ab_tap =
        ablate->add_subcommand("layer-tap", "Train once per vision tap and compare");
    CLI::App* ab_adapter =
        ablate->add_subcommand("adapter", "Train once per adapter kind and compare");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "Finite-difference checks for every differentiable op");

    for (CLI::App* sub :
         {gen, pretrain, train, eval, an_weights, an_mi, an_dist, ab_tap, ab_adapter, gradcheck})
        add_common_flags(sub, f);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen, f);
        if (pretrain->parsed()) return cmd_pretrain_encoders(pretrain, f);
        if (train->parsed()) return cmd_train(train, f);
        if (eval->parsed()) return cmd_eval(eval, f);
        if (an_weights->parsed()) return cmd_analyze_weights(an_weights, f);
        if (an_mi->parsed()) return cmd_analyze_mi(an_mi, f);
        if (an_dist->parsed()) return cmd_analyze_distances(an_dist, f);
        if (ab_tap->parsed()) return cmd_ablate_layer_tap(ab_tap, f);
        if (ab_adapter->parsed()) return cmd_ablate_adapter(ab_adapter, f);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck, f);
    } catch (const MissingInput& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "usage error: no subcommand\n";
    return 2;
}

}  // namespace emma
