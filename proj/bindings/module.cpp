// Python bindings for the instruction-conditioned modality adaptation core.
//
// The module exposes the operations a notebook user actually needs: run
// configuration, synthetic data generation, the adapter itself, the frozen
// two-stage training pipeline, checkpoint round-trips, the mutual-information
// and distance-shift analyses, and the full command line entry point.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emma/adapter.hpp"
#include "emma/analysis.hpp"
#include "emma/checkpoint.hpp"
#include "emma/cli.hpp"
#include "emma/config.hpp"
#include "emma/dataset_io.hpp"
#include "emma/encoder.hpp"
#include "emma/errors.hpp"
#include "emma/gradcheck_suite.hpp"
#include "emma/pipeline.hpp"
#include "emma/rng.hpp"
#include "emma/tensor.hpp"
#include "emma/world.hpp"

namespace py = pybind11;

namespace {

using Rows = std::vector<std::vector<float>>;

emma::TensorF rows_to_tensor(const Rows& rows, const std::string& what) {
    if (rows.empty() || rows.front().empty())
        throw emma::DimensionError(what + " must be a non-empty 2d array");
    const int r = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows.front().size());
    emma::TensorF t = emma::TensorF::zeros(r, c);
    for (int i = 0; i < r; ++i) {
        if (static_cast<int>(rows[static_cast<std::size_t>(i)].size()) != c)
            throw emma::DimensionError(what + " has ragged rows");
        for (int j = 0; j < c; ++j)
            t.at(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return t;
}

Rows tensor_to_rows(const emma::TensorF& t) {
    Rows out(static_cast<std::size_t>(t.rows()),
             std::vector<float>(static_cast<std::size_t>(t.cols())));
    for (int i = 0; i < t.rows(); ++i)
        for (int j = 0; j < t.cols(); ++j)
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at(i, j);
    return out;
}

py::dict eval_to_dict(const emma::EvalResult& r) {
    py::dict d;
    d["acc_ambiguous"] = r.acc_ambiguous;
    d["acc_unambiguous"] = r.acc_unambiguous;
    d["acc_all"] = r.acc_all;
    d["n_ambiguous"] = r.n_ambiguous;
    d["n_unambiguous"] = r.n_unambiguous;
    d["classes"] = r.classes;
    py::list confusion;
    for (int i = 0; i < r.classes; ++i) {
        py::list row;
        for (int j = 0; j < r.classes; ++j)
            row.append(r.confusion[static_cast<std::size_t>(i) * r.classes + j]);
        confusion.append(row);
    }
    d["confusion"] = confusion;
    return d;
}

py::dict mi_to_dict(const emma::MiComparison& mi) {
    py::dict d;
    d["adapted"] = mi.adapted.mi_nats;
    d["raw"] = mi.raw.mi_nats;
    d["adapted_shuffled"] = mi.adapted_shuffled.mi_nats;
    d["raw_shuffled"] = mi.raw_shuffled.mi_nats;
    d["k"] = mi.adapted.k;
    d["n"] = mi.adapted.n;
    d["adapted_chunks"] = mi.adapted_chunks;
    d["raw_chunks"] = mi.raw_chunks;
    return d;
}

std::vector<std::tuple<int, bool, double>> attribution_tuples(const emma::AdapterF& adapter) {
    std::vector<std::tuple<int, bool, double>> out;
    for (const auto& row : emma::attribution_rows(adapter))
        out.emplace_back(row.token_index, row.is_text, row.l1_norm);
    return out;
}

emma::TrainedModel load_model_from(const std::string& path) {
    const emma::Checkpoint ckpt = emma::load_checkpoint(path);
    emma::RunConfig config = emma::parse_run_config(ckpt.config_text);
    emma::EncoderStackF stack(config.encoder_config(), config.seed);
    emma::assign_named_tensors(stack.named_params("enc"), ckpt.tensors, "'" + path + "'");
    stack.freeze();
    emma::AdapterF adapter = emma::make_model_adapter(config);
    emma::assign_named_tensors(adapter.named_params("adapt"), ckpt.tensors, "'" + path + "'");
    emma::ReadoutF readout = emma::make_model_readout(config);
    emma::assign_named_tensors(readout.named_params("readout"), ckpt.tensors, "'" + path + "'");
    return emma::TrainedModel{std::move(config), std::move(stack), std::move(adapter),
                              std::move(readout), {}, 0.0, {}, {}};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() =
        "Instruction-conditioned modality adaptation: a token-mixing visual\n"
        "alignment adapter over frozen dual encoders, with synthetic data\n"
        "generation, two-stage training, checkpointing, information-theoretic\n"
        "analyses, and the command line entry point.";
    m.attr("__version__") = "0.1.0";

    py::register_exception<emma::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<emma::DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<emma::InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<emma::IndexError>(m, "IndexError", PyExc_IndexError);
    py::register_exception<emma::ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<emma::FormatError>(m, "FormatError", PyExc_RuntimeError);
    py::register_exception<emma::EstimationError>(m, "EstimationError", PyExc_RuntimeError);
    py::register_exception<emma::IoError>(m, "IoError", PyExc_OSError);

    py::class_<emma::RunConfig>(m, "RunConfig",
                                "Flat run configuration; defaults describe the desk-scale run.")
        .def(py::init<>())
        .def_readwrite("seed", &emma::RunConfig::seed)
        .def_property(
            "adapter",
            [](const emma::RunConfig& c) { return std::string(emma::to_string(c.adapter)); },
            [](emma::RunConfig& c, const std::string& s) {
                c.adapter = emma::adapter_kind_from_string(s);
            },
            "Adapter kind: 'none', 'linear', or 'xattn'.")
        .def_property(
            "layer_tap",
            [](const emma::RunConfig& c) { return std::string(emma::to_string(c.layer_tap)); },
            [](emma::RunConfig& c, const std::string& s) {
                c.layer_tap = emma::layer_tap_from_string(s);
            },
            "Vision tower tap feeding the adapter: 'final' or 'penultimate'.")
        .def_property(
            "readout_mode",
            [](const emma::RunConfig& c) { return std::string(emma::to_string(c.readout_mode)); },
            [](emma::RunConfig& c, const std::string& s) {
                c.readout_mode = emma::readout_mode_from_string(s);
            },
            "Answer head input: 'visual_only' or 'visual_plus_instruction'.")
        .def_readwrite("grid_h", &emma::RunConfig::grid_h)
        .def_readwrite("grid_w", &emma::RunConfig::grid_w)
        .def_readwrite("num_colors", &emma::RunConfig::num_colors)
        .def_readwrite("num_shapes", &emma::RunConfig::num_shapes)
        .def_readwrite("noise_std", &emma::RunConfig::noise_std)
        .def_readwrite("ambiguous_fraction", &emma::RunConfig::ambiguous_fraction)
        .def_readwrite("m", &emma::RunConfig::m)
        .def_readwrite("d", &emma::RunConfig::d)
        .def_readwrite("d_prime", &emma::RunConfig::d_prime)
        .def_readwrite("depth", &emma::RunConfig::depth)
        .def_readwrite("vocab_size", &emma::RunConfig::vocab_size)
        .def_readwrite("embed_dim", &emma::RunConfig::embed_dim)
        .def_readwrite("mlp_ratio", &emma::RunConfig::mlp_ratio)
        .def_readwrite("train_samples", &emma::RunConfig::train_samples)
        .def_readwrite("eval_samples", &emma::RunConfig::eval_samples)
        .def_readwrite("pretrain_steps", &emma::RunConfig::pretrain_steps)
        .def_readwrite("pretrain_lr", &emma::RunConfig::pretrain_lr)
        .def_readwrite("pretrain_batch", &emma::RunConfig::pretrain_batch)
        .def_readwrite("stage1_steps", &emma::RunConfig::stage1_steps)
        .def_readwrite("stage1_lr", &emma::RunConfig::stage1_lr)
        .def_readwrite("stage2_steps", &emma::RunConfig::stage2_steps)
        .def_readwrite("stage2_lr", &emma::RunConfig::stage2_lr)
        .def_readwrite("batch_size", &emma::RunConfig::batch_size)
        .def_readwrite("readout_hidden", &emma::RunConfig::readout_hidden)
        .def_readwrite("eval_every", &emma::RunConfig::eval_every)
        .def_readwrite("mi_k", &emma::RunConfig::mi_k)
        .def_readwrite("num_pairs", &emma::RunConfig::num_pairs)
        .def_readwrite("out_dir", &emma::RunConfig::out_dir)
        .def("validate", &emma::RunConfig::validate,
             "Raises ConfigError on an invalid value or combination.")
        .def("serialize", [](const emma::RunConfig& c) { return emma::serialize_run_config(c); },
             "Canonical key=value text; parse(serialize(c)) reproduces c.")
        .def_static("parse", &emma::parse_run_config, py::arg("text"),
                    "Parses key=value text ('#' comments allowed).")
        .def_static("load", &emma::load_run_config, py::arg("path"),
                    "Reads and parses a configuration file.")
        .def("__repr__", [](const emma::RunConfig& c) {
            return "RunConfig(seed=" + std::to_string(c.seed) + ", adapter='" +
                   emma::to_string(c.adapter) + "', layer_tap='" + emma::to_string(c.layer_tap) +
                   "')";
        });

    py::class_<emma::Dataset>(m, "Dataset",
                              "A generated split plus the world configuration and master seed "
                              "that produced it.")
        .def_readonly("master_seed", &emma::Dataset::master_seed)
        .def("__len__", [](const emma::Dataset& d) { return d.samples.size(); })
        .def("save", [](const emma::Dataset& d, const std::string& path) {
            emma::save_dataset(path, d);
        }, py::arg("path"), "Writes the digest-protected binary container.");

    py::class_<emma::AdapterF>(m, "Adapter",
                               "Projects instruction tokens into the visual width and realigns "
                               "the visual tokens conditioned on them. Exact pass-through at "
                               "initialization for every kind.")
        .def(py::init([](const std::string& kind, int n, int m_, int d, int d_prime,
                         std::uint64_t seed) {
                 return emma::AdapterF(emma::adapter_kind_from_string(kind), n, m_, d, d_prime,
                                       seed);
             }),
             py::arg("kind"), py::arg("n"), py::arg("m"), py::arg("d"), py::arg("d_prime"),
             py::arg("seed") = 1)
        .def_property_readonly(
            "kind", [](const emma::AdapterF& a) { return std::string(emma::to_string(a.kind())); })
        .def_property_readonly("n", &emma::AdapterF::n)
        .def_property_readonly("m", &emma::AdapterF::m)
        .def_property_readonly("d", &emma::AdapterF::d)
        .def_property_readonly("d_prime", &emma::AdapterF::d_prime)
        .def_property_readonly("param_count", &emma::AdapterF::param_count)
        .def(
            "adapt",
            [](const emma::AdapterF& a, const Rows& v, const std::optional<Rows>& t) {
                emma::TensorF vt = rows_to_tensor(v, "visual tokens");
                emma::TensorF tt;
                if (t.has_value()) {
                    tt = rows_to_tensor(*t, "text tokens");
                } else if (a.kind() == emma::AdapterKind::none) {
                    tt = emma::TensorF::zeros(a.m(), a.d_prime());
                } else {
                    throw emma::InputError("text tokens are required for a trainable adapter");
                }
                return tensor_to_rows(a.adapt(nullptr, vt, tt));
            },
            py::arg("v"), py::arg("t") = std::nullopt,
            "Adapted visual tokens [n x d] for visual tokens v [n x d] and text "
            "tokens t [m x d_prime]. t may be omitted only for kind 'none'.")
        .def("attribution", &attribution_tuples,
             "Per-input-token (index, is_text, l1_norm) rows of the linear mixer; "
             "raises ContractError for other kinds.")
        .def("alignment_weights", [](const emma::AdapterF& a) {
            return tensor_to_rows(a.alignment_weights());
        }, "The [(n+m) x n] mixing matrix of the linear adapter.");

    py::class_<emma::TrainedModel>(m, "TrainedModel",
                                   "Frozen encoders plus trained adapter and answer head, with "
                                   "the training history.")
        .def_property_readonly("config",
                               [](const emma::TrainedModel& mdl) { return mdl.config; })
        .def_property_readonly("retrieval",
                               [](const emma::TrainedModel& mdl) { return mdl.retrieval; },
                               "Caption retrieval top-1 accuracy after contrastive pretraining.")
        .def_property_readonly("pretrain_losses",
                               [](const emma::TrainedModel& mdl) { return mdl.pretrain_losses; })
        .def_property_readonly("final_eval", [](const emma::TrainedModel& mdl) {
            return eval_to_dict(mdl.final_eval);
        })
        .def("metrics_csv", [](const emma::TrainedModel& mdl) {
            return emma::metrics_to_csv(mdl.metrics);
        }, "Step metrics of both adapter stages, as CSV text.")
        .def("adapter_param_count", [](const emma::TrainedModel& mdl) {
            return mdl.adapter.param_count();
        })
        .def(
            "evaluate",
            [](const emma::TrainedModel& mdl, const emma::Dataset& ds) {
                const auto cache = emma::encode_split(mdl.stack, ds.samples, mdl.config.layer_tap);
                return eval_to_dict(emma::evaluate_cached(
                    mdl.adapter, mdl.readout, cache, mdl.config.world_config().num_answers()));
            },
            py::arg("dataset"),
            "Accuracy on a dataset, split into ambiguous / unambiguous / all, "
            "plus the confusion matrix.")
        .def(
            "compare_mi",
            [](const emma::TrainedModel& mdl, const emma::Dataset& ds, std::optional<int> k) {
                emma::World world(ds.world, ds.master_seed);
                return mi_to_dict(emma::compare_mi(mdl.stack, mdl.adapter, mdl.stack, world,
                                                   ds.samples, k.value_or(mdl.config.mi_k),
                                                   mdl.config.layer_tap, mdl.config.seed));
            },
            py::arg("dataset"), py::arg("k") = std::nullopt,
            "Mutual information between visual representations and the response, "
            "with and without the adapter, plus label-shuffle controls.")
        .def(
            "distance_shift",
            [](const emma::TrainedModel& mdl, std::optional<int> num_pairs) {
                emma::World world(mdl.config.world_config(),
                                  emma::SplitMix64::derive(mdl.config.seed, emma::kEvalSplitStream));
                const auto report = emma::distance_shift(
                    mdl.stack, mdl.adapter, world, num_pairs.value_or(mdl.config.num_pairs),
                    mdl.config.layer_tap);
                py::dict d;
                d["mean_pre"] = report.mean_pre;
                d["mean_post"] = report.mean_post;
                d["shift"] = report.shift;
                d["pairs"] = report.rows.size();
                return d;
            },
            py::arg("num_pairs") = std::nullopt,
            "Pooled-representation distance between confusable scene pairs, "
            "before and after the adapter.")
        .def("attribution", [](const emma::TrainedModel& mdl) {
            return attribution_tuples(mdl.adapter);
        })
        .def("save", [](const emma::TrainedModel& mdl, const std::string& path) {
            emma::save_checkpoint(path,
                                  emma::Checkpoint{emma::serialize_run_config(mdl.config),
                                                   emma::model_named_params(mdl.stack, mdl.adapter,
                                                                            mdl.readout)});
        }, py::arg("path"), "Writes the full model checkpoint (encoders, adapter, readout).");

    m.def("adapter_param_count",
          [](const std::string& kind, int n, int m_, int d, int d_prime) {
              return emma::adapter_param_count(emma::adapter_kind_from_string(kind), n, m_, d,
                                               d_prime);
          },
          py::arg("kind"), py::arg("n"), py::arg("m"), py::arg("d"), py::arg("d_prime"),
          "Trainable scalar count for an adapter of the given kind and geometry.");

    m.def("digamma", &emma::digamma, py::arg("x"),
          "Digamma function, the derivative of log-gamma.");

    m.def("estimate_mi",
          [](const std::vector<std::vector<double>>& xs,
             const std::vector<std::vector<double>>& ys, int k) {
              return emma::estimate_mi_ksg(xs, ys, k);
          },
          py::arg("xs"), py::arg("ys"), py::arg("k") = 3,
          "k-nearest-neighbour mutual information estimate in nats between two "
          "paired samples of vectors. Raises EstimationError below 50 samples.");

    m.def("run_gradient_suite",
          []() {
              py::list out;
              for (const auto& r : emma::run_gradient_suite()) {
                  py::dict d;
                  d["name"] = r.name;
                  d["max_rel_err"] = r.max_rel_err;
                  d["max_abs_err"] = r.max_abs_err;
                  d["checked"] = r.checked;
                  out.append(d);
              }
              return out;
          },
          "Central-difference verification of every differentiable operation "
          "plus a composed model; one report per check.");

    m.def("generate_dataset",
          [](const emma::RunConfig& config, std::uint64_t master_seed, std::int64_t count) {
              config.validate();
              return emma::generate_dataset(config.world_config(), master_seed, count);
          },
          py::arg("config"), py::arg("master_seed"), py::arg("count"),
          "One synthetic split of `count` samples from the configured world.");

    m.def("generate_splits",
          [](const emma::RunConfig& config) {
              config.validate();
              return py::make_tuple(
                  emma::generate_dataset(
                      config.world_config(),
                      emma::SplitMix64::derive(config.seed, emma::kTrainSplitStream),
                      config.train_samples),
                  emma::generate_dataset(
                      config.world_config(),
                      emma::SplitMix64::derive(config.seed, emma::kEvalSplitStream),
                      config.eval_samples));
          },
          py::arg("config"),
          "The (train, eval) splits exactly as the command line `gen-data` "
          "produces them for this configuration.");

    m.def("load_dataset", &emma::load_dataset, py::arg("path"),
          "Reads a split written by Dataset.save or the command line.");

    m.def("train",
          [](const emma::RunConfig& config, const emma::Dataset& train_split,
             const emma::Dataset& eval_split, const std::optional<py::function>& log) {
              if (log.has_value()) {
                  const py::function fn = *log;
                  return emma::train_pipeline(config, train_split, eval_split,
                                              [fn](const std::string& line) { fn(line); });
              }
              py::gil_scoped_release release;
              return emma::train_pipeline(config, train_split, eval_split, nullptr);
          },
          py::arg("config"), py::arg("train_split"), py::arg("eval_split"),
          py::arg("log") = std::nullopt,
          "Pretrains and freezes the encoders, then trains the adapter in two "
          "stages. `log` receives one progress line per evaluation.");

    m.def("load_model", &load_model_from, py::arg("path"),
          "Rebuilds a model from a checkpoint written by TrainedModel.save or "
          "the command line `train`.");

    m.def("run_cli", &emma::run_cli, py::arg("args"),
          "The command line entry point: pass arguments as a list, e.g. "
          "['gen-data', '--config', 'run.cfg']. Returns the exit code.");
}
