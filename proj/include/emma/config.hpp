#pragma once

#include <cstdint>
#include <string>

#include "emma/adapter.hpp"
#include "emma/encoder.hpp"
#include "emma/errors.hpp"
#include "emma/world.hpp"

namespace emma {

// What the answer head sees: the pooled adapted visual tokens alone, or those
// concatenated with the pooled projected instruction tokens.
enum class ReadoutMode { visual_only, visual_plus_instruction };

inline const char* to_string(ReadoutMode mode) {
    return mode == ReadoutMode::visual_only ? "visual_only" : "visual_plus_instruction";
}

inline ReadoutMode readout_mode_from_string(const std::string& s) {
    if (s == "visual_only") return ReadoutMode::visual_only;
    if (s == "visual_plus_instruction") return ReadoutMode::visual_plus_instruction;
    throw ConfigError("unknown readout mode '" + s +
                      "' (expected visual_only or visual_plus_instruction)");
}

// Flat key=value run configuration. Parsing accepts '#' comments and blank
// lines; serialization is canonical: every key, declaration order, one
// deterministic number format.
struct RunConfig {
    std::uint64_t seed = 1;
    AdapterKind adapter = AdapterKind::linear;
    LayerTap layer_tap = LayerTap::penultimate;

    int grid_h = 4;
    int grid_w = 4;
    int num_colors = 4;
    int num_shapes = 4;
    double noise_std = 0.02;
    double ambiguous_fraction = 0.5;

    int m = 12;
    int d = 32;
    int d_prime = 24;
    int depth = 2;
    int vocab_size = 64;
    int embed_dim = 24;
    int mlp_ratio = 4;

    std::int64_t train_samples = 4096;
    std::int64_t eval_samples = 1024;

    int pretrain_steps = 600;
    double pretrain_lr = 1e-3;
    int pretrain_batch = 32;

    int stage1_steps = 300;
    double stage1_lr = 3e-3;
    int stage2_steps = 1500;
    double stage2_lr = 1e-3;
    int batch_size = 32;
    ReadoutMode readout_mode = ReadoutMode::visual_only;
    int readout_hidden = 64;
    int eval_every = 100;

    int mi_k = 3;
    int num_pairs = 64;
    std::string out_dir = "out";

    WorldConfig world_config() const;
    EncoderConfig encoder_config() const;
    void validate() const;
};

// Canonical text form (parse . serialize is the identity on canonical text).
std::string serialize_run_config(const RunConfig& config);

// Throws ConfigError naming the offending line on unknown keys, duplicate
// keys, or malformed values.
RunConfig parse_run_config(const std::string& text);

// Reads the file (IoError if unreadable) and parses it.
RunConfig load_run_config(const std::string& path);

// Deterministic float formatting used across config echo, CSV, and SVG output.
std::string format_number(double value);

}  // namespace emma
