// Spawns the real command-line binary and checks the operator contract:
// artifact files, exit codes, error lines, and rerun determinism.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "emma/checkpoint.hpp"
#include "emma/dataset_io.hpp"

#ifndef EMMA_BINARY_PATH
#error "EMMA_BINARY_PATH must point at the built command-line binary"
#endif

namespace fs = std::filesystem;

namespace {

struct CommandResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr combined
};

std::string read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CommandResult run(const std::string& args, const fs::path& dir) {
    const fs::path out_file = dir / "cmd_output.txt";
    const std::string cmd =
        std::string(EMMA_BINARY_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CommandResult r;
#ifdef _WIN32
    r.exit_code = status;
#else
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#endif
    r.output = read_all(out_file);
    return r;
}

// Fresh scratch directory per test case, left behind for inspection.
fs::path scratch(const std::string& name) {
    const fs::path dir = fs::current_path() / ("cli_scratch_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small enough to train in a couple of seconds; big enough for the MI floor
// when the train split is analyzed.
void write_tiny_config(const fs::path& path, const fs::path& out_dir) {
    std::ofstream out(path);
    out << "seed = 7\n"
        << "train_samples = 96\n"
        << "eval_samples = 48\n"
        << "pretrain_steps = 5\n"
        << "stage1_steps = 4\n"
        << "stage2_steps = 8\n"
        << "batch_size = 8\n"
        << "pretrain_batch = 8\n"
        << "eval_every = 5\n"
        << "num_pairs = 6\n"
        << "out_dir = " << out_dir.string() << "\n";
}

int count_lines(const std::string& text) {
    int lines = 0;
    for (const char ch : text)
        if (ch == '\n') ++lines;
    return lines;
}

}  // namespace

TEST_CASE("usage and prerequisite failures exit 2 with a single line") {
    const fs::path dir = scratch("usage");

    CommandResult r = run("", dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("usage error:") != std::string::npos);

    r = run("no-such-command", dir);
    CHECK(r.exit_code == 2);

    r = run("gen-data --config " + (dir / "nope.cfg").string(), dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("missing input: " + (dir / "nope.cfg").string()) != std::string::npos);
    CHECK(count_lines(r.output) == 1);

    r = run("train --out-dir " + (dir / "empty").string(), dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("missing input: " + (dir / "empty" / "train.emmadata").string()) !=
          std::string::npos);

    r = run("gen-data --adapter bogus", dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("config error:") != std::string::npos);

    r = run("--help", dir);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("gen-data") != std::string::npos);
    CHECK(r.output.find("gradcheck") != std::string::npos);
}

TEST_CASE("gen-data is deterministic and stamps a manifest") {
    const fs::path dir = scratch("gen");
    const fs::path cfg = dir / "run.cfg";
    const fs::path out = dir / "out";
    write_tiny_config(cfg, out);

    CommandResult r = run("gen-data --config " + cfg.string(), dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out / "train.emmadata"));
    REQUIRE(fs::exists(out / "eval.emmadata"));
    REQUIRE(fs::exists(out / "manifest.txt"));

    const auto train_digest = emma::file_digest((out / "train.emmadata").string());
    const auto eval_digest = emma::file_digest((out / "eval.emmadata").string());
    CHECK(train_digest != eval_digest);

    const emma::Dataset train = emma::load_dataset((out / "train.emmadata").string());
    const emma::Dataset eval = emma::load_dataset((out / "eval.emmadata").string());
    CHECK(train.samples.size() == 96);
    CHECK(eval.samples.size() == 48);
    CHECK(train.master_seed != eval.master_seed);

    // Identical rerun overwrites with identical bytes.
    r = run("gen-data --config " + cfg.string(), dir);
    REQUIRE(r.exit_code == 0);
    CHECK(emma::file_digest((out / "train.emmadata").string()) == train_digest);
    CHECK(emma::file_digest((out / "eval.emmadata").string()) == eval_digest);

    // A different seed produces different data.
    r = run("gen-data --config " + cfg.string() + " --seed 8", dir);
    REQUIRE(r.exit_code == 0);
    CHECK(emma::file_digest((out / "train.emmadata").string()) != train_digest);

    const std::string manifest = read_all(out / "manifest.txt");
    CHECK(manifest.find("command: gen-data") != std::string::npos);
    CHECK(manifest.find("seed=8") != std::string::npos);
    CHECK(manifest.find("fnv1a64:") != std::string::npos);
}

TEST_CASE("end-to-end chain produces every artifact and is reproducible") {
    const fs::path dir = scratch("chain");
    const fs::path cfg = dir / "run.cfg";
    const fs::path out = dir / "out";
    write_tiny_config(cfg, out);
    const std::string base = " --config " + cfg.string();

    REQUIRE(run("gen-data" + base, dir).exit_code == 0);

    CommandResult r = run("pretrain-encoders" + base, dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("retrieval_top1") != std::string::npos);
    REQUIRE(fs::exists(out / "encoders.emmackpt"));
    REQUIRE(fs::exists(out / "pretrain_losses.csv"));
    CHECK(count_lines(read_all(out / "pretrain_losses.csv")) == 6);  // header + 5 steps

    r = run("train" + base, dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("acc_ambiguous") != std::string::npos);
    REQUIRE(fs::exists(out / "model.emmackpt"));
    REQUIRE(fs::exists(out / "metrics.csv"));
    const std::string metrics = read_all(out / "metrics.csv");
    CHECK(metrics.rfind("step,stage,loss,acc_ambiguous,acc_unambiguous,acc_all\n", 0) == 0);
    CHECK(count_lines(metrics) == 13);  // header + 4 + 8 steps
    const auto model_digest = emma::file_digest((out / "model.emmackpt").string());

    // The model checkpoint carries all three parameter groups.
    const emma::Checkpoint ckpt = emma::load_checkpoint((out / "model.emmackpt").string());
    bool has_enc = false, has_adapt = false, has_readout = false;
    for (const auto& [name, tensor] : ckpt.tensors) {
        has_enc = has_enc || name.rfind("enc.", 0) == 0;
        has_adapt = has_adapt || name.rfind("adapt.", 0) == 0;
        has_readout = has_readout || name.rfind("readout.", 0) == 0;
    }
    CHECK(has_enc);
    CHECK(has_adapt);
    CHECK(has_readout);

    // Retraining under the same config and inputs reproduces the bytes.
    REQUIRE(run("train" + base, dir).exit_code == 0);
    CHECK(emma::file_digest((out / "model.emmackpt").string()) == model_digest);

    r = run("eval" + base, dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("acc_all") != std::string::npos);
    const std::string summary = read_all(out / "eval.csv");
    CHECK(summary.rfind("split,accuracy,n\n", 0) == 0);
    CHECK(count_lines(summary) == 4);
    const std::string confusion = read_all(out / "confusion.csv");
    CHECK(confusion.rfind("actual,predicted,count\n", 0) == 0);
    CHECK(count_lines(confusion) == 1 + 8 * 8);  // 4 colors + 4 shapes = 8 classes

    r = run("analyze weights" + base, dir);
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(out / "attribution.csv"));
    REQUIRE(fs::exists(out / "fig_attribution.svg"));
    const auto att_csv_digest = emma::file_digest((out / "attribution.csv").string());
    const auto att_svg_digest = emma::file_digest((out / "fig_attribution.svg").string());
    REQUIRE(run("analyze weights" + base, dir).exit_code == 0);
    CHECK(emma::file_digest((out / "attribution.csv").string()) == att_csv_digest);
    CHECK(emma::file_digest((out / "fig_attribution.svg").string()) == att_svg_digest);

    // The 48-sample eval split is below the estimator floor: internal error.
    r = run("analyze mi" + base, dir);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("error: estimation error:") != std::string::npos);
    CHECK(count_lines(r.output) == 1);

    // Pointing --data at the 96-sample train file clears the floor.
    r = run("analyze mi" + base + " --data " + (out / "train.emmadata").string(), dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("mi_adapted") != std::string::npos);
    CHECK(r.output.find("mi_ratio") != std::string::npos);
    REQUIRE(fs::exists(out / "mi.csv"));
    REQUIRE(fs::exists(out / "fig_mi.svg"));

    r = run("analyze distances" + base, dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("shift") != std::string::npos);
    const std::string distances = read_all(out / "distances.csv");
    CHECK(distances.rfind("pair_id,pre_l2,post_l2\n", 0) == 0);
    CHECK(count_lines(distances) == 7);  // header + num_pairs
    REQUIRE(fs::exists(out / "fig_distance_shift.svg"));
}

TEST_CASE("ablations emit one well-formed row per variant") {
    const fs::path dir = scratch("ablate");
    const fs::path cfg = dir / "run.cfg";
    const fs::path out = dir / "out";
    write_tiny_config(cfg, out);
    const std::string base = " --config " + cfg.string();

    REQUIRE(run("gen-data" + base, dir).exit_code == 0);
    REQUIRE(run("pretrain-encoders" + base, dir).exit_code == 0);

    CommandResult r = run("ablate adapter" + base, dir);
    REQUIRE(r.exit_code == 0);
    const std::string adapter_csv = read_all(out / "ablate_adapter.csv");
    CHECK(adapter_csv.rfind("adapter,acc_ambiguous,acc_unambiguous,acc_all\n", 0) == 0);
    CHECK(count_lines(adapter_csv) == 4);  // header + exactly 3 kinds
    CHECK(adapter_csv.find("\nnone,") != std::string::npos);
    CHECK(adapter_csv.find("\nlinear,") != std::string::npos);
    CHECK(adapter_csv.find("\nxattn,") != std::string::npos);

    r = run("ablate layer-tap" + base, dir);
    REQUIRE(r.exit_code == 0);
    const std::string tap_csv = read_all(out / "ablate_layer_tap.csv");
    CHECK(tap_csv.rfind("layer_tap,acc_ambiguous,acc_unambiguous,acc_all,distance_shift\n", 0) ==
          0);
    CHECK(count_lines(tap_csv) == 3);  // header + final + penultimate
    CHECK(tap_csv.find("\nfinal,") != std::string::npos);
    CHECK(tap_csv.find("\npenultimate,") != std::string::npos);
}

TEST_CASE("flag overrides beat config-file values") {
    const fs::path dir = scratch("override");
    const fs::path cfg = dir / "run.cfg";
    const fs::path out = dir / "out";
    write_tiny_config(cfg, out);

    REQUIRE(run("gen-data --config " + cfg.string() + " --adapter xattn --layer-tap final", dir)
                .exit_code == 0);
    const std::string manifest = read_all(out / "manifest.txt");
    CHECK(manifest.find("adapter=xattn") != std::string::npos);
    CHECK(manifest.find("layer_tap=final") != std::string::npos);
}

TEST_CASE("corrupted inputs are rejected as internal errors") {
    const fs::path dir = scratch("corrupt");
    const fs::path cfg = dir / "run.cfg";
    const fs::path out = dir / "out";
    write_tiny_config(cfg, out);
    REQUIRE(run("gen-data --config " + cfg.string(), dir).exit_code == 0);

    // Flip one byte in the middle of the train split.
    const fs::path victim = out / "train.emmadata";
    auto bytes = emma::read_file_bytes(victim.string());
    bytes[bytes.size() / 2] ^= 0x01;
    emma::write_file_bytes(victim.string(), bytes);

    const CommandResult r = run("pretrain-encoders --config " + cfg.string(), dir);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("error: format error:") != std::string::npos);
    CHECK(count_lines(r.output) == 1);
}

TEST_CASE("gradcheck reports every op and exits clean") {
    const fs::path dir = scratch("gradcheck");
    const fs::path out = dir / "out";

    const CommandResult r = run("gradcheck --out-dir " + out.string(), dir);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("matmul") != std::string::npos);
    CHECK(r.output.find("softmax_rows") != std::string::npos);
    CHECK(r.output.find("composed_model") != std::string::npos);
    CHECK(r.output.find("gradcheck pass") != std::string::npos);
    CHECK(r.output.find("FAIL") == std::string::npos);
    const std::string csv = read_all(out / "gradcheck.csv");
    CHECK(csv.rfind("op,max_rel_err,max_abs_err,checked\n", 0) == 0);
    CHECK(count_lines(csv) >= 16);
}
