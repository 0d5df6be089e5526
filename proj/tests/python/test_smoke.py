"""End-to-end smoke tests for the Python extension.

Covers the bound surface: configuration round-trips, adapter pass-through at
initialization, parameter accounting, the mutual-information estimator, the
gradient suite, a tiny deterministic training run with checkpoint round-trip,
the analyses, and the embedded command line entry point.
"""

import math
import random
import struct

import pytest

import emma_adapter as ea

GAMMA = 0.5772156649015329


def float32(x):
    """Round to float32 so values survive the extension's float tensors."""
    return struct.unpack("f", struct.pack("f", x))[0]


def tiny_config(out_dir="out"):
    c = ea.RunConfig()
    c.seed = 7
    c.train_samples = 96
    c.eval_samples = 48
    c.pretrain_steps = 5
    c.pretrain_batch = 8
    c.stage1_steps = 4
    c.stage2_steps = 8
    c.batch_size = 8
    c.eval_every = 5
    c.num_pairs = 6
    c.out_dir = out_dir
    c.validate()
    return c


def random_rows(rng, rows, cols):
    return [[float32(rng.uniform(-1.0, 1.0)) for _ in range(cols)] for _ in range(rows)]


@pytest.fixture(scope="module")
def trained():
    cfg = tiny_config()
    train_split, eval_split = ea.generate_splits(cfg)
    model = ea.train(cfg, train_split, eval_split)
    return cfg, train_split, eval_split, model


def test_version_and_repr():
    assert ea.__version__ == "0.1.0"
    assert "adapter='linear'" in repr(ea.RunConfig())


def test_config_roundtrip_and_validation():
    c = ea.RunConfig()
    text = c.serialize()
    again = ea.RunConfig.parse(text)
    assert again.serialize() == text

    c.adapter = "xattn"
    assert c.adapter == "xattn"
    c.layer_tap = "final"
    assert "layer_tap='final'" in repr(c)
    with pytest.raises(ea.ConfigError):
        c.adapter = "bogus"
    with pytest.raises(ValueError):  # ConfigError subclasses ValueError
        c.readout_mode = "bogus"

    c = ea.RunConfig()
    c.batch_size = 0
    with pytest.raises(ea.ConfigError):
        c.validate()


def test_identity_pass_through_at_init():
    rng = random.Random(5)
    v = random_rows(rng, 16, 32)
    t = random_rows(rng, 12, 24)
    for kind in ("none", "linear", "xattn"):
        adapter = ea.Adapter(kind, n=16, m=12, d=32, d_prime=24, seed=3)
        assert adapter.adapt(v, t) == v
    assert ea.Adapter("none", n=16, m=12, d=32, d_prime=24).adapt(v) == v
    with pytest.raises(ea.InputError):
        ea.Adapter("linear", n=16, m=12, d=32, d_prime=24).adapt(v)
    with pytest.raises(ea.DimensionError):
        ea.Adapter("linear", n=16, m=12, d=32, d_prime=24).adapt(v[:4], t)


def test_parameter_accounting():
    assert ea.adapter_param_count("none", 16, 12, 32, 24) == 0
    assert ea.adapter_param_count("linear", 16, 12, 32, 24) == 1248
    assert ea.adapter_param_count("xattn", 16, 12, 32, 24) == 4896
    assert ea.adapter_param_count("linear", 576, 77, 1024, 768) == 1163584
    for kind in ("linear", "xattn"):
        adapter = ea.Adapter(kind, n=16, m=12, d=32, d_prime=24, seed=9)
        assert adapter.param_count == ea.adapter_param_count(kind, 16, 12, 32, 24)


def test_attribution_at_init_is_identity_pattern():
    adapter = ea.Adapter("linear", n=16, m=12, d=32, d_prime=24, seed=2)
    rows = adapter.attribution()
    assert len(rows) == 28
    for index, is_text, l1 in rows:
        assert is_text == (index >= 16)
        assert l1 == (0.0 if is_text else 1.0)
    with pytest.raises(ea.ContractError):
        ea.Adapter("xattn", n=16, m=12, d=32, d_prime=24).attribution()


def test_digamma():
    assert abs(ea.digamma(1.0) + GAMMA) < 1e-9
    assert abs(ea.digamma(5.5) - (ea.digamma(4.5) + 1.0 / 4.5)) < 1e-9


def test_estimate_mi_orders_dependence():
    rng = random.Random(11)
    xs, ys_dep, ys_ind = [], [], []
    for _ in range(400):
        x = rng.gauss(0.0, 1.0)
        xs.append([x])
        ys_dep.append([0.9 * x + math.sqrt(1.0 - 0.81) * rng.gauss(0.0, 1.0)])
        ys_ind.append([rng.gauss(0.0, 1.0)])
    mi_dep = ea.estimate_mi(xs, ys_dep, k=3)
    mi_ind = ea.estimate_mi(xs, ys_ind, k=3)
    assert mi_dep > 0.4  # true value for rho=0.9 is ~0.83 nats
    assert mi_ind < 0.15
    with pytest.raises(ea.EstimationError):
        ea.estimate_mi(xs[:10], ys_dep[:10], k=3)
    with pytest.raises(ea.EstimationError):
        ea.estimate_mi(xs, ys_dep, k=0)


def test_gradient_suite():
    reports = ea.run_gradient_suite()
    names = {r["name"] for r in reports}
    assert {"matmul", "softmax_rows", "composed_model"} <= names
    for r in reports:
        assert r["max_rel_err"] < 1e-4, r


def test_dataset_generation_is_deterministic(tmp_path):
    cfg = tiny_config()
    train_a, eval_a = ea.generate_splits(cfg)
    train_b, _ = ea.generate_splits(cfg)
    assert len(train_a) == 96 and len(eval_a) == 48
    assert train_a.master_seed == train_b.master_seed

    path = tmp_path / "train.emmadata"
    train_a.save(str(path))
    again = ea.load_dataset(str(path))
    assert len(again) == len(train_a) and again.master_seed == train_a.master_seed

    solo = ea.generate_dataset(cfg, master_seed=123, count=5)
    assert len(solo) == 5 and solo.master_seed == 123


def test_train_reports_history(trained):
    _, _, _, model = trained
    assert len(model.pretrain_losses) == 5
    assert 0.0 <= model.retrieval <= 1.0
    ev = model.final_eval
    for key in ("acc_ambiguous", "acc_unambiguous", "acc_all"):
        assert 0.0 <= ev[key] <= 1.0
    assert ev["n_ambiguous"] + ev["n_unambiguous"] == 48
    assert len(ev["confusion"]) == ev["classes"] == 8
    csv = model.metrics_csv()
    assert csv.splitlines()[0].startswith("step,stage,loss")
    assert len(csv.splitlines()) == 13  # header + 4 + 8 steps
    assert model.adapter_param_count() == 1248


def test_train_is_deterministic(trained):
    cfg, train_split, eval_split, model = trained
    lines = []
    again = ea.train(cfg, train_split, eval_split, log=lines.append)
    assert again.metrics_csv() == model.metrics_csv()
    assert again.final_eval == model.final_eval
    assert lines and all(isinstance(line, str) for line in lines)


def test_checkpoint_roundtrip(tmp_path, trained):
    _, _, eval_split, model = trained
    path = tmp_path / "model.emmackpt"
    model.save(str(path))
    loaded = ea.load_model(str(path))
    assert loaded.evaluate(eval_split) == model.evaluate(eval_split)
    assert loaded.config.serialize() == model.config.serialize()

    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    corrupt = tmp_path / "corrupt.emmackpt"
    corrupt.write_bytes(bytes(raw))
    with pytest.raises(ea.FormatError):
        ea.load_model(str(corrupt))


def test_mi_comparison_and_distance_shift(trained):
    _, train_split, eval_split, model = trained
    mi = model.compare_mi(train_split)
    assert mi["n"] == 96 and mi["k"] == 3
    for key in ("adapted", "raw", "adapted_shuffled", "raw_shuffled"):
        assert mi[key] >= 0.0
    # Per-chunk estimates appear only when every chunk clears the estimator's
    # 50-sample floor; 96 samples over 8 chunks stay below it.
    assert len(mi["adapted_chunks"]) == len(mi["raw_chunks"]) == 0
    with pytest.raises(ea.EstimationError):
        model.compare_mi(eval_split)  # 48 samples is below the estimator floor

    shift = model.distance_shift()
    assert shift["pairs"] == 6
    assert shift["mean_pre"] > 0.0
    assert abs(shift["shift"] - (shift["mean_post"] - shift["mean_pre"])) < 1e-12

    rows = model.attribution()
    assert len(rows) == 28


def test_run_cli_end_to_end(tmp_path):
    out = tmp_path / "run"
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(tiny_config(str(out)).serialize())

    assert ea.run_cli(["gen-data", "--config", str(cfg_path)]) == 0
    assert (out / "train.emmadata").is_file()
    assert (out / "eval.emmadata").is_file()
    assert (out / "manifest.txt").is_file()

    assert ea.run_cli(["pretrain-encoders", "--config", str(cfg_path)]) == 0
    assert ea.run_cli(["train", "--config", str(cfg_path)]) == 0
    assert (out / "model.emmackpt").is_file()
    assert ea.run_cli(["eval", "--config", str(cfg_path)]) == 0
    assert (out / "eval.csv").is_file()

    assert ea.run_cli(["train"]) == 2  # missing inputs are a usage failure
    assert ea.run_cli(["no-such-command"]) == 2
