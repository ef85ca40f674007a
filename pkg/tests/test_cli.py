import json

import numpy as np
import pytest

from bwgan import checkpoint, cli, spaces, training
from bwgan.nets import Critic

L2 = spaces.lp_space(2.0)


def write_signal(tmp_path, values, name="signal.txt"):
    path = tmp_path / name
    path.write_text(" ".join(str(v) for v in values) + "\n")
    return str(path)


def write_measure(tmp_path, rows, name):
    path = tmp_path / name
    path.write_text("\n".join(" ".join(str(v) for v in row) for row in rows) + "\n")
    return str(path)


def tiny_config_doc(out_dir, **train_overrides):
    train = {"lambda": 1.0, "gamma": 1.0, "latent_dim": 4,
             "critic_widths": [8, 8], "gen_widths": [8, 8], "n_critic": 1,
             "batch_size": 8, "total_iterations": 5, "lr": 1e-3,
             "w1_every": 3, "seed": 1}
    train.update(train_overrides)
    return {"space": {"family": "lp", "p": 2.0},
            "train": train,
            "output": {"directory": str(out_dir), "log_every": 2}}


# ---------------------------------------------------------------------------
# norm
# ---------------------------------------------------------------------------

def test_norm_command_output(tmp_path, capsys):
    path = write_signal(tmp_path, [3.0, -4.0])
    assert cli.main(["norm", path]) == cli.EXIT_OK
    out = capsys.readouterr().out.strip()
    assert out == f"norm={5.0:.12f} dual={5.0:.12f}"


def test_norm_command_l1_has_no_dual(tmp_path, capsys):
    path = write_signal(tmp_path, [3.0, -4.0])
    assert cli.main(["norm", path, "--p", "1"]) == cli.EXIT_OK
    out = capsys.readouterr().out.strip()
    assert out == f"norm={7.0:.12f} dual=n/a"


def test_norm_command_sobolev_shape(tmp_path, capsys):
    x = np.random.default_rng(0).standard_normal(64)
    path = write_signal(tmp_path, x)
    assert cli.main(["norm", path, "--space", "sobolev", "--s", "1.0",
                     "--shape", "8x8"]) == cli.EXIT_OK
    got = float(capsys.readouterr().out.split()[0].split("=")[1])
    sob = spaces.sobolev_space(1.0, 2.0, (8, 8))
    assert got == pytest.approx(spaces.norm(sob, x), abs=1e-10)


def test_norm_command_bad_shape(tmp_path, capsys):
    path = write_signal(tmp_path, np.zeros(60))
    assert cli.main(["norm", path, "--space", "sobolev",
                     "--shape", "6x10"]) == cli.EXIT_USAGE
    assert "power" in capsys.readouterr().err


def test_norm_command_missing_file(tmp_path, capsys):
    assert cli.main(["norm", str(tmp_path / "nope.txt")]) == cli.EXIT_USAGE


def test_norm_command_malformed_signal(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("1.0 two 3.0\n")
    assert cli.main(["norm", str(path)]) == cli.EXIT_USAGE


# ---------------------------------------------------------------------------
# wasserstein
# ---------------------------------------------------------------------------

def test_wasserstein_command(tmp_path, capsys):
    a = write_measure(tmp_path, [[1.0, 0.0, 0.0]], "a.txt")
    b = write_measure(tmp_path, [[1.0, 3.0, 4.0]], "b.txt")
    assert cli.main(["wasserstein", a, b]) == cli.EXIT_OK
    assert capsys.readouterr().out.strip() == "w1=5"


def test_wasserstein_command_p2(tmp_path, capsys):
    a = write_measure(tmp_path, [[0.5, 0.0], [0.5, 1.0]], "a.txt")
    b = write_measure(tmp_path, [[0.5, 2.0], [0.5, 3.0]], "b.txt")
    assert cli.main(["wasserstein", a, b, "--wp", "2"]) == cli.EXIT_OK
    assert capsys.readouterr().out.strip() == "w2=2"


def test_wasserstein_rejects_bad_weights(tmp_path, capsys):
    a = write_measure(tmp_path, [[0.7, 0.0]], "a.txt")
    b = write_measure(tmp_path, [[1.0, 1.0]], "b.txt")
    assert cli.main(["wasserstein", a, b]) == cli.EXIT_USAGE
    assert "sum" in capsys.readouterr().err


def test_wasserstein_rejects_ragged_measure(tmp_path, capsys):
    a = write_measure(tmp_path, [[0.5, 0.0, 1.0], [0.5, 2.0]], "a.txt")
    b = write_measure(tmp_path, [[1.0, 1.0]], "b.txt")
    assert cli.main(["wasserstein", a, b]) == cli.EXIT_USAGE


def test_wasserstein_check_dual(tmp_path, capsys):
    rng = np.random.default_rng(3)
    critic = Critic(2, (8,), "relu", rng=rng)
    ckpt = tmp_path / "critic.ckpt"
    checkpoint.save_tensors(ckpt, critic.mlp.params)
    a = write_measure(tmp_path, [[1.0, 0.0, 0.0]], "a.txt")
    b = write_measure(tmp_path, [[1.0, 1.0, 1.0]], "b.txt")
    assert cli.main(["wasserstein", a, b, "--check-dual", str(ckpt)]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[1].startswith("dual_estimate=")
    assert lines[2].startswith("gap=")
    w1 = float(lines[0].split("=")[1])
    est = float(lines[1].split("=")[1])
    gap = float(lines[2].split("=")[1])
    assert gap == pytest.approx(w1 - est, abs=1e-9)


# ---------------------------------------------------------------------------
# heuristics
# ---------------------------------------------------------------------------

def test_heuristics_uniform_cube(tmp_path, capsys):
    assert cli.main(["heuristics", "--dataset", "uniform_cube", "--dim", "12",
                     "--samples", "500"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    lam = float(lines[0].split()[0].split("=")[1])
    gam = float(lines[1].split()[0].split("=")[1])
    assert lam == pytest.approx(gam, rel=1e-12)  # L2 is self-dual
    assert lam == pytest.approx(2.0, rel=0.1)  # ~ sqrt(12 / 3)
    assert lines[2] == "samples=500"


def test_heuristics_rejects_p_one(capsys):
    assert cli.main(["heuristics", "--p", "1"]) == cli.EXIT_USAGE


def test_heuristics_rejects_zero_samples(capsys):
    assert cli.main(["heuristics", "--samples", "0"]) == cli.EXIT_USAGE


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def test_verify_single_suite_passes(capsys):
    assert cli.main(["verify", "--suite", "sobolev0"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "sobolev0: PASS" in out


def test_verify_fault_injection_fails(capsys):
    assert cli.main(["verify", "--suite", "holder",
                     "--perturb-dual-norm", "0.02"]) == cli.EXIT_VERIFY_FAIL
    assert "holder: FAIL" in capsys.readouterr().out


def test_verify_validates_config(tmp_path, capsys):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"sede": 1}}))
    assert cli.main(["verify", "--suite", "sobolev0",
                     "--config", str(path)]) == cli.EXIT_USAGE
    assert "sede" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def test_train_command_outputs(tmp_path, capsys):
    out_dir = tmp_path / "run"
    config = tmp_path / "run.json"
    config.write_text(json.dumps(tiny_config_doc(out_dir)))
    assert cli.main(["train", str(config)]) == cli.EXIT_OK

    columns = cli.read_metrics_csv(out_dir / "metrics.csv")
    assert columns["iter"] == [0, 2, 4]  # log_every 2 over 5 iterations
    assert all(v is not None for v in columns["critic_loss"])
    # w1 monitored on iterations 0 and 3; 3 is filtered out by log_every
    assert columns["exact_w1"][0] is not None
    assert columns["exact_w1"][1] is None

    gen = checkpoint.load_tensors(out_dir / "generator.ckpt")
    crit = checkpoint.load_tensors(out_dir / "critic.ckpt")
    assert any(k.startswith("gen.") for k in gen)
    assert any(k.startswith("critic.") for k in crit)

    summary = json.loads((out_dir / "run_summary.json").read_text())
    assert summary["iterations"] == 5
    assert summary["lambda"] == 1.0
    assert summary["dataset"] == "eight_gaussians"


def test_train_matches_library_run(tmp_path):
    out_dir = tmp_path / "run"
    config = tmp_path / "run.json"
    config.write_text(json.dumps(tiny_config_doc(out_dir)))
    assert cli.main(["train", str(config)]) == cli.EXIT_OK
    _, _, metrics = training.train(training.TrainConfig(
        space=L2, lam=1.0, gamma=1.0, latent_dim=4, critic_widths=(8, 8),
        gen_widths=(8, 8), n_critic=1, batch_size=8, total_iterations=5,
        lr=1e-3, w1_every=3, seed=1))
    columns = cli.read_metrics_csv(out_dir / "metrics.csv")
    for row, it in enumerate(columns["iter"]):
        assert columns["critic_loss"][row] == pytest.approx(
            metrics.critic_loss[it], rel=1e-10)


def test_train_rejects_unknown_key(tmp_path, capsys):
    config = tmp_path / "run.json"
    doc = tiny_config_doc(tmp_path / "run")
    doc["train"]["sede"] = 7
    config.write_text(json.dumps(doc))
    assert cli.main(["train", str(config)]) == cli.EXIT_USAGE
    assert "sede" in capsys.readouterr().err


def test_train_rejects_malformed_json(tmp_path, capsys):
    config = tmp_path / "run.json"
    config.write_text("{not json")
    assert cli.main(["train", str(config)]) == cli.EXIT_USAGE


def test_train_divergence_exit_code(tmp_path, capsys):
    out_dir = tmp_path / "run"
    config = tmp_path / "run.json"
    config.write_text(json.dumps(tiny_config_doc(
        out_dir, lr=1e100, total_iterations=30, w1_every=0)))
    with np.errstate(all="ignore"):
        assert cli.main(["train", str(config)]) == cli.EXIT_DIVERGED
    # partial metrics are still flushed
    assert (out_dir / "metrics.csv").exists()


# ---------------------------------------------------------------------------
# Metrics CSV and helpers
# ---------------------------------------------------------------------------

def test_metrics_csv_round_trip(tmp_path):
    metrics = training.TrainMetrics()
    metrics.append(0, 1.5, -0.25, 0.1, 0.9, 1e-7, 2.25, 2e-4, 0.0)
    metrics.append(1, 1.25, -0.5, 0.2, 1.1, 2e-7, None, 1e-4, 0.0)
    path = tmp_path / "metrics.csv"
    cli.write_metrics_csv(path, metrics)
    raw = path.read_text()
    lines = raw.split("\n")
    assert lines[0] == cli.METRICS_HEADER
    assert lines[2].split(",")[6] == ""  # empty exact_w1 slot
    assert "\r" not in raw
    columns = cli.read_metrics_csv(path)
    assert columns["iter"] == [0, 1]
    assert columns["exact_w1"] == [2.25, None]
    assert columns["lr"] == [2e-4, 1e-4]


def test_metrics_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("iteration,loss\n0,1.0\n")
    with pytest.raises(cli.CliError):
        cli.read_metrics_csv(path)


def test_format_value():
    assert cli.format_value(None) == ""
    assert cli.format_value(0.25) == "0.25"
    assert cli.format_value(1e-7) == "1e-07"


def test_critic_from_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    critic = Critic(3, (8, 8), "tanh", rng=rng)
    path = tmp_path / "critic.ckpt"
    checkpoint.save_tensors(path, critic.mlp.params)
    rebuilt = cli.critic_from_checkpoint(path, "tanh")
    X = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(rebuilt.value_batch(X), critic.value_batch(X))


def test_critic_from_checkpoint_rejects_generator(tmp_path):
    from bwgan.nets import Generator
    gen = Generator(4, 2, (8,), "relu", rng=np.random.default_rng(5))
    path = tmp_path / "gen.ckpt"
    checkpoint.save_tensors(path, gen.mlp.params)
    with pytest.raises(cli.CliError):
        cli.critic_from_checkpoint(path)


# ---------------------------------------------------------------------------
# Environment handling
# ---------------------------------------------------------------------------

def test_worker_count_env(monkeypatch, capsys):
    monkeypatch.setenv("BWGAN_THREADS", "4")
    assert cli.worker_count() == 4
    monkeypatch.setenv("BWGAN_THREADS", "abc")
    assert cli.main(["verify", "--suite", "sobolev0"]) == cli.EXIT_USAGE
    monkeypatch.setenv("BWGAN_THREADS", "0")
    assert cli.main(["verify", "--suite", "sobolev0"]) == cli.EXIT_USAGE
    monkeypatch.delenv("BWGAN_THREADS")
    assert cli.worker_count() >= 1
