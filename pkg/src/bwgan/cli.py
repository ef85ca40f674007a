"""Command-line front end.

Subcommands: ``norm``, ``heuristics``, ``train``, ``wasserstein``,
``verify``.  Exit codes: 0 success, 1 verification failure, 2 usage or
config error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint, datasets, lipschitz, spaces, training
from .nets import Critic
from .spaces import SpaceSpec
from .training import DivergenceError, TrainConfig
from .transport import DiscreteMeasure, TransportError, dual_estimate, wasserstein_p_exact

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

METRICS_HEADER = ("iter,critic_loss,gen_loss,penalty_mean,"
                  "grad_dual_norm_mean,drift_term,exact_w1,lr")


class CliError(Exception):
    """User-facing error; message printed, exit code 2."""


def worker_count() -> int:
    """Worker cap from BWGAN_THREADS, defaulting to hardware parallelism."""
    raw = os.environ.get("BWGAN_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"BWGAN_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise CliError("BWGAN_THREADS must be >= 1")
    return n


# ---------------------------------------------------------------------------
# Space flags and config schema
# ---------------------------------------------------------------------------

def add_space_flags(parser):
    parser.add_argument("--space", choices=("lp", "sobolev"), default="lp")
    parser.add_argument("--p", type=float, default=2.0)
    parser.add_argument("--s", type=float, default=0.0)
    parser.add_argument("--frequency-scale", type=float, default=5.0)
    parser.add_argument("--measure", choices=spaces.MEASURES, default="counting")
    parser.add_argument("--shape", type=str, default=None,
                        help="signal shape like 16x16 or 3x16x16 (sobolev)")


def parse_shape(raw: str | None, flat_size: int | None):
    if raw is None:
        return (flat_size,) if flat_size else None
    try:
        return tuple(int(d) for d in raw.lower().split("x"))
    except ValueError:
        raise CliError(f"bad --shape {raw!r}; expected e.g. 16x16")


def space_from_flags(args, flat_size=None) -> SpaceSpec:
    try:
        if args.space == "lp":
            return spaces.lp_space(args.p, args.measure)
        shape = parse_shape(args.shape, flat_size)
        if shape is None:
            raise CliError("sobolev space needs --shape or an input signal")
        return spaces.sobolev_space(args.s, args.p, shape,
                                    args.frequency_scale, args.measure)
    except spaces.SpaceError as exc:
        raise CliError(str(exc))


SPACE_KEYS = {"family", "p", "s", "frequency_scale", "measure", "signal_shape"}
TRAIN_KEYS = {"lambda", "gamma", "latent_dim", "critic_widths", "gen_widths",
              "activation", "n_critic", "batch_size", "total_iterations",
              "lr", "beta1", "beta2", "linear_lr_decay", "drift_coefficient",
              "seed", "dataset", "w1_every", "heuristic_samples"}
OUTPUT_KEYS = {"directory", "log_every"}
TOP_KEYS = {"space", "train", "output"}


def _check_keys(section: dict, allowed: set, where: str):
    for key in section:
        if key not in allowed:
            raise CliError(f"unknown key {key!r} in {where} section")


def load_run_config(path):
    """Parse and strictly validate a JSON run configuration."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}")
    if not isinstance(doc, dict):
        raise CliError("config root must be an object")
    _check_keys(doc, TOP_KEYS, "top-level")
    space_doc = doc.get("space", {})
    train_doc = doc.get("train", {})
    output_doc = doc.get("output", {})
    for section, allowed, where in ((space_doc, SPACE_KEYS, "space"),
                                    (train_doc, TRAIN_KEYS, "train"),
                                    (output_doc, OUTPUT_KEYS, "output")):
        if not isinstance(section, dict):
            raise CliError(f"{where} section must be an object")
        _check_keys(section, allowed, where)

    dataset = train_doc.get("dataset", "eight_gaussians")
    try:
        dim = datasets.dataset_dim(dataset)
    except Exception:
        raise CliError(f"unknown dataset {dataset!r}")

    family = space_doc.get("family", "lp")
    try:
        if family == "lp":
            space = spaces.lp_space(space_doc.get("p", 2.0),
                                    space_doc.get("measure", "counting"))
        elif family == "sobolev":
            default_shape = (16, 16) if dataset == "rectangles" else (dim,)
            space = spaces.sobolev_space(
                space_doc.get("s", 0.0), space_doc.get("p", 2.0),
                tuple(space_doc.get("signal_shape", default_shape)),
                space_doc.get("frequency_scale", 5.0),
                space_doc.get("measure", "counting"))
        else:
            raise CliError(f"unsupported space family {family!r} in config")
    except spaces.SpaceError as exc:
        raise CliError(str(exc))

    try:
        config = TrainConfig(
            space=space,
            lam=train_doc.get("lambda", "auto"),
            gamma=train_doc.get("gamma", "auto"),
            latent_dim=train_doc.get("latent_dim", 32),
            critic_widths=tuple(train_doc.get("critic_widths", (128, 128, 128))),
            gen_widths=tuple(train_doc.get("gen_widths", (128, 128, 128))),
            activation=train_doc.get("activation", "relu"),
            n_critic=train_doc.get("n_critic", 5),
            batch_size=train_doc.get("batch_size", 64),
            total_iterations=train_doc.get("total_iterations", 3000),
            lr=train_doc.get("lr", 1e-3),
            beta1=train_doc.get("beta1", 0.0),
            beta2=train_doc.get("beta2", 0.9),
            linear_lr_decay=train_doc.get("linear_lr_decay", True),
            drift_coefficient=train_doc.get("drift_coefficient", 1e-5),
            seed=train_doc.get("seed", 0),
            dataset=dataset,
            w1_every=train_doc.get("w1_every", 50),
            heuristic_samples=train_doc.get("heuristic_samples", 1024),
        )
    except ValueError as exc:
        raise CliError(str(exc))
    out_dir = output_doc.get("directory", "runs")
    log_every = int(output_doc.get("log_every", 1))
    if log_every < 1:
        raise CliError("log_every must be >= 1")
    return config, out_dir, log_every


# ---------------------------------------------------------------------------
# Metrics CSV
# ---------------------------------------------------------------------------

def format_value(v) -> str:
    return "" if v is None else f"{v:.12g}"


def write_metrics_csv(path, metrics, log_every: int = 1):
    with open(path, "w", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for i in range(len(metrics)):
            if metrics.iterations[i] % log_every:
                continue
            row = [str(metrics.iterations[i]),
                   format_value(metrics.critic_loss[i]),
                   format_value(metrics.gen_loss[i]),
                   format_value(metrics.penalty_mean[i]),
                   format_value(metrics.grad_dual_norm_mean[i]),
                   format_value(metrics.drift_term[i]),
                   format_value(metrics.exact_w1[i]),
                   format_value(metrics.lr[i])]
            fh.write(",".join(row) + "\n")


def read_metrics_csv(path):
    """Parse an emitted metrics file back into column lists."""
    with open(path, newline="\n") as fh:
        header = fh.readline().rstrip("\n")
        if header != METRICS_HEADER:
            raise CliError(f"unexpected metrics header: {header!r}")
        columns = {name: [] for name in header.split(",")}
        names = header.split(",")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            for name, raw in zip(names, parts):
                if name == "iter":
                    columns[name].append(int(raw))
                else:
                    columns[name].append(float(raw) if raw else None)
    return columns


# ---------------------------------------------------------------------------
# Signal and measure file I/O
# ---------------------------------------------------------------------------

def read_signal(path) -> np.ndarray:
    try:
        with open(path) as fh:
            values = [float(tok) for tok in fh.read().split()]
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}")
    except ValueError as exc:
        raise CliError(f"malformed signal file {path}: {exc}")
    if not values:
        raise CliError(f"empty signal file {path}")
    return np.asarray(values)


def read_measure(path) -> DiscreteMeasure:
    """One support point per line: weight then coordinates."""
    weights, points = [], []
    try:
        with open(path) as fh:
            for ln, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                toks = line.split()
                if len(toks) < 2:
                    raise CliError(f"{path}:{ln}: need weight and coordinates")
                try:
                    row = [float(t) for t in toks]
                except ValueError:
                    raise CliError(f"{path}:{ln}: non-numeric entry")
                weights.append(row[0])
                points.append(row[1:])
    except OSError as exc:
        raise CliError(f"cannot read measure: {exc}")
    if not points:
        raise CliError(f"empty measure file {path}")
    if len({len(p) for p in points}) != 1:
        raise CliError(f"{path}: inconsistent point dimensions")
    weights = np.asarray(weights)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise CliError(
            f"{path}: weights sum to {weights.sum():.12g}, expected 1")
    weights = weights / weights.sum()
    return DiscreteMeasure(np.asarray(points), weights)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_norm(args) -> int:
    x = read_signal(args.input)
    space = space_from_flags(args, flat_size=x.size)
    value = spaces.norm(space, x)
    if space.p > 1.0:
        dual = spaces.dual_norm(space, x)
        print(f"norm={value:.12f} dual={dual:.12f}")
    else:
        print(f"norm={value:.12f} dual=n/a")
    return EXIT_OK


def uniform_cube(dim):
    def sampler(rng, n):
        return rng.uniform(-1.0, 1.0, size=(n, dim))
    return sampler


def cmd_heuristics(args) -> int:
    if args.samples < 1:
        raise CliError("need --samples >= 1")
    rng = np.random.default_rng(args.seed)
    if args.dataset == "uniform_cube":
        sampler = uniform_cube(args.dim)
        dim = args.dim
    else:
        sampler = datasets.make_sampler(args.dataset)
        dim = datasets.dataset_dim(args.dataset)
    space = space_from_flags(args, flat_size=dim)
    if space.p <= 1.0:
        raise CliError("heuristics need p > 1 (dual norm)")
    # chunked to keep memory flat for large dim * samples
    norms, duals = [], []
    remaining = args.samples
    while remaining > 0:
        chunk = sampler(rng, min(remaining, 2048))
        norms.append(spaces.norm_batch(space, chunk))
        duals.append(spaces.dual_norm_batch(space, chunk))
        remaining -= len(chunk)
    norms = np.concatenate(norms)
    duals = np.concatenate(duals)
    n = len(norms)
    lam_se = norms.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    gam_se = duals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    print(f"lambda={norms.mean():.12g} stderr={lam_se:.6g}")
    print(f"gamma={duals.mean():.12g} stderr={gam_se:.6g}")
    print(f"samples={n}")
    return EXIT_OK


def cmd_train(args) -> int:
    config, out_dir, log_every = load_run_config(args.config)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    try:
        generator, critic, metrics = training.train(config)
    except DivergenceError as exc:
        write_metrics_csv(csv_path, exc.metrics, log_every)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_metrics_csv(csv_path, metrics, log_every)
    checkpoint.save_tensors(os.path.join(out_dir, "generator.ckpt"),
                            generator.mlp.params)
    checkpoint.save_tensors(os.path.join(out_dir, "critic.ckpt"),
                            critic.mlp.params)
    summary = {
        "iterations": len(metrics),
        "lambda": metrics.lambda_value,
        "gamma": metrics.gamma_value,
        "lambda_stderr": metrics.lambda_stderr,
        "gamma_stderr": metrics.gamma_stderr,
        "final_critic_loss": metrics.critic_loss[-1] if len(metrics) else None,
        "activation": config.activation,
        "dataset": config.dataset,
    }
    with open(os.path.join(out_dir, "run_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"wrote {csv_path}")
    return EXIT_OK


def critic_from_checkpoint(path, activation="relu") -> Critic:
    """Rebuild a critic from checkpoint tensors; widths come from shapes."""
    tensors = checkpoint.load_tensors(path)
    widths = []
    i = 0
    while f"critic.w{i}" in tensors:
        widths.append(tensors[f"critic.w{i}"].shape[1])
        i += 1
    if not widths or widths[-1] != 1:
        raise CliError(f"{path}: not a critic checkpoint")
    in_dim = tensors["critic.w0"].shape[0]
    critic = Critic(in_dim, tuple(widths[:-1]), activation)
    critic.mlp.set_params(tensors)
    return critic


def cmd_wasserstein(args) -> int:
    mu = read_measure(args.measure_a)
    nu = read_measure(args.measure_b)
    space = space_from_flags(args, flat_size=mu.points.shape[1])
    try:
        value, _ = wasserstein_p_exact(mu, nu, space, args.wp)
    except TransportError as exc:
        raise CliError(str(exc))
    print(f"w{args.wp:g}={value:.12g}")
    if args.check_dual:
        critic = critic_from_checkpoint(args.check_dual, args.activation)
        est = dual_estimate(critic, mu, nu)
        print(f"dual_estimate={est:.12g}")
        print(f"gap={value - est:.12g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------

def _suite_spaces():
    return [spaces.lp_space(1.3), spaces.lp_space(2.0), spaces.lp_space(10.0),
            spaces.sobolev_space(-1.0, 2.0, (8, 8)),
            spaces.sobolev_space(1.0, 2.0, (8, 8))]


def suite_lemma1(rng, perturb=0.0):
    """Difference quotients dominated by segment gradient suprema."""
    passed = failed = 0
    for space in _suite_spaces():
        dim = space.size or 64
        critic = Critic(dim, (24, 24), "tanh", rng=rng)
        for _ in range(40):
            x = rng.standard_normal(dim)
            y = rng.standard_normal(dim)
            quot = lipschitz.difference_quotient(critic, space, x, y)
            sup = lipschitz.segment_grad_sup(critic, space, x, y, samples=100)
            if quot <= sup + 1e-6:
                passed += 1
            else:
                failed += 1
    return passed, failed


def suite_holder(rng, perturb=0.0):
    """Dual-norm inequality plus exactness of the analytic maximizer."""
    passed = failed = 0
    for space in _suite_spaces():
        dim = space.size or 64
        for _ in range(40):
            g = rng.standard_normal(dim)
            dual = spaces.dual_norm(space, g) * (1.0 + perturb)
            x = rng.standard_normal(dim)
            ok = spaces.pairing(g, x) <= dual * spaces.norm(space, x) + 1e-10
            h = spaces.dual_norm_maximizer(space, g)
            attained = spaces.pairing(g, h) / spaces.norm(space, h)
            ok = ok and abs(attained - dual) <= 1e-10 * max(1.0, dual)
            passed += ok
            failed += not ok
    return passed, failed


def suite_sobolev0(rng, perturb=0.0):
    """W^{0,p} norms agree with L^p norms."""
    passed = failed = 0
    for p in (1.3, 2.0, 4.0):
        lp = spaces.lp_space(p)
        w0 = spaces.sobolev_space(0.0, p, (16, 16))
        for _ in range(50):
            x = rng.standard_normal(256)
            a = spaces.norm(w0, x)
            b = spaces.norm(lp, x)
            ok = abs(a - b) <= 1e-8 * max(1.0, b)
            passed += ok
            failed += not ok
    return passed, failed


def suite_doublebackprop(rng, perturb=0.0):
    """Penalty parameter gradients match central finite differences."""
    from .training import CriticLossGraph
    passed = failed = 0
    space = spaces.lp_space(2.0)
    critic = Critic(6, (12,), "softplus", rng=rng)
    graph = CriticLossGraph(critic, space, 10.0, 1.0, 0.0, 4)
    real = rng.standard_normal((4, 6))
    fake = rng.standard_normal((4, 6))
    xhat = training.interpolate(real, fake, rng.random(4))
    _, grads = graph.losses_and_grads(real, fake, xhat)
    eps = 1e-5
    for name, grad in grads.items():
        params = critic.mlp.params[name]
        flat = params.reshape(-1)
        idxs = rng.choice(flat.size, size=min(8, flat.size), replace=False)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = graph.losses(real, fake, xhat)["loss"]
            flat[idx] = orig - eps
            lo = graph.losses(real, fake, xhat)["loss"]
            flat[idx] = orig
            fd = (hi - lo) / (2.0 * eps)
            scale = max(abs(fd), 1e-6)
            ok = abs(grad.reshape(-1)[idx] - fd) <= 1e-4 * scale
            passed += ok
            failed += not ok
    return passed, failed


SUITES = {
    "lemma1": suite_lemma1,
    "holder": suite_holder,
    "sobolev0": suite_sobolev0,
    "doublebackprop": suite_doublebackprop,
}


def cmd_verify(args) -> int:
    if args.config is not None:
        load_run_config(args.config)  # strict validation only
    names = [args.suite] if args.suite else list(SUITES)
    any_failed = False
    for name in names:
        rng = np.random.default_rng(args.seed)
        passed, failed = SUITES[name](rng, perturb=args.perturb_dual_norm)
        status = "PASS" if failed == 0 else "FAIL"
        print(f"{name}: {status} ({passed} passed, {failed} failed)")
        any_failed = any_failed or failed
    return EXIT_VERIFY_FAIL if any_failed else EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="bwgan",
        description="Banach-norm GAN toolkit: norms, transport, training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("norm", help="norm and dual norm of a signal file")
    p.add_argument("input")
    add_space_flags(p)
    p.set_defaults(func=cmd_norm)

    p = sub.add_parser("heuristics", help="lambda/gamma parameter heuristics")
    p.add_argument("--dataset", default="eight_gaussians",
                   choices=sorted(datasets.SAMPLERS) + ["uniform_cube"])
    p.add_argument("--dim", type=int, default=3072,
                   help="dimension for uniform_cube")
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    add_space_flags(p)
    p.set_defaults(func=cmd_heuristics)

    p = sub.add_parser("train", help="run a training configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("wasserstein", help="exact W_p between measure files")
    p.add_argument("measure_a")
    p.add_argument("measure_b")
    p.add_argument("--wp", type=float, default=1.0, metavar="P",
                   help="transport exponent")
    p.add_argument("--check-dual", metavar="CHECKPOINT",
                   help="also report the critic dual estimate and gap")
    p.add_argument("--activation", default="relu")
    add_space_flags(p)
    p.set_defaults(func=cmd_wasserstein)

    p = sub.add_parser("verify", help="run property verification suites")
    p.add_argument("--config", default=None)
    p.add_argument("--suite", choices=sorted(SUITES), default=None)
    p.add_argument("--perturb-dual-norm", type=float, default=0.0,
                   help="fault injection for the Hoelder suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        worker_count()  # validates BWGAN_THREADS early
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
