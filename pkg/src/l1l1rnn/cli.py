"""Command-line pipeline: data prep, solving, training, evaluation,
gradient checking, and PSNR-vs-rate sweeps.

Every subcommand is deterministic under a fixed seed and writes
machine-readable CSV next to a human-readable summary on stdout. Options
can come from a TOML file (--config); explicit command-line flags override
the file, and the merged, effective configuration is echoed into the
output directory for reproducibility.

Exit codes: 0 success, 2 I/O or format errors, 3 configuration or
dimension mismatches, 4 numeric failures. cmd_gradcheck exits 1 when the
finite-difference comparison fails, since that is a verdict, not a fault.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import warnings

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import data as datamod
from .checkpoint import read_checkpoint
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    ParameterError,
)
from .metrics import evaluate, format_report, psnr, report_to_csv, zero_fraction
from .solvers import (
    Operators,
    SolverConfig,
    l1l1_solve_sequence,
    power_iteration_bound,
    sista_solve_sequence,
)
from .training import (
    MODEL_KINDS,
    TrainConfig,
    TrainData,
    activation_of,
    gradient_check,
    model_from_raw,
    model_kind_of,
    overcomplete_dct,
    split_checkpoint_tensors,
    train,
)

__all__ = ["main", "parse_rate"]

DATA_DIR_ENV = "L1L1_DATA_DIR"


def parse_rate(token, n):
    """Measurement count for a compression-rate token.

    Accepts "50%", a fraction "1/3", or a plain ratio "0.25"; returns
    m = round(rate * n). Percent values that are close to a reciprocal
    (33% -> 1/3) are mapped to that exact fraction, so the published rate
    labels give m = 128/85/64/51 on n = 256.
    """
    token = str(token).strip()
    try:
        if token.endswith("%"):
            p = float(token[:-1])
            if p <= 0.0 or p > 100.0:
                raise ConfigError(f"rate {token!r} is outside (0, 100]%")
            recip = round(100.0 / p)
            if recip >= 1 and abs(100.0 / recip - p) <= 0.5:
                rate = 1.0 / recip
            else:
                rate = p / 100.0
        elif "/" in token:
            num, den = token.split("/")
            rate = float(num) / float(den)
        else:
            rate = float(token)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse rate {token!r}: {exc}") from exc
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"rate {token!r} must land in (0, 1]")
    m = int(round(rate * n))
    return max(1, min(m, n))


# ---------------------------------------------------------------------------
# config plumbing

def _load_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merge_config(defaults, args):
    """defaults < TOML file < explicit flags; returns a plain dict."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in _load_toml(config_path).items():
            key = key.replace("-", "_")
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            merged[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _echo_config(out_dir, name, cfg):
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"# effective configuration, subcommand {name}"]
    for key in sorted(cfg):
        if cfg[key] is None:
            continue
        lines.append(f"{key} = {_toml_value(cfg[key])}")
    with open(os.path.join(out_dir, "effective_config.toml"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _resolve_data_path(explicit):
    """--data wins; else L1L1_DATA_DIR (a file, or a directory holding
    dataset.raw); else None."""
    if explicit:
        return explicit
    root = os.environ.get(DATA_DIR_ENV)
    if not root:
        return None
    if os.path.isdir(root):
        return os.path.join(root, "dataset.raw")
    return root


# ---------------------------------------------------------------------------
# shared data assembly

def _generators(n, d, data_seed):
    """Ground-truth operators for synthetic sequences: identity dynamics
    and a seeded unit-column Gaussian dictionary."""
    rng = np.random.default_rng((int(data_seed), 0xD1C7))
    D = rng.normal(0.0, 1.0, (int(n), int(d)))
    D /= np.linalg.norm(D, axis=0, keepdims=True)
    return np.eye(int(d)), D


def _synthetic_signals(cfg, num_sequences):
    spec = datamod.SyntheticSpec(
        n=cfg["n"], d=cfg["d"], m=max(1, cfg.get("m") or 1), T=cfg["T"],
        s0=cfg["s0"], innovation_sparsity=cfg["innovation"],
        seed=cfg["data_seed"],
    )
    G, D = _generators(cfg["n"], cfg["d"], cfg["data_seed"])
    signals, codes = datamod.synthetic_batch(spec, G, D, num_sequences)
    return signals, codes


def _signals_from_file(path, fmt=None):
    dataset = datamod.load_video_tensor(path, format=fmt)
    return datamod.vectorize(dataset)


def _train_val_signals(cfg):
    """(train, val) signal stacks from either source, reproducibly."""
    n_train, n_val = int(cfg["train_sequences"]), int(cfg["val_sequences"])
    if cfg["synthetic"]:
        signals, _ = _synthetic_signals(cfg, n_train + n_val)
        return signals[:n_train], signals[n_train:]
    path = _resolve_data_path(cfg.get("data"))
    if path is None:
        raise ConfigError(
            f"no data source: pass --data, set {DATA_DIR_ENV}, or use --synthetic"
        )
    signals = _signals_from_file(path)
    N = signals.shape[0]
    rest = N - n_train - n_val
    if rest < 0:
        raise ConfigError(f"dataset holds {N} sequences, asked for {n_train}+{n_val}")
    splits = datamod.make_splits(N, (n_train, n_val, rest), cfg["data_seed"])
    return signals[splits.train], signals[splits.val]


def _measurement_count(cfg, n):
    if cfg.get("m"):
        m = int(cfg["m"])
        if not 1 <= m <= n:
            raise ConfigError(f"m must lie in [1, {n}], got {m}")
        return m
    if cfg.get("rate"):
        return parse_rate(cfg["rate"], n)
    raise ConfigError("specify --m or --rate")


# ---------------------------------------------------------------------------
# subcommands

_PREP_DEFAULTS = {"factor": 4}


def cmd_prep(args):
    cfg = _merge_config(_PREP_DEFAULTS, args)
    dataset = datamod.load_video_tensor(args.input)
    tensor = datamod.bilinear_downscale(dataset.tensor, int(cfg["factor"]))
    datamod.write_raw(args.output, tensor)
    N, T, H, W = tensor.shape
    print(f"wrote {args.output}: {N} sequences, {T} frames, {H}x{W} pixels")
    return 0


_SOLVE_DEFAULTS = {
    "solver": "l1l1", "iters": 50, "lambda1": 0.1, "lambda2": 0.1,
    "alpha": None, "n": 64, "d": 128, "m": 16, "T": 10, "s0": 8,
    "innovation": 4, "sequences": 8, "data_seed": 1234, "data": None,
    "synthetic": False, "rate": None, "out_dir": "solve_out",
}


def cmd_solve(args):
    cfg = _merge_config(_SOLVE_DEFAULTS, args)
    if cfg["solver"] not in ("ista", "sista", "l1l1"):
        raise ConfigError(f"unknown solver {cfg['solver']!r}")
    if cfg["synthetic"]:
        signals, _ = _synthetic_signals(cfg, int(cfg["sequences"]))
    else:
        path = _resolve_data_path(cfg.get("data"))
        if path is None:
            raise ConfigError(
                f"no data source: pass --data, set {DATA_DIR_ENV}, or use --synthetic"
            )
        signals = _signals_from_file(path)[: int(cfg["sequences"])]
    N, n, T = signals.shape
    d = int(cfg["d"])
    m = _measurement_count(cfg, n)

    # synthetic runs solve against the operators that generated the data;
    # file data gets the overcomplete DCT and identity dynamics
    if cfg["synthetic"]:
        G, D = _generators(n, d, cfg["data_seed"])
    else:
        D = overcomplete_dct(n, d)
        G = np.eye(d)
    A = np.random.default_rng((int(cfg["data_seed"]), 0x5E25E)).normal(
        0.0, 1.0, (m, n)) / np.sqrt(m)
    if cfg["solver"] == "ista":
        # zero coupling and zero reference reduce the sequence solver to
        # independent per-frame soft thresholding from a zero start
        G = np.zeros((d, d))
    ops = Operators(A=A, D=D, G=G)
    alpha = float(cfg["alpha"]) if cfg["alpha"] is not None else power_iteration_bound(ops)
    lambda2 = 0.0 if cfg["solver"] == "ista" else float(cfg["lambda2"])
    solver_cfg = SolverConfig(alpha=alpha, lambda1=float(cfg["lambda1"]),
                              lambda2=lambda2, inner_iters=int(cfg["iters"]))

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(out_dir, "solve", cfg)

    solve = sista_solve_sequence if cfg["solver"] == "sista" else l1l1_solve_sequence
    codes = np.empty((N, d, T))
    shat = np.empty_like(signals)
    traces = None
    with warnings.catch_warnings():
        warnings.simplefilter("once")
        for i in range(N):
            x_seq = A @ signals[i]
            if i == 0:
                codes[i], traces = solve(x_seq, ops, solver_cfg, return_trace=True)
            else:
                codes[i] = solve(x_seq, ops, solver_cfg)
            shat[i] = D @ codes[i]

    with open(os.path.join(out_dir, "trace.csv"), "w") as fh:
        fh.write("frame,iteration,objective\n")
        for t, trace in enumerate(traces):
            for it, value in enumerate(trace):
                fh.write(f"{t},{it},{repr(float(value))}\n")
    datamod.write_raw(os.path.join(out_dir, "recon.raw"), shat)
    psnrs = [psnr(signals[i], shat[i]) for i in range(N)]
    with open(os.path.join(out_dir, "psnr.csv"), "w") as fh:
        fh.write("sequence_id,psnr_db\n")
        for i, value in enumerate(psnrs):
            fh.write(f"{i},{value:.10g}\n")
        fh.write(f"mean,{float(np.mean(psnrs)):.10g}\n")
    print(f"solver {cfg['solver']}: {N} sequences of {T} frames, m={m}, alpha={alpha:.6g}")
    print(f"mean psnr     {float(np.mean(psnrs)):.3f} dB")
    print(f"zero fraction {zero_fraction(codes):.4f}")
    return 0


_TRAIN_DEFAULTS = {
    "model": "l1l1_rnn", "epochs": 30, "learning_rate": 3e-4, "batch_size": 16,
    "weight_decay": 0.01, "K": 3, "seed": 0, "n": 64, "d": 128, "m": 16,
    "T": 10, "s0": 8, "innovation": 4, "train_sequences": 200,
    "val_sequences": 50, "data_seed": 1234, "data": None, "synthetic": False,
    "rate": None, "activation": "tanh", "dict_init": "overcomplete_dct",
    "g_init": "identity", "lambda1_init": 0.02, "lambda2_init": 0.02,
    "alpha_init": 1.0, "grad_clip": 5.0, "resume": None, "out_dir": "train_out",
}


def _train_config(cfg):
    return TrainConfig(
        epochs=int(cfg["epochs"]), learning_rate=float(cfg["learning_rate"]),
        batch_size=int(cfg["batch_size"]), weight_decay=float(cfg["weight_decay"]),
        K=int(cfg["K"]), seed=int(cfg["seed"]),
        lambda1_init=float(cfg["lambda1_init"]),
        lambda2_init=float(cfg["lambda2_init"]),
        alpha_init=float(cfg["alpha_init"]), grad_clip=float(cfg["grad_clip"]),
    )


def cmd_train(args):
    cfg = _merge_config(_TRAIN_DEFAULTS, args)
    if cfg["model"] not in MODEL_KINDS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}, got {cfg['model']!r}")
    train_signals, val_signals = _train_val_signals(cfg)
    data = TrainData(train_signals=train_signals, val_signals=val_signals)
    m = _measurement_count(cfg, data.n)
    out_dir = cfg["out_dir"]
    _echo_config(out_dir, "train", cfg)
    result = train(
        data, cfg["model"], _train_config(cfg), m=m, d=int(cfg["d"]),
        out_dir=out_dir, resume_from=cfg.get("resume"),
        dict_init=cfg["dict_init"], g_init=cfg["g_init"],
        activation=cfg["activation"], log=print,
    )
    if result.curve:
        first, last = result.curve[0], result.curve[-1]
        print(f"validation psnr: epoch 0 {first[2]:.3f} dB, final {last[2]:.3f} dB, "
              f"best {result.best_val_psnr:.3f} dB at epoch {result.best_epoch}")
    else:
        print("no epochs requested; initial checkpoint written")
    print(f"checkpoints in {out_dir}")
    return 0


# The n/d/m/T entries only fix the flag types; cmd_eval replaces their
# values with the checkpoint's stored dimensions before merging.
_EVAL_DEFAULTS = {
    "split": "val", "n": 64, "d": 128, "m": 16, "T": 10, "s0": 8,
    "innovation": 4, "train_sequences": 200, "val_sequences": 50,
    "data_seed": 1234, "data": None, "synthetic": False, "rate": None,
    "out_dir": "eval_out",
}


def cmd_eval(args):
    dims, tensors = read_checkpoint(args.checkpoint)
    # dims default from the checkpoint so eval needs only a checkpoint and a
    # split; flags and config files still override.
    defaults = dict(_EVAL_DEFAULTS, m=dims[0], n=dims[1], d=dims[2], T=dims[4])
    cfg = _merge_config(defaults, args)
    raw, _, meta = split_checkpoint_tensors(tensors)
    kind = model_kind_of(meta)
    train_signals, val_signals = _train_val_signals(cfg)
    signals = {"train": train_signals, "val": val_signals}.get(cfg["split"])
    if signals is None:
        raise ConfigError(f"unknown split {cfg['split']!r}; use train or val")
    if kind == "l1l1_rnn":
        model = model_from_raw(raw, K=dims[3], T=signals.shape[2])
    else:
        model = raw
    report = evaluate(model, signals, activation=activation_of(meta))
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _echo_config(out_dir, "eval", cfg)
    with open(os.path.join(out_dir, "eval.csv"), "w") as fh:
        fh.write(report_to_csv(report))
    print(f"model {kind}, split {cfg['split']}, checkpoint epoch {int(meta.get('epoch', 0))}")
    print(format_report(report))
    # full-precision value so downstream tooling can compare exactly
    print(f"mean_psnr_db={repr(report.mean_psnr_db)}")
    return 0


_GRADCHECK_DEFAULTS = {
    "seed": 0, "m": 3, "n": 6, "d": 8, "K": 2, "T": 3, "step": 1e-5,
    "corrupt_grad": False,
}


def cmd_gradcheck(args):
    cfg = _merge_config(_GRADCHECK_DEFAULTS, args)
    report = gradient_check(
        seed=int(cfg["seed"]), dims=(int(cfg["m"]), int(cfg["n"]), int(cfg["d"])),
        K=int(cfg["K"]), T=int(cfg["T"]), step=float(cfg["step"]),
        corrupt=bool(cfg["corrupt_grad"]),
    )
    print(f"instance seed {report.seed}, boundary margin {report.margin:.3e}")
    for name in sorted(report.per_param):
        print(f"  {name:12s} max rel err {report.per_param[name]:.3e}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: max relative error {report.max_rel_err:.3e} "
          f"(tolerance {report.tolerance:g})")
    return 0 if report.passed else 1


_SWEEP_DEFAULTS = dict(_TRAIN_DEFAULTS)
_SWEEP_DEFAULTS.update({
    "rates": "50%,33%,25%,20%", "models": "l1l1_rnn,stacked_rnn",
    "jobs": 1, "out_dir": "sweep_out", "m": None,
})


def _sweep_cell(cfg, model, token, m, cell_dir):
    cell_cfg = dict(cfg, model=model, m=m, rate=None, out_dir=cell_dir)
    train_signals, val_signals = _train_val_signals(cell_cfg)
    data = TrainData(train_signals=train_signals, val_signals=val_signals)
    result = train(data, model, _train_config(cell_cfg), m=m, d=int(cfg["d"]),
                   out_dir=cell_dir, dict_init=cfg["dict_init"],
                   g_init=cfg["g_init"], activation=cfg["activation"])
    return {"model": model, "rate": token, "m": m,
            "mean_psnr_db": result.best_val_psnr,
            "best_epoch": result.best_epoch}


def cmd_sweep(args):
    cfg = _merge_config(_SWEEP_DEFAULTS, args)
    rates = [tok.strip() for tok in str(cfg["rates"]).split(",") if tok.strip()]
    models = [tok.strip() for tok in str(cfg["models"]).split(",") if tok.strip()]
    for model in models:
        if model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {model!r}")
    if not rates or not models:
        raise ConfigError("sweep needs at least one rate and one model")
    out_dir = cfg["out_dir"]
    cells_dir = os.path.join(out_dir, "cells")
    os.makedirs(cells_dir, exist_ok=True)
    _echo_config(out_dir, "sweep", cfg)

    n = int(cfg["n"])
    jobs = max(1, int(cfg["jobs"]))
    work = []
    for model in models:
        for token in rates:
            m = parse_rate(token, n)
            work.append((model, token, m))

    results = {}

    def run_cell(model, token, m):
        cache = os.path.join(cells_dir, f"{model}_m{m}.json")
        if os.path.exists(cache):
            with open(cache) as fh:
                return json.load(fh), True
        cell = _sweep_cell(cfg, model, token, m, os.path.join(cells_dir, f"{model}_m{m}"))
        with open(cache, "w") as fh:
            json.dump(cell, fh, indent=1)
        return cell, False

    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(run_cell, *item): item for item in work}
        for future in concurrent.futures.as_completed(futures):
            model, token, m = futures[future]
            try:
                cell, cached = future.result()
            except Exception as exc:
                print(f"cell ({model}, {token}) FAILED: {exc}", file=sys.stderr)
                results[(model, token)] = None
                continue
            results[(model, token)] = cell["mean_psnr_db"]
            note = " (cached)" if cached else ""
            print(f"cell ({model}, {token}) m={m}: {cell['mean_psnr_db']:.3f} dB{note}")

    with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
        fh.write("model," + ",".join(rates) + "\n")
        for model in models:
            row = [model]
            for token in rates:
                value = results.get((model, token))
                row.append("FAILED" if value is None else f"{value:.4f}")
            fh.write(",".join(row) + "\n")
    print(f"sweep table written to {os.path.join(out_dir, 'sweep.csv')}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(parser, defaults, flags):
    for flag in flags:
        key = flag.lstrip("-").replace("-", "_")
        default = defaults.get(key)
        if isinstance(default, bool):
            parser.add_argument(flag, action="store_true", default=None)
        elif isinstance(default, int) and default is not None:
            parser.add_argument(flag, type=int, default=None)
        elif isinstance(default, float) and default is not None:
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="l1l1",
        description="sequential sparse recovery and unfolded-network training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="downscale and normalize a video tensor")
    p.add_argument("input")
    p.add_argument("output")
    _add_common(p, _PREP_DEFAULTS, ["--factor", "--config"])

    p = sub.add_parser("solve", help="run an iterative solver over sequences")
    _add_common(p, _SOLVE_DEFAULTS, [
        "--solver", "--iters", "--lambda1", "--lambda2", "--alpha", "--n",
        "--d", "--m", "--T", "--s0", "--innovation", "--sequences",
        "--data-seed", "--data", "--synthetic", "--rate", "--config",
        "--out-dir",
    ])

    p = sub.add_parser("train", help="train the unfolded network or the baseline")
    _add_common(p, _TRAIN_DEFAULTS, [
        "--model", "--epochs", "--learning-rate", "--batch-size",
        "--weight-decay", "--K", "--seed", "--n", "--d", "--m", "--T",
        "--s0", "--innovation", "--train-sequences", "--val-sequences",
        "--data-seed", "--data", "--synthetic", "--rate", "--activation",
        "--dict-init", "--g-init", "--lambda1-init", "--lambda2-init",
        "--alpha-init", "--grad-clip", "--resume", "--config", "--out-dir",
    ])

    p = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    p.add_argument("checkpoint")
    _add_common(p, _EVAL_DEFAULTS, [
        "--split", "--n", "--d", "--m", "--T", "--s0", "--innovation",
        "--train-sequences", "--val-sequences", "--data-seed", "--data",
        "--synthetic", "--rate", "--config", "--out-dir",
    ])

    p = sub.add_parser("gradcheck", help="finite-difference gradient comparison")
    _add_common(p, _GRADCHECK_DEFAULTS, [
        "--seed", "--m", "--n", "--d", "--K", "--T", "--step",
        "--corrupt-grad", "--config",
    ])

    p = sub.add_parser("sweep", help="PSNR table over compression rates and models")
    _add_common(p, _SWEEP_DEFAULTS, [
        "--rates", "--models", "--jobs", "--model", "--epochs",
        "--learning-rate", "--batch-size", "--weight-decay", "--K", "--seed",
        "--n", "--d", "--T", "--s0", "--innovation", "--train-sequences",
        "--val-sequences", "--data-seed", "--data", "--synthetic",
        "--activation", "--dict-init", "--g-init", "--lambda1-init",
        "--lambda2-init", "--alpha-init", "--grad-clip", "--config",
        "--out-dir",
    ])

    return parser


_HANDLERS = {
    "prep": cmd_prep,
    "solve": cmd_solve,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DimensionError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
