"""Command-line interface: simulate, train, refine, eval, arx.

Option precedence is command line > --config JSON file > built-in
defaults.  Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .arx import arx_train, load_arx, save_arx
from .datagen import read_dataset, simulate_benchmark, write_dataset
from .evaluation import (
    ConstantWindowPredictor,
    evaluate,
    select_lambdas,
    sha256_dataset_dir,
    sha256_file,
    write_report,
)
from .numerics import DimensionError
from .refine import RefineConfig, refine, write_epoch_log
from .two_stage import FutureSpec, TrainConfig, build_features, learn_rff_psr, load_model, save_model

DEFAULTS = {
    "seed": 0,
    "k": 10,
    "history": 20,
    "rff": 2000,
    "pca": 20,
    "s1": "joint",
    "lambda1": None,
    "lambda2": None,
    "horizons": "1..10",
    "feature_mode": "rff",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def parse_horizons(text: str) -> list[int]:
    """Accept "A..B" ranges and comma lists like "1,2,5"."""
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part]


def _build_parser() -> _Parser:
    parser = _Parser(prog="rffpsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=str, help="JSON file with default option values")
        p.add_argument("--seed", type=int)

    sim = sub.add_parser("simulate", parents=[], help="generate a trajectory dataset")
    add_common(sim)
    sim.add_argument("--system", choices=["benchmark"], default="benchmark")
    sim.add_argument("--n-traj", type=int, default=20)
    sim.add_argument("--len", dest="length", type=int, default=100)
    sim.add_argument("--substeps", type=int, default=8)
    sim.add_argument("--out", required=True)

    train = sub.add_parser("train", help="two-stage regression training")
    add_common(train)
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--k", type=int)
    train.add_argument("--history", type=int)
    train.add_argument("--rff", type=int)
    train.add_argument("--pca", type=int)
    train.add_argument("--s1", choices=["joint", "cond"])
    train.add_argument("--lambda1", type=float)
    train.add_argument("--lambda2", type=float)
    train.add_argument("--feature-mode", choices=["rff", "linear"])

    ref = sub.add_parser("refine", help="gradient refinement of a trained model")
    add_common(ref)
    ref.add_argument("--data", required=True)
    ref.add_argument("--model", required=True)
    ref.add_argument("--out", required=True)
    ref.add_argument("--log", help="epoch log CSV (default: <out>.epochs.csv)")
    ref.add_argument("--max-epochs", type=int, default=50)
    ref.add_argument("--initial-step", type=float)

    ev = sub.add_parser("eval", help="per-horizon MSE on the test split")
    add_common(ev)
    ev.add_argument("--data", required=True)
    ev.add_argument("--model", nargs="+", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--horizons")

    arx = sub.add_parser("arx", help="train the autoregressive baseline")
    add_common(arx)
    arx.add_argument("--data", required=True)
    arx.add_argument("--out", required=True)
    arx.add_argument("--k", type=int)
    arx.add_argument("--history", type=int)
    arx.add_argument("--rff", type=int)
    arx.add_argument("--pca", type=int)
    arx.add_argument("--lambda1", type=float)

    return parser


def _effective(args, key: str, config: dict):
    cli_val = getattr(args, key, None)
    if cli_val is not None:
        return cli_val
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _load_config(args) -> dict:
    if getattr(args, "config", None) is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    doc = json.loads(path.read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return doc


def _load_any_model(path: str):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"model file not found: {p}")
    kind = json.loads(p.read_text()).get("kind")
    if kind == "rffpsr":
        return load_model(p)
    if kind == "arx":
        return load_arx(p)
    raise ValueError(f"unrecognized model kind {kind!r} in {p}")


def _cmd_simulate(args, config):
    seed = _effective(args, "seed", config)
    ds = simulate_benchmark(args.n_traj, args.length, seed=seed, substeps=args.substeps)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds.trajectories)} trajectories to {args.out}")
    return 0


def _make_spec_config(args, config) -> tuple[FutureSpec, TrainConfig]:
    spec = FutureSpec(_effective(args, "k", config), _effective(args, "history", config))
    tc = TrainConfig(
        num_freq=_effective(args, "rff", config),
        p=_effective(args, "pca", config),
        seed=_effective(args, "seed", config),
        s1_mode=_effective(args, "s1", config),
        feature_mode=_effective(args, "feature_mode", config),
    )
    return spec, tc


def _cmd_train(args, config):
    ds = read_dataset(args.data)
    spec, tc = _make_spec_config(args, config)
    lam1 = _effective(args, "lambda1", config)
    lam2 = _effective(args, "lambda2", config)
    fd = build_features(ds, spec, tc.num_freq, tc.p, tc.seed, tc.feature_mode)
    if lam1 is None or lam2 is None:
        sel1, sel2 = select_lambdas(ds, spec, tc, fd=fd)
        lam1 = sel1 if lam1 is None else lam1
        lam2 = sel2 if lam2 is None else lam2
        print(f"selected lambda1={lam1:g} lambda2={lam2:g} on the validation split")
    tc.lambda1, tc.lambda2 = lam1, lam2
    model = learn_rff_psr(ds, spec, tc, fd=fd)
    save_model(model, args.out)
    print(f"wrote model to {args.out}")
    return 0


def _cmd_refine(args, config):
    ds = read_dataset(args.data)
    model = load_model(args.model)
    cfg = RefineConfig(initial_step=args.initial_step, max_epochs=args.max_epochs)
    refined, log = refine(model, ds.split("train"), ds.split("val"), cfg)
    save_model(refined, args.out)
    log_path = args.log or f"{args.out}.epochs.csv"
    write_epoch_log(log, log_path)
    print(f"wrote refined model to {args.out} and epoch log to {log_path}")
    return 0


def _cmd_eval(args, config):
    ds = read_dataset(args.data)
    horizons = parse_horizons(_effective(args, "horizons", config))
    methods = []
    metadata = {"dataset_hash": sha256_dataset_dir(args.data)}
    for path in args.model:
        model = _load_any_model(path)
        name = Path(path).stem
        methods.append((name, model))
        metadata[f"model_hash_{name}"] = sha256_file(path)
    train_trajs = ds.split("train")
    if train_trajs:
        mean_obs = np.hstack([t.observations for t in train_trajs]).mean(axis=1)
        k = max(m.spec.k for _, m in methods)
        methods.append(("mean", ConstantWindowPredictor(mean_obs, k)))
    report = evaluate(methods, ds, horizons, metadata=metadata)
    write_report(report, args.out)
    print(f"wrote {len(report.rows)} rows to {args.out}")
    return 0


def _cmd_arx(args, config):
    ds = read_dataset(args.data)
    spec = FutureSpec(_effective(args, "k", config), _effective(args, "history", config))
    lam1 = _effective(args, "lambda1", config)
    model = arx_train(
        ds,
        spec,
        num_freq=_effective(args, "rff", config),
        p=_effective(args, "pca", config),
        lam=lam1 if lam1 is not None else 1e-3,
        seed=_effective(args, "seed", config),
    )
    save_arx(model, args.out)
    print(f"wrote baseline model to {args.out}")
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "arx": _cmd_arx,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        config = _load_config(args)
        return COMMANDS[args.command](args, config)
    except (
        FileNotFoundError,
        ValueError,
        KeyError,
        DimensionError,
        FloatingPointError,
        RuntimeError,
        np.linalg.LinAlgError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
