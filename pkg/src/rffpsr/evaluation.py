"""Evaluation harness: per-horizon MSE reports and regularizer selection."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .arx import ArxModel, arx_rollout_eval
from .datagen import Dataset
from .filtering import rollout_eval
from .two_stage import (
    FeaturizedData,
    FutureSpec,
    RffPsrModel,
    TrainConfig,
    build_features,
    learn_rff_psr,
)

LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1e0)


class ConstantWindowPredictor:
    """Predicts a fixed observation vector at every step and horizon."""

    def __init__(self, value: np.ndarray, k: int, history_len: int = 0):
        self.value = np.asarray(value, dtype=np.float64).reshape(-1)
        self.spec = FutureSpec(k, history_len)

    def rollout_errors(self, traj, horizons, min_target_time):
        from .filtering import horizon_target_times

        out = {}
        for h in sorted(set(int(x) for x in horizons)):
            times = horizon_target_times(traj.length, self.spec.k, h, min_target_time)
            errs = np.zeros(len(times))
            for i, t in enumerate(times):
                diff = self.value - traj.observations[:, t]
                errs[i] = diff @ diff
            out[h] = errs
        return out


@dataclass
class EvalRow:
    method: str
    horizon: int
    mse: float
    n_points: int


@dataclass
class EvalReport:
    rows: list[EvalRow]
    metadata: dict = field(default_factory=dict)

    def mse(self, method: str, horizon: int) -> float:
        for row in self.rows:
            if row.method == method and row.horizon == horizon:
                return row.mse
        raise KeyError(f"no row for ({method}, {horizon})")

    def mean_mse(self, method: str) -> float:
        vals = [r.mse for r in self.rows if r.method == method]
        if not vals:
            raise KeyError(f"no rows for method {method!r}")
        return float(np.mean(vals))


def _method_errors(model, traj, horizons, min_t):
    if isinstance(model, RffPsrModel):
        return rollout_eval(model, traj, horizons, min_t)
    if isinstance(model, ArxModel):
        return arx_rollout_eval(model, traj, horizons, min_t)
    if hasattr(model, "rollout_errors"):
        return model.rollout_errors(traj, horizons, min_t)
    raise TypeError(f"cannot evaluate object of type {type(model)!r}")


def evaluate(
    methods: list[tuple[str, object]],
    ds: Dataset,
    horizons=range(1, 11),
    min_target_time: int | None = None,
    split: str = "test",
    metadata: dict | None = None,
) -> EvalReport:
    """Per-horizon MSE of every method on one dataset split.

    All methods are scored on the same target times; by default the first
    max(history_len) steps of each trajectory are excluded so no target
    ever sits on a zero-padded history.  A method named "mean" is treated
    as the sanity baseline: any trained method with a worse mean MSE is
    reported with a warning rather than an error.
    """
    horizons = sorted(set(int(h) for h in horizons))
    trajs = ds.split(split)
    if not trajs:
        raise ValueError(f"dataset has no {split!r} split")
    if min_target_time is None:
        min_target_time = max(
            (m.spec.history_len for _, m in methods if hasattr(m, "spec")), default=0
        )
    rows = []
    for name, model in methods:
        pooled = {h: [] for h in horizons}
        for traj in trajs:
            errs = _method_errors(model, traj, horizons, min_target_time)
            for h in horizons:
                pooled[h].append(errs[h])
        for h in horizons:
            all_errs = np.concatenate(pooled[h])
            rows.append(EvalRow(name, h, float(all_errs.mean()), int(all_errs.size)))
    rows.sort(key=lambda r: (r.method, r.horizon))

    mean_rows = {r.horizon: r.mse for r in rows if r.method == "mean"}
    if mean_rows:
        for name in {r.method for r in rows} - {"mean"}:
            model_mean = float(np.mean([r.mse for r in rows if r.method == name]))
            baseline_mean = float(np.mean(list(mean_rows.values())))
            if model_mean > baseline_mean:
                warnings.warn(
                    f"method {name!r} (mean MSE {model_mean:.4g}) is worse than the "
                    f"mean predictor ({baseline_mean:.4g})"
                )
    meta = dict(metadata or {})
    meta.setdefault("split", split)
    meta.setdefault("min_target_time", min_target_time)
    meta.setdefault("horizons", ",".join(str(h) for h in horizons))
    return EvalReport(rows, meta)


def write_report(report: EvalReport, path) -> None:
    lines = [f"# {key}={report.metadata[key]}" for key in sorted(report.metadata)]
    lines.append("method,horizon,mse,n_points")
    for row in report.rows:
        lines.append(f"{row.method},{row.horizon},{row.mse:.17g},{row.n_points}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> EvalReport:
    metadata = {}
    rows = []
    lines = Path(path).read_text().strip().split("\n")
    body_started = False
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            metadata[key] = value
            continue
        if not body_started:
            if line != "method,horizon,mse,n_points":
                raise ValueError(f"unexpected header line {line!r}")
            body_started = True
            continue
        method, horizon, mse, n_points = line.split(",")
        rows.append(EvalRow(method, int(horizon), float(mse), int(n_points)))
    return EvalReport(rows, metadata)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_dataset_dir(directory) -> str:
    directory = Path(directory)
    digest = hashlib.sha256()
    for f in sorted(directory.iterdir()):
        if f.is_file():
            digest.update(f.name.encode())
            digest.update(f.read_bytes())
    return digest.hexdigest()


def select_lambdas(
    ds: Dataset,
    spec: FutureSpec,
    config: TrainConfig,
    grid=LAMBDA_GRID,
    fd: FeaturizedData | None = None,
) -> tuple[float, float]:
    """Pick (lambda1, lambda2) by one-step prediction MSE on the validation split.

    Features are built once and shared across the grid.
    """
    val = ds.split("val")
    if not val:
        raise ValueError("dataset needs a validation split for regularizer selection")
    if fd is None:
        fd = build_features(ds, spec, config.num_freq, config.p, config.seed, config.feature_mode)
    best = None
    for lam1 in grid:
        for lam2 in grid:
            trial = replace(config, lambda1=lam1, lambda2=lam2)
            try:
                model = learn_rff_psr(ds, spec, trial, fd=fd)
                errs = [rollout_eval(model, tr, (1,), spec.history_len)[1] for tr in val]
                score = float(np.concatenate(errs).mean())
            except (np.linalg.LinAlgError, FloatingPointError, ValueError):
                continue
            if not np.isfinite(score):
                continue
            if best is None or score < best[0]:
                best = (score, lam1, lam2)
    if best is None:
        raise RuntimeError("no regularizer setting produced a finite validation score")
    return best[1], best[2]
