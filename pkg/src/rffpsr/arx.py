"""Autoregressive baseline: one ridge regression from (history, future
actions) features to future observation windows, no recursive state."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datagen import Dataset, Trajectory
from .features import Featurizer, featurizer_from_json, featurizer_to_json, array_from_json, array_to_json
from .filtering import horizon_target_times
from .numerics import DimensionError
from .two_stage import (
    FutureSpec,
    _derived_seeds,
    _fit_featurizer,
    future_windows,
    history_windows,
    ridge_with_intercept,
)


@dataclass
class ArxModel:
    """Window regressor: [history features; future-action features; 1] -> window."""

    spec: FutureSpec
    obs_dim: int
    act_dim: int
    hist_feat: Featurizer
    fut_act_feat: Featurizer
    weights: np.ndarray  # (k * obs_dim, hist_dim + act_dim + 1)
    lam: float

    def __post_init__(self):
        expected = (self.spec.k * self.obs_dim, self.hist_feat.dim + self.fut_act_feat.dim + 1)
        if self.weights.shape != expected:
            raise DimensionError(f"weights shape {self.weights.shape}, expected {expected}")


def arx_train(
    ds: Dataset,
    spec: FutureSpec,
    num_freq: int = 2000,
    p: int = 20,
    lam: float = 1e-3,
    seed: int = 0,
    feature_mode: str = "rff",
) -> ArxModel:
    """Fit the baseline on the training split; deterministic given seed."""
    k, hl = spec.k, spec.history_len
    hist_blocks, act_blocks, target_blocks = [], [], []
    for traj in ds.split("train"):
        n_starts = traj.length - k + 1
        if n_starts <= 0:
            continue
        hist_blocks.append(history_windows(traj, hl, n_starts))
        act_blocks.append(future_windows(traj.actions, k))
        target_blocks.append(future_windows(traj.observations, k))
    if not hist_blocks:
        raise ValueError(f"no trajectory is long enough for k={k}")
    hist_raw = np.hstack(hist_blocks)
    act_raw = np.hstack(act_blocks)
    targets = np.hstack(target_blocks)

    seeds = _derived_seeds(seed, 6)
    hist_feat = _fit_featurizer(
        hist_raw, feature_mode, num_freq, p, (seeds[0], seeds[1], seeds[2]), append_one=True
    )
    fut_act_feat = _fit_featurizer(
        act_raw, feature_mode, num_freq, p, (seeds[3], seeds[4], seeds[5]), append_one=True
    )
    inputs = np.vstack([hist_feat.apply(hist_raw), fut_act_feat.apply(act_raw)])
    weights = ridge_with_intercept(inputs, targets, lam)
    return ArxModel(spec, ds.obs_dim, ds.act_dim, hist_feat, fut_act_feat, weights, lam)


def arx_predict(model: ArxModel, history: np.ndarray, future_actions: np.ndarray) -> np.ndarray:
    """Predict a (k, obs_dim) window from a raw history vector and action window.

    ``history`` is the stacked raw window of the last history_len steps
    (zero-padded); ``future_actions`` is (act_dim, k) or flat time-major.
    """
    k, d_a = model.spec.k, model.act_dim
    acts = np.asarray(future_actions, dtype=np.float64)
    if acts.ndim == 2:
        acts = acts.T.reshape(-1)
    if acts.shape != (k * d_a,):
        raise DimensionError(f"future_actions has length {acts.size}, expected {k * d_a}")
    x = np.concatenate(
        [model.hist_feat.apply(np.asarray(history, dtype=np.float64).reshape(-1)),
         model.fut_act_feat.apply(acts),
         [1.0]]
    )
    return (model.weights @ x).reshape(k, model.obs_dim)


def arx_rollout_eval(
    model: ArxModel, traj: Trajectory, horizons=(1,), min_target_time: int = 0
) -> dict[int, np.ndarray]:
    """Per-horizon squared errors with the same target-time protocol as the filter."""
    horizons = sorted(set(int(h) for h in horizons))
    k, hl = model.spec.k, model.spec.history_len
    if horizons[-1] > k:
        raise ValueError(f"horizon {horizons[-1]} exceeds the window length k={k}")
    length = traj.length
    if length < k + max(horizons):
        raise ValueError(f"trajectory length {length} too short for k={k}")
    n_starts = length - k + 1
    hist_raw = history_windows(traj, hl, n_starts)
    act_windows = future_windows(traj.actions, k)
    inputs = np.vstack(
        [
            model.hist_feat.apply(hist_raw),
            model.fut_act_feat.apply(act_windows),
            np.ones((1, n_starts)),
        ]
    )
    preds = (model.weights @ inputs).T.reshape(n_starts, k, model.obs_dim)
    errors = {}
    for h in horizons:
        times = horizon_target_times(length, k, h, min_target_time)
        errs = np.zeros(len(times))
        for i, t in enumerate(times):
            diff = preds[t - h + 1, h - 1] - traj.observations[:, t]
            errs[i] = diff @ diff
        errors[h] = errs
    return errors


def save_arx(model: ArxModel, path) -> None:
    doc = {
        "kind": "arx",
        "spec": asdict(model.spec),
        "obs_dim": model.obs_dim,
        "act_dim": model.act_dim,
        "hist_feat": featurizer_to_json(model.hist_feat),
        "fut_act_feat": featurizer_to_json(model.fut_act_feat),
        "weights": array_to_json(model.weights),
        "lam": model.lam,
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_arx(path) -> ArxModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("kind") != "arx":
        raise ValueError(f"not an arx model document (kind={doc.get('kind')!r})")
    return ArxModel(
        spec=FutureSpec(**doc["spec"]),
        obs_dim=doc["obs_dim"],
        act_dim=doc["act_dim"],
        hist_feat=featurizer_from_json(doc["hist_feat"]),
        fut_act_feat=featurizer_from_json(doc["fut_act_feat"]),
        weights=array_from_json(doc["weights"]),
        lam=doc["lam"],
    )
