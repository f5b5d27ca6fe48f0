"""Trajectory dataset generation and persistence.

Three generators share one stepping convention: at step t the action a_t is
applied first and the observation o_t is emitted from the post-action
state, matching x_t = A x_{t-1} + B a_t, o_t = C x_t for the linear case.
Action draws use RNG streams separate from noise draws so that the action
sequence is a function of the action seed alone (blind, open-loop policy).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import DimensionError

BENCHMARK_RATE_HZ = 20.0


@dataclass
class Trajectory:
    """One rollout: observations (d_o, T) and actions (d_a, T), same T."""

    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise DimensionError("observations and actions must be 2-D")
        if self.observations.shape[1] != self.actions.shape[1]:
            raise DimensionError(
                f"length mismatch: {self.observations.shape[1]} observations, "
                f"{self.actions.shape[1]} actions"
            )
        if self.observations.shape[1] < 1:
            raise ValueError("trajectory must have at least one step")
        if not (np.isfinite(self.observations).all() and np.isfinite(self.actions).all()):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def length(self) -> int:
        return self.observations.shape[1]


@dataclass
class Dataset:
    """A list of trajectories with shared dimensions and split labels."""

    trajectories: list[Trajectory]
    obs_dim: int
    act_dim: int
    dt: float
    seed: int
    splits: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.splits:
            self.splits = ["train"] * len(self.trajectories)
        if len(self.splits) != len(self.trajectories):
            raise ValueError("one split label per trajectory required")
        for tr in self.trajectories:
            if tr.observations.shape[0] != self.obs_dim or tr.actions.shape[0] != self.act_dim:
                raise DimensionError("trajectory dims disagree with dataset dims")

    def split(self, name: str) -> list[Trajectory]:
        return [tr for tr, s in zip(self.trajectories, self.splits) if s == name]


def default_splits(n_traj: int) -> list[str]:
    """Assign train/val/test by index in 2:1:1 proportion (10/5/5 for 20)."""
    n_train = n_traj // 2
    n_val = n_traj // 4
    labels = []
    for i in range(n_traj):
        if i < n_train:
            labels.append("train")
        elif i < n_train + n_val:
            labels.append("val")
        else:
            labels.append("test")
    return labels


def _traj_rng(seed: int, traj_index: int, stream: int) -> np.random.Generator:
    """Per-trajectory RNG stream; changing n_traj never perturbs earlier ones."""
    ss = np.random.SeedSequence(seed, spawn_key=(traj_index, stream))
    return np.random.default_rng(ss)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; exact zero for a zero matrix."""
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def benchmark_derivatives(x1: float, x2: float, a: float) -> tuple[float, float]:
    """Two-state nonlinear plant driven by a scalar torque-like input."""
    c = np.cos(x1)
    dx1 = x2 - 0.1 * c * (5.0 * x1 - 4.0 * x1**3 + x1**5) - 0.5 * c * a
    dx2 = -65.0 * x1 + 50.0 * x1**3 - 15.0 * x1**5 - x2 - 100.0 * a
    return dx1, dx2


def _rk4_step(state: np.ndarray, a: float, h: float) -> np.ndarray:
    def f(s):
        return np.array(benchmark_derivatives(s[0], s[1], a))

    k1 = f(state)
    k2 = f(state + 0.5 * h * k1)
    k3 = f(state + 0.5 * h * k2)
    k4 = f(state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_benchmark(
    n_traj: int,
    length: int,
    seed: int = 0,
    substeps: int = 8,
    sample_rate_hz: float = BENCHMARK_RATE_HZ,
) -> Dataset:
    """Simulate the nonlinear benchmark plant under a uniform random policy.

    Actions are redrawn uniformly in [-0.5, 0.5] at every sample tick and
    held constant (zero-order hold) across the RK4 substeps of that tick.
    The observation is the first state coordinate after the tick; the
    initial state is the origin.
    """
    if n_traj < 1 or length < 1 or substeps < 1:
        raise ValueError("n_traj, length and substeps must be >= 1")
    dt = 1.0 / sample_rate_hz
    h = dt / substeps
    trajectories = []
    for i in range(n_traj):
        rng_a = _traj_rng(seed, i, 0)
        obs = np.zeros((1, length))
        acts = np.zeros((1, length))
        state = np.zeros(2)
        for t in range(length):
            a = rng_a.uniform(-0.5, 0.5)
            for _ in range(substeps):
                state = _rk4_step(state, a, h)
            if not np.isfinite(state).all():
                raise FloatingPointError(
                    f"benchmark state diverged in trajectory {i} at step {t}"
                )
            obs[0, t] = state[0]
            acts[0, t] = a
        trajectories.append(Trajectory(obs, acts))
    return Dataset(trajectories, 1, 1, dt, seed, default_splits(n_traj))


def simulate_lds(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    process_noise_cov: np.ndarray,
    obs_noise_cov: np.ndarray,
    n_traj: int,
    length: int,
    seed: int = 0,
    action_sampler=None,
    dt: float = 1.0,
) -> Dataset:
    """Roll out x_t = A x_{t-1} + B u_t + eps, o_t = C x_t + nu from x = 0.

    ``action_sampler(rng, t)`` draws the blind action at step t; default is
    standard normal.  Noise and actions use independent RNG streams.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c, dtype=np.float64))
    d_x = a.shape[0]
    d_a = b.shape[1]
    d_o = c.shape[0]
    if a.shape != (d_x, d_x) or b.shape != (d_x, d_a) or c.shape != (d_o, d_x):
        raise DimensionError("inconsistent A/B/C dimensions")
    q = np.atleast_2d(np.asarray(process_noise_cov, dtype=np.float64))
    r = np.atleast_2d(np.asarray(obs_noise_cov, dtype=np.float64))
    if np.linalg.eigvalsh(0.5 * (q + q.T)).min() < -1e-12 or np.linalg.eigvalsh(
        0.5 * (r + r.T)
    ).min() < -1e-12:
        raise ValueError("noise covariances must be PSD")
    if np.max(np.abs(np.linalg.eigvals(a))) >= 1.0:
        warnings.warn("spectral radius of A >= 1: simulation is non-stationary")

    sq = _psd_sqrt(q)
    sr = _psd_sqrt(r)
    if action_sampler is None:
        action_sampler = lambda rng, t: rng.standard_normal(d_a)

    trajectories = []
    for i in range(n_traj):
        rng_a = _traj_rng(seed, i, 0)
        rng_n = _traj_rng(seed, i, 1)
        obs = np.zeros((d_o, length))
        acts = np.zeros((d_a, length))
        x = np.zeros(d_x)
        for t in range(length):
            u = np.atleast_1d(np.asarray(action_sampler(rng_a, t), dtype=np.float64))
            x = a @ x + b @ u + sq @ rng_n.standard_normal(d_x)
            obs[:, t] = c @ x + sr @ rng_n.standard_normal(d_o)
            acts[:, t] = u
        trajectories.append(Trajectory(obs, acts))
    return Dataset(trajectories, d_o, d_a, dt, seed, default_splits(n_traj))


def sample_iohmm(model, policy, n_traj: int, length: int, seed: int = 0) -> Dataset:
    """Sample one-hot trajectories from a discrete controlled HMM.

    ``policy(rng, t)`` returns an action index; the model supplies the
    transition and observation tensors (see oracles.IoHmm).  Observations
    and actions are one-hot encoded in the output dataset.
    """
    model.validate()
    n_s, n_o, n_a = model.n_states, model.n_obs, model.n_actions
    trajectories = []
    for i in range(n_traj):
        rng_a = _traj_rng(seed, i, 0)
        rng_n = _traj_rng(seed, i, 1)
        obs = np.zeros((n_o, length))
        acts = np.zeros((n_a, length))
        s = rng_n.choice(n_s, p=model.initial_belief)
        for t in range(length):
            a = int(policy(rng_a, t))
            o = rng_n.choice(n_o, p=model.observation[:, s, a])
            obs[o, t] = 1.0
            acts[a, t] = 1.0
            s = rng_n.choice(n_s, p=model.transition[:, s, a])
        trajectories.append(Trajectory(obs, acts))
    return Dataset(trajectories, n_o, n_a, 1.0, seed, default_splits(n_traj))


def write_dataset(ds: Dataset, directory) -> None:
    """Persist a dataset as manifest.json plus one CSV per trajectory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, (tr, split) in enumerate(zip(ds.trajectories, ds.splits)):
        fname = f"traj_{idx}.csv"
        header = ",".join(
            [f"o{i}" for i in range(ds.obs_dim)] + [f"a{i}" for i in range(ds.act_dim)]
        )
        rows = [header]
        for t in range(tr.length):
            vals = np.concatenate([tr.observations[:, t], tr.actions[:, t]])
            rows.append(",".join(f"{v:.17g}" for v in vals))
        (directory / fname).write_text("\n".join(rows) + "\n")
        entries.append({"file": fname, "split": split, "length": tr.length})
    manifest = {
        "obs_dim": ds.obs_dim,
        "act_dim": ds.act_dim,
        "dt": ds.dt,
        "seed": ds.seed,
        "trajectories": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_dataset(directory) -> Dataset:
    """Load a dataset written by write_dataset, validating the manifest."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed manifest {manifest_path}: {e}") from e
    for key in ("obs_dim", "act_dim", "dt", "seed", "trajectories"):
        if key not in manifest:
            raise ValueError(f"manifest missing field {key!r}")
    d_o, d_a = manifest["obs_dim"], manifest["act_dim"]
    trajectories = []
    splits = []
    for entry in manifest["trajectories"]:
        path = directory / entry["file"]
        if not path.exists():
            raise FileNotFoundError(f"trajectory file listed in manifest not found: {path}")
        lines = path.read_text().strip().split("\n")
        expected_header = ",".join(
            [f"o{i}" for i in range(d_o)] + [f"a{i}" for i in range(d_a)]
        )
        if lines[0] != expected_header:
            raise ValueError(f"{path}:1: header {lines[0]!r} does not match dims")
        data = np.zeros((d_o + d_a, len(lines) - 1))
        for ln, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != d_o + d_a:
                raise ValueError(f"{path}:{ln}: expected {d_o + d_a} columns, got {len(parts)}")
            try:
                data[:, ln - 2] = [float(p) for p in parts]
            except ValueError as e:
                raise ValueError(f"{path}:{ln}: {e}") from e
        if entry["length"] != data.shape[1]:
            raise ValueError(
                f"{path}: manifest length {entry['length']} != {data.shape[1]} rows"
            )
        trajectories.append(Trajectory(data[:d_o], data[d_o:]))
        splits.append(entry["split"])
    return Dataset(trajectories, d_o, d_a, manifest["dt"], manifest["seed"], splits)
