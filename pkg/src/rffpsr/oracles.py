"""Exact reference models: discrete controlled HMM and linear-Gaussian system.

These supply ground truth for the learner and the recursive filter: the
discrete model through exhaustive conditional-probability tensors, the
linear one through closed-form predictive-state matrices and an exact
Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import Trajectory
from .numerics import DimensionError, mode_multiply, pinv, symmetrize

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class IoHmm:
    """Discrete controlled HMM.

    ``transition[s_next, s, a]`` is Pr[s_{t+1}=s_next | s_t=s, a_t=a] and
    ``observation[o, s, a]`` is Pr[o_t=o | s_t=s, a_t=a]; the observation and
    the successor state are conditionally independent given (s_t, a_t).
    """

    transition: np.ndarray = field(repr=False)
    observation: np.ndarray = field(repr=False)
    initial_belief: np.ndarray = field(repr=False)

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_obs(self) -> int:
        return self.observation.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[2]

    def validate(self) -> None:
        t, o, b = self.transition, self.observation, self.initial_belief
        if t.ndim != 3 or t.shape[0] != t.shape[1]:
            raise DimensionError(f"transition must be (S, S, A), got {t.shape}")
        if o.ndim != 3 or o.shape[1:] != t.shape[1:]:
            raise DimensionError(f"observation must be (O, S, A), got {o.shape}")
        if b.shape != (t.shape[1],):
            raise DimensionError("initial belief length must equal state count")
        for name, arr in (("transition", t), ("observation", o)):
            if arr.min() < -STOCHASTIC_TOL:
                raise ValueError(f"{name} has negative entries")
            sums = arr.sum(axis=0)
            if np.abs(sums - 1.0).max() > STOCHASTIC_TOL:
                raise ValueError(f"{name} slices are not column-stochastic")
        if b.min() < -STOCHASTIC_TOL or abs(b.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError("initial belief is not a probability vector")


def iohmm_extended_obs(model: IoHmm, k: int) -> np.ndarray:
    """Conditional table of the next k observations as a 3-mode tensor.

    Output modes are (obs-window indicator n_obs^k, state, action-window
    indicator n_actions^k) with window indices in row-major order (the
    first step is the most significant digit).  Built by the recursion
    slice(i, j, l) = kron(E[o | s=i, a=j], tail(i, j, l)) where the tail is
    the (k-1)-window table pushed through the transition from (i, j).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    model.validate()
    t, o = model.transition, model.observation
    n_s, n_o, n_a = model.n_states, model.n_obs, model.n_actions
    out = o
    for depth in range(2, k + 1):
        prev = out  # (n_o^(depth-1), n_s, n_a^(depth-1))
        x_dim, l_dim = prev.shape[0], prev.shape[2]
        cur = np.zeros((n_o * x_dim, n_s, n_a * l_dim))
        for i in range(n_s):
            # tail[x, j, l]: window table after transitioning from (i, j)
            tail = np.einsum("xsl,sj->xjl", prev, t[:, i, :])
            for j in range(n_a):
                block = np.einsum("o,xl->oxl", o[:, i, j], tail[:, j, :])
                cur[:, i, j * l_dim : (j + 1) * l_dim] = block.reshape(
                    n_o * x_dim, l_dim
                )
        out = cur
    return out


def iohmm_predictive_state(model: IoHmm, belief: np.ndarray, k: int) -> np.ndarray:
    """Conditional probability table Pr[k obs window | k action window, belief]."""
    ext = iohmm_extended_obs(model, k)
    belief = np.asarray(belief, dtype=np.float64)
    return mode_multiply(ext, belief[None, :], 1)[:, 0, :]


def iohmm_flatten_state_map(ext: np.ndarray) -> np.ndarray:
    """Matrix M with vec(Q) = M s for the window tensor ``ext``; row-major vec."""
    return ext.transpose(0, 2, 1).reshape(-1, ext.shape[1])


def iohmm_exact_filter(model: IoHmm, belief: np.ndarray, o_idx: int, a_idx: int) -> np.ndarray:
    """Bayes update of the belief over the hidden state given one (o, a) pair.

    Weights each state by the emission likelihood of o under action a, pushes
    the weighted belief through the transition, and renormalizes.
    """
    belief = np.asarray(belief, dtype=np.float64)
    weights = belief * model.observation[o_idx, :, a_idx]
    norm = weights.sum()
    if norm <= 0.0:
        raise ValueError(
            f"impossible observation: o={o_idx} has zero probability under action {a_idx}"
        )
    return (model.transition[:, :, a_idx] @ weights) / norm


@dataclass(frozen=True)
class Lds:
    """Linear-Gaussian system x_t = A x_{t-1} + B u_t + eps, o_t = C x_t + nu."""

    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    process_noise_cov: np.ndarray = field(repr=False)
    obs_noise_cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        a, b, c = (np.atleast_2d(m) for m in (self.a, self.b, self.c))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "process_noise_cov", np.atleast_2d(self.process_noise_cov))
        object.__setattr__(self, "obs_noise_cov", np.atleast_2d(self.obs_noise_cov))
        d_x = a.shape[0]
        if a.shape != (d_x, d_x) or b.shape[0] != d_x or c.shape[1] != d_x:
            raise DimensionError("inconsistent A/B/C dimensions")
        if self.process_noise_cov.shape != (d_x, d_x):
            raise DimensionError("process noise covariance has wrong shape")
        if self.obs_noise_cov.shape != (c.shape[0], c.shape[0]):
            raise DimensionError("observation noise covariance has wrong shape")
        for cov in (self.process_noise_cov, self.obs_noise_cov):
            if np.linalg.norm(cov - cov.T) > 1e-10:
                raise ValueError("noise covariances must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ValueError("noise covariances must be PSD")

    @property
    def state_dim(self) -> int:
        return self.a.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.c.shape[0]

    @property
    def act_dim(self) -> int:
        return self.b.shape[1]


def lds_gamma(model: Lds, k: int) -> np.ndarray:
    """Stacked observability-style map: rows (C A; C A^2; ...; C A^k).

    Applied to the belief mean E[x_{t-1} | history], row block i predicts
    the action-free part of o_{t+i}.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    blocks = []
    power = model.a.copy()
    for _ in range(k):
        blocks.append(model.c @ power)
        power = model.a @ power
    return np.vstack(blocks)


def lds_u(model: Lds, k: int) -> np.ndarray:
    """Block-Toeplitz action-response map with block (i, j) = C A^(i-j) B.

    Satisfies o_{t:t+k-1} = Gamma_k x_{t-1} + U_k a_{t:t+k-1} exactly on
    noise-free rollouts.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    d_o, d_a, d_x = model.obs_dim, model.act_dim, model.state_dim
    markov = []  # C A^i B for i = 0 .. k-1
    power = np.eye(d_x)
    for _ in range(k):
        markov.append(model.c @ power @ model.b)
        power = model.a @ power
    out = np.zeros((k * d_o, k * d_a))
    for i in range(k):
        for j in range(i + 1):
            out[i * d_o : (i + 1) * d_o, j * d_a : (j + 1) * d_a] = markov[i - j]
    return out


@dataclass
class KalmanResult:
    """Filtered moments per step plus per-horizon observation predictions."""

    means: np.ndarray  # (d_x, T): E[x_t | o_{0:t}, a_{0:t}]
    covariances: np.ndarray  # (T, d_x, d_x)
    predictions: dict  # horizon -> (d_o, T), NaN where the horizon under-runs


def kalman_filter_exact(
    model: Lds,
    trajectory: Trajectory,
    horizons=(1,),
    init_mean=None,
    init_cov=None,
) -> KalmanResult:
    """Exact Kalman filter with inputs plus multi-step observation prediction.

    The horizon-H prediction for time t conditions on observations through
    t - H and on actions through t (future actions known, no future
    observations); entries with t < H - 1 are NaN.  Covariance updates are
    symmetrized and eigenvalue-clipped at zero each step.
    """
    a, b, c = model.a, model.b, model.c
    q, r = model.process_noise_cov, model.obs_noise_cov
    d_x, d_o = model.state_dim, model.obs_dim
    obs, acts = trajectory.observations, trajectory.actions
    horizon_list = sorted(set(int(h) for h in horizons))
    if horizon_list and horizon_list[0] < 1:
        raise ValueError("horizons must be >= 1")
    length = trajectory.length

    mean = np.zeros(d_x) if init_mean is None else np.asarray(init_mean, dtype=np.float64)
    cov = np.zeros((d_x, d_x)) if init_cov is None else np.asarray(init_cov, dtype=np.float64)

    means = np.zeros((d_x, length))
    covs = np.zeros((length, d_x, d_x))
    # filtered mean after step t-1, indexed so slot 0 holds the prior
    prior_means = np.zeros((d_x, length + 1))
    prior_means[:, 0] = mean

    for t in range(length):
        mean_pred = a @ mean + b @ acts[:, t]
        cov_pred = a @ cov @ a.T + q
        innov_cov = c @ cov_pred @ c.T + r
        gain = cov_pred @ c.T @ pinv(innov_cov)
        mean = mean_pred + gain @ (obs[:, t] - c @ mean_pred)
        cov = (np.eye(d_x) - gain @ c) @ cov_pred
        cov = symmetrize(cov)
        eigvals, eigvecs = np.linalg.eigh(cov)
        cov = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        means[:, t] = mean
        covs[t] = cov
        prior_means[:, t + 1] = mean

    predictions = {}
    for h in horizon_list:
        pred = np.full((d_o, length), np.nan)
        for t in range(h - 1, length):
            x = prior_means[:, t - h + 1]  # filtered after step t-h (prior if t-h < 0)
            for j in range(t - h + 1, t + 1):
                x = a @ x + b @ acts[:, j]
            pred[:, t] = c @ x
        predictions[h] = pred
    return KalmanResult(means, covs, predictions)
