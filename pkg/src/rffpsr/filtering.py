"""Recursive filtering and multi-horizon prediction for learned models.

One filter step conditions the predictive state on an (observation, action)
pair: decode both extended operators from the compressed state, build the
observation covariance, apply its regularized inverse along the
current-observation mode of the extended operator, then contract with the
featurized pair and recompress.
"""

from __future__ import annotations

import numpy as np

from .datagen import Trajectory
from .numerics import DimensionError
from .two_stage import RffPsrModel


class FilterStepError(FloatingPointError):
    """A filter intermediate became non-finite; the message names the step."""


def _check_finite(x: np.ndarray, step: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise FilterStepError(f"non-finite values produced at filter step: {step}")
    return x


def _xi_o_tensor(model: RffPsrModel) -> np.ndarray:
    d = model.dims
    return model.u_xi_o.basis.reshape(d["psi_o"], d["phi_o"], d["xi_o"])


def _xi_a_tensor(model: RffPsrModel) -> np.ndarray:
    d = model.dims
    return model.u_xi_a.basis.reshape(d["phi_a"], d["psi_a"], d["xi_a"])


# The normalization functional is calibrated to 1 on training states, so a
# magnitude this far below 1 means the state left the learned manifold;
# flooring the divisor there keeps both the update and its gradient bounded.
NORM_FLOOR = 0.05


def filter_core(
    model: RffPsrModel,
    q: np.ndarray,
    v_o: np.ndarray,
    v_a: np.ndarray,
    lam: float,
    clip_eig: bool = True,
    normalize: bool | None = None,
) -> tuple[np.ndarray, dict]:
    """One filter step on featurized inputs; returns (next state, cache).

    With normalization on (the default when the model carries a
    normalization functional) the updated state is divided by that
    functional's value, keeping the recursion scale-stable; the division is
    a no-op on exact parameters.  The cache holds every intermediate needed
    by reverse-mode differentiation of the step.
    """
    d = model.dims
    p_oo, p_a = d["oo"], d["phi_a"]

    po = _check_finite(model.w_o @ q, "observation-covariance decode")
    po_mat = po.reshape(p_oo, p_a)
    c_small = po_mat @ v_a
    c_full = (model.u_oo.lift(c_small)).reshape(d["phi_o"], d["phi_o"])
    c_sym = 0.5 * (c_full + c_full.T)

    if clip_eig:
        eigvals, eigvecs = np.linalg.eigh(c_sym)
        denom = np.clip(eigvals, 0.0, None) + lam
        scale = np.max(denom) if denom.size else 0.0
        safe = denom > 1e-14 * max(scale, 1.0)
        inv_denom = np.where(safe, 1.0 / np.where(safe, denom, 1.0), 0.0)
        if not safe.all():
            import warnings

            warnings.warn("filter covariance is singular; using pseudo-inverse directions")
        kinv = (eigvecs * inv_denom) @ eigvecs.T
    else:
        kinv = np.linalg.inv(c_sym + lam * np.eye(c_sym.shape[0]))
    u = _check_finite(kinv @ v_o, "covariance inversion")

    pxi = _check_finite(model.w_xi @ q, "extended-state decode")
    pxi_mat = pxi.reshape(d["xi_o"], d["xi_a"])
    left = np.einsum("iox,o->ix", _xi_o_tensor(model), u)  # (psi_o, xi_o)
    right = np.einsum("ajy,a->jy", _xi_a_tensor(model), v_a)  # (psi_a, xi_a)
    q_next_mat = left @ pxi_mat @ right.T
    q_raw = _check_finite(model.u_q.apply(q_next_mat.reshape(-1)), "state recompression")

    if normalize is None:
        normalize = model.q_norm is not None
    normalized = bool(normalize and model.q_norm is not None)
    scale, clamped = 1.0, False
    if normalized:
        s = float(model.q_norm @ q_raw)
        if abs(s) > NORM_FLOOR:
            scale = s
        else:
            scale = NORM_FLOOR if s >= 0 else -NORM_FLOOR
            clamped = True
    q_next = _check_finite(q_raw / scale, "state normalization")

    capped = False
    norm_before_cap = float(np.linalg.norm(q_next))
    if model.state_cap is not None and norm_before_cap > model.state_cap:
        q_next = q_next * (model.state_cap / norm_before_cap)
        capped = True
    cache = {
        "q": q,
        "v_o": v_o,
        "v_a": v_a,
        "kinv": kinv,
        "u": u,
        "pxi_mat": pxi_mat,
        "left": left,
        "right": right,
        "scale": scale,
        "normalized": normalized,
        "norm_clamped": clamped,
        "capped": capped,
        "norm_before_cap": norm_before_cap,
        "q_next": q_next,
    }
    return q_next, cache


def filter_update(
    model: RffPsrModel,
    q: np.ndarray,
    o_t: np.ndarray,
    a_t: np.ndarray,
    lam_filter: float | None = None,
    clip_eig: bool = True,
    normalize: bool | None = None,
) -> np.ndarray:
    """Advance the compressed state given one raw observation and action."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.dims["q"],):
        raise DimensionError(f"state has shape {q.shape}, expected ({model.dims['q']},)")
    lam = model.lambda_filter if lam_filter is None else lam_filter
    v_o = model.obs_feat.apply(np.asarray(o_t, dtype=np.float64).reshape(-1))
    v_a = model.act_feat.apply(np.asarray(a_t, dtype=np.float64).reshape(-1))
    return filter_core(model, q, v_o, v_a, lam, clip_eig, normalize)[0]


def predict_window(model: RffPsrModel, q: np.ndarray, future_actions: np.ndarray) -> np.ndarray:
    """Predict the k-step observation window from the state and future actions.

    ``future_actions`` is (act_dim, k) or flat (k * act_dim,), time-major.
    Returns a (k, obs_dim) array.
    """
    k, d_a = model.spec.k, model.act_dim
    acts = np.asarray(future_actions, dtype=np.float64)
    if acts.ndim == 2:
        if acts.shape != (d_a, k):
            raise DimensionError(f"future_actions has shape {acts.shape}, expected ({d_a}, {k})")
        acts = acts.T.reshape(-1)
    elif acts.shape != (k * d_a,):
        raise DimensionError(f"future_actions has length {acts.size}, expected {k * d_a}")
    psi_a = model.fut_act_feat.apply(acts)
    z = np.concatenate([np.kron(q, psi_a), [1.0]])
    return (model.w_pred @ z).reshape(k, model.obs_dim)


def filter_states(
    model: RffPsrModel,
    traj: Trajectory,
    n_states: int,
    lam_filter: float | None = None,
    clip_eig: bool = True,
    normalize: bool | None = None,
) -> np.ndarray:
    """States q_0 .. q_{n_states-1}; q_s conditions on steps before s."""
    q = model.q0
    out = np.zeros((model.dims["q"], n_states))
    for s in range(n_states):
        out[:, s] = q
        if s + 1 < n_states:
            q = filter_update(
                model, q, traj.observations[:, s], traj.actions[:, s],
                lam_filter, clip_eig, normalize,
            )
    return out


def horizon_target_times(length: int, k: int, horizon: int, min_target_time: int = 0) -> range:
    """Valid target times t for one horizon: the window must fit and start at >= 0."""
    return range(max(horizon - 1, min_target_time), length - k + horizon)


def rollout_eval(
    model: RffPsrModel,
    traj: Trajectory,
    horizons=(1,),
    min_target_time: int = 0,
    lam_filter: float | None = None,
    predictor=None,
) -> dict[int, np.ndarray]:
    """Per-horizon squared prediction errors along one trajectory.

    The horizon-H prediction for target time t comes from the state filtered
    through steps before s = t - H + 1 and the known actions a_{s:s+k-1};
    the window entry at offset H - 1 is compared with o_t.  One forward
    filtering pass and one window prediction per start index are shared by
    all horizons.

    ``predictor(q, future_actions) -> (k, obs_dim)`` overrides the model's
    prediction map (used by oracle/null baselines in tests).
    """
    horizons = sorted(set(int(h) for h in horizons))
    if horizons[0] < 1:
        raise ValueError("horizons must be >= 1")
    k = model.spec.k
    if horizons[-1] > k:
        raise ValueError(
            f"horizon {horizons[-1]} exceeds the window length k={k}; "
            "the protocol reads predictions off the k-step window"
        )
    length = traj.length
    if length < k + max(horizons):
        raise ValueError(
            f"trajectory length {length} too short for k={k}, max horizon {max(horizons)}"
        )
    if predictor is None:
        predictor = lambda q, acts: predict_window(model, q, acts)

    n_starts = length - k + 1  # window starts 0 .. length-k
    states = filter_states(model, traj, n_starts, lam_filter)
    window_preds = np.zeros((n_starts, k, model.obs_dim))
    for s in range(n_starts):
        window_preds[s] = predictor(states[:, s], traj.actions[:, s : s + k])

    errors = {}
    for h in horizons:
        times = horizon_target_times(length, k, h, min_target_time)
        errs = np.zeros(len(times))
        for i, t in enumerate(times):
            pred = window_preds[t - h + 1, h - 1]
            diff = pred - traj.observations[:, t]
            errs[i] = diff @ diff
        errors[h] = errs
    return errors
