"""Two-stage regression learner for predictive-state models.

Stage 1 regresses history features onto estimates of the predictive state
(a conditional operator from future-action features to future-observation
features) and of two extended states that make conditioning on the next
(observation, action) pair possible.  Stage 2 recovers the linear
state-to-extended-state map from those per-step estimates.  Everything
operates on feature matrices whose columns are time steps pooled across
training trajectories.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import Dataset, Trajectory
from .features import (
    Featurizer,
    LinearFeaturizer,
    OneHotFeaturizer,
    PcaProjector,
    RffFeaturizer,
    array_from_json,
    array_to_json,
    featurizer_from_json,
    featurizer_to_json,
    median_bandwidth,
    pca_fit,
    rff_apply,
    sample_rff_map,
)
from .numerics import DimensionError, khatri_rao, pinv, randomized_svd, ridge_solve, symmetrize, vec


@dataclass(frozen=True)
class FutureSpec:
    """Window geometry: k future steps define the state, history_len past steps condition it."""

    k: int
    history_len: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.history_len < 0:
            raise ValueError(f"history_len must be >= 0, got {self.history_len}")


@dataclass
class TrainConfig:
    """Hyperparameters of the learner; defaults target the nonlinear benchmark."""

    num_freq: int = 2000
    p: int = 20
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    lambda_filter: float | None = None  # None: reuse lambda1
    seed: int = 0
    s1_mode: str = "joint"  # "joint" or "cond"
    feature_mode: str = "rff"  # "rff", "linear" or "onehot"
    q0_min_trajs: int | None = None  # None: 10 * state dim
    bandwidth_scale: float = 1.0  # multiplier on the median-trick bandwidths

    def resolved_lambda_filter(self) -> float:
        return self.lambda1 if self.lambda_filter is None else self.lambda_filter


def future_windows(series: np.ndarray, k: int) -> np.ndarray:
    """Stack length-k windows of a (d, T) series, one column per start index.

    Column s holds [x_s; x_{s+1}; ...; x_{s+k-1}] (time-major).
    """
    d, t_len = series.shape
    if t_len < k:
        return np.zeros((d * k, 0))
    win = np.lib.stride_tricks.sliding_window_view(series, k, axis=1)  # (d, T-k+1, k)
    return win.transpose(1, 2, 0).reshape(t_len - k + 1, k * d).T


def history_windows(traj: Trajectory, history_len: int, n_cols: int) -> np.ndarray:
    """History vectors for t = 0 .. n_cols-1, zero-padded at the sequence start.

    The vector at t stacks the last history_len observations then the last
    history_len actions, both ending at t - 1 and time-major.
    """
    d_o, d_a = traj.observations.shape[0], traj.actions.shape[0]
    if history_len == 0:
        return np.zeros((0, n_cols))
    pad_obs = np.hstack([np.zeros((d_o, history_len)), traj.observations])
    pad_act = np.hstack([np.zeros((d_a, history_len)), traj.actions])
    obs_win = future_windows(pad_obs, history_len)[:, :n_cols]
    act_win = future_windows(pad_act, history_len)[:, :n_cols]
    return np.vstack([obs_win, act_win])


@dataclass
class FeaturizedData:
    """Projected feature columns for every valid training step.

    Valid steps t run from 0 through T - k - 2 within each trajectory so
    that the one-step-shifted future windows fit.  All matrices share the
    same column count and ordering; ``traj_slices`` maps trajectories to
    column ranges.
    """

    spec: FutureSpec
    obs_dim: int
    act_dim: int
    p: int
    seed: int
    phi_h: np.ndarray
    phi_o: np.ndarray
    phi_a: np.ndarray
    psi_o: np.ndarray
    psi_a: np.ndarray
    psi_o_next: np.ndarray
    psi_a_next: np.ndarray
    xi_o: np.ndarray
    xi_a: np.ndarray
    phi_oo: np.ndarray
    raw_future_obs: np.ndarray
    obs_feat: Featurizer
    act_feat: Featurizer
    fut_obs_feat: Featurizer
    fut_act_feat: Featurizer
    hist_feat: Featurizer
    u_xi_o: PcaProjector
    u_xi_a: PcaProjector
    u_oo: PcaProjector
    traj_slices: list[tuple[int, int]]

    @property
    def n_samples(self) -> int:
        return self.phi_h.shape[1]

    def first_step_columns(self) -> np.ndarray:
        return np.array([start for start, _ in self.traj_slices], dtype=int)


def _derived_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def _fit_featurizer(
    raw: np.ndarray,
    mode: str,
    num_freq: int,
    p: int,
    seeds: tuple[int, int, int],
    append_one: bool = False,
    onehot_dims: list[int] | None = None,
    bandwidth_scale: float = 1.0,
) -> Featurizer:
    """Fit one feature group from its raw window matrix (columns = samples)."""
    input_dim = raw.shape[0]
    if mode == "onehot":
        return OneHotFeaturizer(onehot_dims if onehot_dims is not None else [input_dim])
    if mode == "linear":
        out_dim = input_dim + int(append_one)
        feat = LinearFeaturizer(input_dim, append_one)
        if p < out_dim:
            pca = pca_fit(feat.apply(raw), min(p, raw.shape[1]), seed=seeds[2])
            feat = LinearFeaturizer(input_dim, append_one, pca)
        return feat
    if mode == "rff":
        bw = 1.0 if input_dim == 0 else bandwidth_scale * median_bandwidth(raw, seed=seeds[0])
        rff = sample_rff_map(input_dim, num_freq, bw, seed=seeds[1])
        feats = rff_apply(rff, raw)
        p_eff = min(p, feats.shape[0], feats.shape[1])
        return RffFeaturizer(rff, pca_fit(feats, p_eff, seed=seeds[2]))
    raise ValueError(f"unknown feature mode {mode!r}")


def _kr_projector(kr: np.ndarray, mode: str, p: int, seed: int) -> PcaProjector:
    """Compression basis for a Khatri-Rao feature block; identity when exact."""
    if mode == "onehot" or p >= kr.shape[0]:
        return PcaProjector(np.eye(kr.shape[0]))
    u, _ = randomized_svd(kr, min(p, kr.shape[0], kr.shape[1]), seed=seed)
    return PcaProjector(u)


def build_features(
    ds: Dataset,
    spec: FutureSpec,
    num_freq: int,
    p: int,
    seed: int = 0,
    feature_mode: str = "rff",
    onehot_alphabets: tuple[int, int] | None = None,
    bandwidth_scale: float = 1.0,
) -> FeaturizedData:
    """Construct all projected feature matrices from the training split.

    Bandwidths, RFF frequencies and PCA bases are fit on the training split
    only.  Trajectories shorter than k + 2 are skipped with a warning.
    In "onehot" mode the observation/action columns of the dataset must be
    indicator vectors; features are exact joint indicators and no PCA
    truncation is applied.
    """
    k, hl = spec.k, spec.history_len
    d_o, d_a = ds.obs_dim, ds.act_dim
    train = ds.split("train")
    if not train:
        raise ValueError("dataset has no training split")

    hist_blocks, obs_blocks, act_blocks = [], [], []
    fut_obs_blocks, fut_act_blocks = [], []  # window starts 0 .. V (one extra for the shift)
    raw_fut_obs_blocks = []
    counts = []
    for idx, traj in enumerate(train):
        n_valid = traj.length - k - 1
        if n_valid <= 0:
            warnings.warn(
                f"trajectory {idx} of length {traj.length} is shorter than k + 2; skipped"
            )
            continue
        counts.append(n_valid)
        hist_blocks.append(history_windows(traj, hl, n_valid))
        obs_blocks.append(traj.observations[:, :n_valid])
        act_blocks.append(traj.actions[:, :n_valid])
        fo = future_windows(traj.observations, k)[:, : n_valid + 1]
        fa = future_windows(traj.actions, k)[:, : n_valid + 1]
        fut_obs_blocks.append(fo)
        fut_act_blocks.append(fa)
        raw_fut_obs_blocks.append(fo[:, :n_valid])
    if not counts:
        raise ValueError(f"no trajectory is long enough for k={k} (need length >= {k + 2})")

    hist_raw = np.hstack(hist_blocks)
    obs_raw = np.hstack(obs_blocks)
    act_raw = np.hstack(act_blocks)
    fut_obs_raw = np.hstack(fut_obs_blocks)  # includes shifted columns
    fut_act_raw = np.hstack(fut_act_blocks)

    # column indices of valid steps / their shifted counterparts inside fut_*_raw
    valid_idx, next_idx = [], []
    offset = 0
    traj_slices = []
    col = 0
    for c in counts:
        valid_idx.extend(range(offset, offset + c))
        next_idx.extend(range(offset + 1, offset + c + 1))
        offset += c + 1
        traj_slices.append((col, col + c))
        col += c
    valid_idx = np.array(valid_idx)
    next_idx = np.array(next_idx)

    seeds = _derived_seeds(seed, 24)
    onehot = feature_mode == "onehot"
    if onehot and onehot_alphabets is None:
        onehot_alphabets = (d_o, d_a)
    oh_o, oh_a = onehot_alphabets if onehot_alphabets else (d_o, d_a)

    # linear mode appends a constant coordinate to every group: the filter's
    # conditioning step can then represent affine updates, and the state
    # normalization functional is exactly representable
    hist_feat = _fit_featurizer(
        hist_raw, feature_mode, num_freq, p, (seeds[0], seeds[1], seeds[2]),
        append_one=True, onehot_dims=[oh_o] * hl + [oh_a] * hl,
        bandwidth_scale=bandwidth_scale,
    )
    obs_feat = _fit_featurizer(
        obs_raw, feature_mode, num_freq, p, (seeds[3], seeds[4], seeds[5]),
        append_one=True, onehot_dims=[oh_o], bandwidth_scale=bandwidth_scale,
    )
    act_feat = _fit_featurizer(
        act_raw, feature_mode, num_freq, p, (seeds[6], seeds[7], seeds[8]),
        append_one=True, onehot_dims=[oh_a], bandwidth_scale=bandwidth_scale,
    )
    fut_obs_feat = _fit_featurizer(
        fut_obs_raw[:, valid_idx], feature_mode, num_freq, p,
        (seeds[9], seeds[10], seeds[11]), append_one=True, onehot_dims=[oh_o] * k,
        bandwidth_scale=bandwidth_scale,
    )
    fut_act_feat = _fit_featurizer(
        fut_act_raw[:, valid_idx], feature_mode, num_freq, p,
        (seeds[12], seeds[13], seeds[14]), append_one=True, onehot_dims=[oh_a] * k,
        bandwidth_scale=bandwidth_scale,
    )

    phi_h = hist_feat.apply(hist_raw)
    phi_o = obs_feat.apply(obs_raw)
    phi_a = act_feat.apply(act_raw)
    psi_o_all = fut_obs_feat.apply(fut_obs_raw)
    psi_a_all = fut_act_feat.apply(fut_act_raw)
    psi_o = psi_o_all[:, valid_idx]
    psi_a = psi_a_all[:, valid_idx]
    psi_o_next = psi_o_all[:, next_idx]
    psi_a_next = psi_a_all[:, next_idx]

    xi_o_kr = khatri_rao(psi_o_next, phi_o)
    xi_a_kr = khatri_rao(phi_a, psi_a_next)
    phi_oo_kr = khatri_rao(phi_o, phi_o)
    u_xi_o = _kr_projector(xi_o_kr, feature_mode, p, seeds[15])
    u_xi_a = _kr_projector(xi_a_kr, feature_mode, p, seeds[16])
    u_oo = _kr_projector(phi_oo_kr, feature_mode, p, seeds[17])

    return FeaturizedData(
        spec=spec,
        obs_dim=d_o,
        act_dim=d_a,
        p=p,
        seed=seed,
        phi_h=phi_h,
        phi_o=phi_o,
        phi_a=phi_a,
        psi_o=psi_o,
        psi_a=psi_a,
        psi_o_next=psi_o_next,
        psi_a_next=psi_a_next,
        xi_o=u_xi_o.apply(xi_o_kr),
        xi_a=u_xi_a.apply(xi_a_kr),
        phi_oo=u_oo.apply(phi_oo_kr),
        raw_future_obs=np.hstack(raw_fut_obs_blocks),
        obs_feat=obs_feat,
        act_feat=act_feat,
        fut_obs_feat=fut_obs_feat,
        fut_act_feat=fut_act_feat,
        hist_feat=hist_feat,
        u_xi_o=u_xi_o,
        u_xi_a=u_xi_a,
        u_oo=u_oo,
        traj_slices=traj_slices,
    )


@dataclass
class S1Output:
    """Per-step state estimates, vec'd column-wise, plus the state projector."""

    states: np.ndarray  # (dim_psi_o * dim_psi_a, n): vec of the conditional operator
    extended_xi: np.ndarray  # (dim_xi_o * dim_xi_a, n)
    extended_obs: np.ndarray  # (dim_oo * dim_phi_a, n)
    state_shape: tuple[int, int]
    xi_shape: tuple[int, int]
    obs_shape: tuple[int, int]
    u_q: PcaProjector  # (dim_psi_o * dim_psi_a, p_q)
    q_compressed: np.ndarray  # (p_q, n)


def _states_from_joint(
    phi_h: np.ndarray,
    out_feats: np.ndarray,
    in_feats: np.ndarray,
    lam: float,
    label: str,
) -> np.ndarray:
    """Joint-covariance route: regress both covariances on history, then divide."""
    d_out, d_in = out_feats.shape[0], in_feats.shape[0]
    t_cross = ridge_solve(phi_h, khatri_rao(out_feats, in_feats), lam)
    t_in = ridge_solve(phi_h, khatri_rao(in_feats, in_feats), lam)
    cross_all = t_cross @ phi_h
    in_all = t_in @ phi_h
    n = phi_h.shape[1]
    states = np.zeros((d_out * d_in, n))
    eye = np.eye(d_in)
    for t in range(n):
        c_cross = cross_all[:, t].reshape(d_out, d_in)
        c_in = symmetrize(in_all[:, t].reshape(d_in, d_in)) + lam * eye
        try:
            q = np.linalg.solve(c_in, c_cross.T).T
        except np.linalg.LinAlgError:
            warnings.warn(f"{label}: singular input covariance at step {t}; using pseudo-inverse")
            q = c_cross @ pinv(c_in)
        states[:, t] = q.reshape(-1)
    return states


def _states_from_conditional(
    phi_h: np.ndarray, out_feats: np.ndarray, in_feats: np.ndarray, lam: float
) -> np.ndarray:
    """Conditional route: one ridge over the 3-mode operator, contracted per step."""
    d_out, d_in, d_h = out_feats.shape[0], in_feats.shape[0], phi_h.shape[0]
    w = ridge_solve(khatri_rao(in_feats, phi_h), out_feats, lam)
    tensor = w.reshape(d_out, d_in, d_h)
    states = np.einsum("oih,ht->oit", tensor, phi_h)
    return states.reshape(d_out * d_in, phi_h.shape[1])


def _project_states(states: np.ndarray, p: int, seed: int) -> tuple[PcaProjector, np.ndarray]:
    p_q = min(p, states.shape[0], states.shape[1])
    u, compressed = randomized_svd(states, p_q, seed=seed)
    return PcaProjector(u), compressed


def _s1_assemble(fd: FeaturizedData, states, ext_xi, ext_obs) -> S1Output:
    u_q, q_comp = _project_states(states, fd.p, _derived_seeds(fd.seed, 24)[18])
    return S1Output(
        states=states,
        extended_xi=ext_xi,
        extended_obs=ext_obs,
        state_shape=(fd.psi_o.shape[0], fd.psi_a.shape[0]),
        xi_shape=(fd.xi_o.shape[0], fd.xi_a.shape[0]),
        obs_shape=(fd.phi_oo.shape[0], fd.phi_a.shape[0]),
        u_q=u_q,
        q_compressed=q_comp,
    )


def s1_joint(fd: FeaturizedData, lam1: float) -> S1Output:
    """Stage-1 estimates via the joint-covariance route."""
    states = _states_from_joint(fd.phi_h, fd.psi_o, fd.psi_a, lam1, "state")
    ext_xi = _states_from_joint(fd.phi_h, fd.xi_o, fd.xi_a, lam1, "extended")
    ext_obs = _states_from_joint(fd.phi_h, fd.phi_oo, fd.phi_a, lam1, "obs-pair")
    return _s1_assemble(fd, states, ext_xi, ext_obs)


def s1_conditional(fd: FeaturizedData, lam1: float) -> S1Output:
    """Stage-1 estimates via direct conditional-operator regression."""
    states = _states_from_conditional(fd.phi_h, fd.psi_o, fd.psi_a, lam1)
    ext_xi = _states_from_conditional(fd.phi_h, fd.xi_o, fd.xi_a, lam1)
    ext_obs = _states_from_conditional(fd.phi_h, fd.phi_oo, fd.phi_a, lam1)
    return _s1_assemble(fd, states, ext_xi, ext_obs)


def s2_regress(s1: S1Output, lam2: float) -> tuple[np.ndarray, np.ndarray, PcaProjector]:
    """Stage-2 ridge maps from compressed states to the two extended states."""
    n = s1.q_compressed.shape[1]
    p_q = s1.q_compressed.shape[0]
    if n < p_q:
        raise ValueError(f"need at least {p_q} state samples for S2, got {n}")
    w_xi = ridge_solve(s1.q_compressed, s1.extended_xi, lam2)
    w_o = ridge_solve(s1.q_compressed, s1.extended_obs, lam2)
    return w_xi, w_o, s1.u_q


def estimate_q0(
    s1: S1Output,
    fd: FeaturizedData,
    n_min: int | None = None,
    lam: float = 0.0,
) -> np.ndarray:
    """Initial compressed state.

    With enough trajectories the initial operator is regressed from the
    first-step (future-action, future-observation) feature pairs; otherwise
    it falls back to the average of all per-step state estimates.
    """
    if s1.q_compressed.shape[1] == 0:
        raise ValueError("no state estimates available")
    n_traj = len(fd.traj_slices)
    if n_min is None:
        n_min = 10 * s1.q_compressed.shape[0]
    if n_traj >= n_min:
        first = fd.first_step_columns()
        q0_op = ridge_solve(fd.psi_a[:, first], fd.psi_o[:, first], lam)
        return s1.u_q.apply(vec(q0_op))
    return s1.q_compressed.mean(axis=1)


def ridge_with_intercept(inputs: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    """Ridge on centered data with an unpenalized intercept.

    Returns (d_out, d_in + 1); the last column is the intercept, so
    predictions are W @ [x; 1].
    """
    x_mean = inputs.mean(axis=1, keepdims=True)
    y_mean = targets.mean(axis=1, keepdims=True)
    w = ridge_solve(inputs - x_mean, targets - y_mean, lam)
    intercept = y_mean - w @ x_mean
    return np.hstack([w, intercept])


def train_w_pred(s1: S1Output, fd: FeaturizedData, lam2: float) -> np.ndarray:
    """Observation-window regression from (compressed state, future-action feature)."""
    z = khatri_rao(s1.q_compressed, fd.psi_a)
    return ridge_with_intercept(z, fd.raw_future_obs, lam2)


@dataclass
class RffPsrModel:
    """Learned predictive-state model: feature maps, projectors and operators.

    ``w_xi`` and ``w_o`` map the compressed state to the vec'd extended
    operators; ``w_pred`` maps kron(state, future-action feature) plus an
    intercept coordinate to the raw future observation window; ``q0`` is the
    compressed initial state.
    """

    spec: FutureSpec
    config: TrainConfig
    obs_dim: int
    act_dim: int
    obs_feat: Featurizer
    act_feat: Featurizer
    fut_obs_feat: Featurizer
    fut_act_feat: Featurizer
    hist_feat: Featurizer
    u_xi_o: PcaProjector
    u_xi_a: PcaProjector
    u_oo: PcaProjector
    u_q: PcaProjector
    w_xi: np.ndarray
    w_o: np.ndarray
    w_pred: np.ndarray
    q0: np.ndarray
    # linear functional with q_norm . q ~= 1 on training states; when set,
    # the filter renormalizes each updated state by it (projective update,
    # identity on exact parameters)
    q_norm: np.ndarray | None = None
    # L2 ceiling on filtered states, set from the training-state radius; a
    # no-op on states the learner ever saw, it stops runaway recursions
    state_cap: float | None = None

    def __post_init__(self):
        dims = self.dims
        if self.u_xi_o.input_dim != dims["psi_o"] * dims["phi_o"]:
            raise DimensionError("u_xi_o input dim inconsistent with feature dims")
        if self.u_xi_a.input_dim != dims["phi_a"] * dims["psi_a"]:
            raise DimensionError("u_xi_a input dim inconsistent with feature dims")
        if self.u_oo.input_dim != dims["phi_o"] ** 2:
            raise DimensionError("u_oo input dim inconsistent with feature dims")
        if self.u_q.input_dim != dims["psi_o"] * dims["psi_a"]:
            raise DimensionError("u_q input dim inconsistent with feature dims")
        if self.w_xi.shape != (dims["xi_o"] * dims["xi_a"], dims["q"]):
            raise DimensionError(f"w_xi has shape {self.w_xi.shape}")
        if self.w_o.shape != (dims["oo"] * dims["phi_a"], dims["q"]):
            raise DimensionError(f"w_o has shape {self.w_o.shape}")
        if self.w_pred.shape != (self.spec.k * self.obs_dim, dims["q"] * dims["psi_a"] + 1):
            raise DimensionError(f"w_pred has shape {self.w_pred.shape}")
        if self.q0.shape != (dims["q"],):
            raise DimensionError(f"q0 has shape {self.q0.shape}")
        if self.q_norm is not None and self.q_norm.shape != (dims["q"],):
            raise DimensionError(f"q_norm has shape {self.q_norm.shape}")

    @property
    def dims(self) -> dict:
        return {
            "phi_o": self.obs_feat.dim,
            "phi_a": self.act_feat.dim,
            "psi_o": self.fut_obs_feat.dim,
            "psi_a": self.fut_act_feat.dim,
            "xi_o": self.u_xi_o.output_dim,
            "xi_a": self.u_xi_a.output_dim,
            "oo": self.u_oo.output_dim,
            "q": self.u_q.output_dim,
        }

    @property
    def lambda_filter(self) -> float:
        return self.config.resolved_lambda_filter()


def learn_rff_psr(
    ds: Dataset,
    spec: FutureSpec,
    config: TrainConfig | None = None,
    s1_mode: str | None = None,
    fd: FeaturizedData | None = None,
) -> RffPsrModel:
    """End-to-end learning: features, S1, S2, initial state, prediction map.

    Deterministic given config.seed.  A prebuilt FeaturizedData can be
    passed to reuse feature matrices across regularization settings.
    """
    config = config or TrainConfig()
    mode = s1_mode or config.s1_mode
    if mode not in ("joint", "cond"):
        raise ValueError(f"s1_mode must be 'joint' or 'cond', got {mode!r}")
    if fd is None:
        fd = build_features(
            ds, spec, config.num_freq, config.p, config.seed, config.feature_mode,
            bandwidth_scale=config.bandwidth_scale,
        )
    s1 = s1_joint(fd, config.lambda1) if mode == "joint" else s1_conditional(fd, config.lambda1)
    w_xi, w_o, u_q = s2_regress(s1, config.lambda2)
    q0 = estimate_q0(s1, fd, config.q0_min_trajs, config.lambda2)
    w_pred = train_w_pred(s1, fd, config.lambda2)
    ones_row = np.ones((1, s1.q_compressed.shape[1]))
    q_norm = ridge_solve(s1.q_compressed, ones_row, 1e-8)[0]
    state_cap = 3.0 * float(np.linalg.norm(s1.q_compressed, axis=0).max())
    return RffPsrModel(
        spec=spec,
        config=replace(config, s1_mode=mode),
        obs_dim=fd.obs_dim,
        act_dim=fd.act_dim,
        obs_feat=fd.obs_feat,
        act_feat=fd.act_feat,
        fut_obs_feat=fd.fut_obs_feat,
        fut_act_feat=fd.fut_act_feat,
        hist_feat=fd.hist_feat,
        u_xi_o=fd.u_xi_o,
        u_xi_a=fd.u_xi_a,
        u_oo=fd.u_oo,
        u_q=u_q,
        w_xi=w_xi,
        w_o=w_o,
        w_pred=w_pred,
        q0=q0,
        q_norm=q_norm,
        state_cap=state_cap,
    )


def model_to_json(model: RffPsrModel) -> dict:
    return {
        "kind": "rffpsr",
        "spec": asdict(model.spec),
        "config": asdict(model.config),
        "obs_dim": model.obs_dim,
        "act_dim": model.act_dim,
        "featurizers": {
            name: featurizer_to_json(getattr(model, name))
            for name in ("obs_feat", "act_feat", "fut_obs_feat", "fut_act_feat", "hist_feat")
        },
        "projectors": {
            name: array_to_json(getattr(model, name).basis)
            for name in ("u_xi_o", "u_xi_a", "u_oo", "u_q")
        },
        "w_xi": array_to_json(model.w_xi),
        "w_o": array_to_json(model.w_o),
        "w_pred": array_to_json(model.w_pred),
        "q0": array_to_json(model.q0),
        "q_norm": None if model.q_norm is None else array_to_json(model.q_norm),
        "state_cap": model.state_cap,
    }


def model_from_json(doc: dict) -> RffPsrModel:
    if doc.get("kind") != "rffpsr":
        raise ValueError(f"not a model document (kind={doc.get('kind')!r})")
    feats = {name: featurizer_from_json(d) for name, d in doc["featurizers"].items()}
    projs = {name: PcaProjector(array_from_json(d)) for name, d in doc["projectors"].items()}
    return RffPsrModel(
        spec=FutureSpec(**doc["spec"]),
        config=TrainConfig(**doc["config"]),
        obs_dim=doc["obs_dim"],
        act_dim=doc["act_dim"],
        **feats,
        **projs,
        w_xi=array_from_json(doc["w_xi"]),
        w_o=array_from_json(doc["w_o"]),
        w_pred=array_from_json(doc["w_pred"]),
        q0=array_from_json(doc["q0"]),
        q_norm=None if doc.get("q_norm") is None else array_from_json(doc["q_norm"]),
        state_cap=doc.get("state_cap"),
    )


def save_model(model: RffPsrModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n")


def load_model(path) -> RffPsrModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed model file {path}: {e}") from e
    return model_from_json(doc)
