"""Exact predictive-state model built from a known discrete system.

With indicator features and identity projectors, every operator of the
learned-model class can be written down in closed form from the discrete
model's conditional tables.  Filtering this model must reproduce exact
Bayes filtering, which makes it the primary correctness oracle for the
filter update and the prediction map.
"""

from __future__ import annotations

import numpy as np

from .features import OneHotFeaturizer, PcaProjector
from .numerics import pinv, vec
from .oracles import IoHmm, iohmm_extended_obs, iohmm_flatten_state_map, iohmm_predictive_state
from .two_stage import FutureSpec, RffPsrModel, TrainConfig


def _extended_xi_operator(model: IoHmm, belief: np.ndarray, k: int) -> np.ndarray:
    """Operator from kron(e_a, e_{a-window'}) to kron(e_{o-window'}, e_o).

    Rows of the (k+1)-step conditional table are re-indexed so that the
    current observation becomes the least-significant digit.
    """
    n_o, n_a = model.n_obs, model.n_actions
    table = iohmm_predictive_state(model, belief, k + 1)
    return (
        table.reshape(n_o, n_o**k, n_a ** (k + 1))
        .transpose(1, 0, 2)
        .reshape(n_o**k * n_o, n_a ** (k + 1))
    )


def _obs_pair_operator(model: IoHmm, belief: np.ndarray) -> np.ndarray:
    """Operator from e_a to vec(E[e_o kron e_o]); columns are diagonal pmfs."""
    n_o, n_a = model.n_obs, model.n_actions
    out = np.zeros((n_o * n_o, n_a))
    probs = np.einsum("osa,s->oa", model.observation, belief)
    for o in range(n_o):
        out[o * n_o + o] = probs[o]
    return out


def _window_marginal_map(n_o: int, n_a: int, k: int) -> np.ndarray:
    """Linear map from kron(vec(table), e_{a-window}) to stacked per-step obs pmfs."""
    n_w, n_j = n_o**k, n_a**k
    w = np.zeros((k * n_o, n_w * n_j * n_j))
    for win in range(n_w):
        digits = [(win // n_o ** (k - 1 - i)) % n_o for i in range(k)]
        for j in range(n_j):
            col = (win * n_j + j) * n_j + j
            for i, o in enumerate(digits):
                w[i * n_o + o, col] = 1.0
    return w


def exact_model_from_iohmm(model: IoHmm, k: int, lam_filter: float = 1e-9) -> RffPsrModel:
    """Assemble the predictive-state model whose parameters are exact.

    State compression is the identity, features are joint indicators, and
    the operators are derived from the extended conditional tables; the
    extension map sends vec of the k-step table through the pseudo-inverse
    of the belief-to-table map, which is exact whenever that map has full
    column rank (k-observability).
    """
    model.validate()
    n_s, n_o, n_a = model.n_states, model.n_obs, model.n_actions
    ext_k = iohmm_extended_obs(model, k)
    flat_k = iohmm_flatten_state_map(ext_k)  # (n_o^k * n_a^k, n_s)
    flat_k_pinv = pinv(flat_k)

    m_xi = np.column_stack(
        [vec(_extended_xi_operator(model, np.eye(n_s)[i], k)) for i in range(n_s)]
    )
    m_obs = np.column_stack(
        [vec(_obs_pair_operator(model, np.eye(n_s)[i])) for i in range(n_s)]
    )
    w_xi = m_xi @ flat_k_pinv
    w_o = m_obs @ flat_k_pinv

    w_pred_lin = _window_marginal_map(n_o, n_a, k)
    w_pred = np.hstack([w_pred_lin, np.zeros((k * n_o, 1))])
    q0 = vec(iohmm_predictive_state(model, model.initial_belief, k))

    spec = FutureSpec(k=k, history_len=0)
    config = TrainConfig(
        num_freq=0,
        p=n_o**k * n_a**k,
        lambda1=lam_filter,
        lambda2=0.0,
        lambda_filter=lam_filter,
        feature_mode="onehot",
    )
    return RffPsrModel(
        spec=spec,
        config=config,
        obs_dim=n_o,
        act_dim=n_a,
        obs_feat=OneHotFeaturizer([n_o]),
        act_feat=OneHotFeaturizer([n_a]),
        fut_obs_feat=OneHotFeaturizer([n_o] * k),
        fut_act_feat=OneHotFeaturizer([n_a] * k),
        hist_feat=OneHotFeaturizer([]),
        u_xi_o=PcaProjector(np.eye(n_o**k * n_o)),
        u_xi_a=PcaProjector(np.eye(n_a * n_a**k)),
        u_oo=PcaProjector(np.eye(n_o * n_o)),
        u_q=PcaProjector(np.eye(n_o**k * n_a**k)),
        w_xi=w_xi,
        w_o=w_o,
        w_pred=w_pred,
        q0=q0,
        # every conditional table has total mass n_actions^k
        q_norm=np.full(n_o**k * n_a**k, 1.0 / n_a**k),
    )
