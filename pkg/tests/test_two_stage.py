"""Tests for feature construction and the two-stage regression learner."""

import numpy as np
import pytest

from rffpsr.datagen import sample_iohmm, simulate_benchmark
from rffpsr.features import PcaProjector
from rffpsr.numerics import khatri_rao, ridge_solve, vec
from rffpsr.oracles import IoHmm, iohmm_predictive_state
from rffpsr.two_stage import (
    FutureSpec,
    S1Output,
    TrainConfig,
    build_features,
    estimate_q0,
    future_windows,
    history_windows,
    learn_rff_psr,
    load_model,
    model_from_json,
    model_to_json,
    ridge_with_intercept,
    s1_conditional,
    s1_joint,
    s2_regress,
    save_model,
    train_w_pred,
    _states_from_conditional,
    _states_from_joint,
)


def make_observable_iohmm(n_s, n_a, seed):
    """Transitions random, emission reveals the state (action-independent)."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.2, 1.0, size=(n_s, n_s, n_a))
    t /= t.sum(axis=0)
    o = np.zeros((n_s, n_s, n_a))
    for a in range(n_a):
        o[:, :, a] = np.eye(n_s)
    b = np.full(n_s, 1.0 / n_s)
    return IoHmm(t, o, b)


def make_biased_observable_iohmm(initial=0.85):
    """Two observable states, sticky transitions: keeps the conditional
    tables away from the high-variance p=0.5 regime so finite-sample
    recovery tests have headroom."""
    t = np.zeros((2, 2, 2))
    t[:, :, 0] = [[0.9, 0.1], [0.1, 0.9]]
    t[:, :, 1] = [[0.75, 0.25], [0.25, 0.75]]
    o = np.zeros((2, 2, 2))
    for a in range(2):
        o[:, :, a] = np.eye(2)
    return IoHmm(t, o, np.array([initial, 1.0 - initial]))


class TestWindows:
    def test_future_windows_layout(self):
        series = np.array([[1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 30.0, 40.0]])
        win = future_windows(series, 2)
        assert win.shape == (4, 3)
        np.testing.assert_array_equal(win[:, 0], [1.0, 10.0, 2.0, 20.0])
        np.testing.assert_array_equal(win[:, 2], [3.0, 30.0, 4.0, 40.0])

    def test_history_zero_padding(self):
        from rffpsr.datagen import Trajectory

        traj = Trajectory(np.array([[1.0, 2.0, 3.0]]), np.array([[4.0, 5.0, 6.0]]))
        hist = history_windows(traj, 2, 3)
        np.testing.assert_array_equal(hist[:, 0], [0.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(hist[:, 1], [0.0, 1.0, 0.0, 4.0])
        np.testing.assert_array_equal(hist[:, 2], [1.0, 2.0, 4.0, 5.0])


class TestBuildFeatures:
    def test_valid_step_count(self):
        ds = simulate_benchmark(3, 30, seed=0)
        ds.splits = ["train"] * 3
        fd = build_features(ds, FutureSpec(4, 3), num_freq=50, p=5, seed=0)
        assert fd.n_samples == 3 * (30 - 4 - 1)
        assert fd.traj_slices == [(0, 25), (25, 50), (50, 75)]

    def test_zero_history_is_constant(self):
        ds = simulate_benchmark(2, 20, seed=1)
        ds.splits = ["train"] * 2
        fd = build_features(ds, FutureSpec(3, 0), num_freq=20, p=4, seed=0)
        diffs = fd.phi_h - fd.phi_h[:, :1]
        assert np.abs(diffs).max() < 1e-12

    def test_extended_features_are_projected_kron(self):
        ds = simulate_benchmark(2, 25, seed=2)
        ds.splits = ["train"] * 2
        fd = build_features(ds, FutureSpec(3, 2), num_freq=30, p=4, seed=0)
        t = 5
        direct = np.kron(fd.psi_o_next[:, t], fd.phi_o[:, t])
        np.testing.assert_allclose(fd.xi_o[:, t], fd.u_xi_o.apply(direct), atol=1e-10)
        direct_a = np.kron(fd.phi_a[:, t], fd.psi_a_next[:, t])
        np.testing.assert_allclose(fd.xi_a[:, t], fd.u_xi_a.apply(direct_a), atol=1e-10)

    def test_short_trajectories_skipped(self):
        ds = simulate_benchmark(2, 30, seed=3)
        short = simulate_benchmark(1, 5, seed=4)
        ds.trajectories.append(short.trajectories[0])
        ds.splits = ["train"] * 3
        with pytest.warns(UserWarning, match="skipped"):
            fd = build_features(ds, FutureSpec(10, 2), num_freq=20, p=4, seed=0)
        assert len(fd.traj_slices) == 2

    def test_all_short_raises(self):
        ds = simulate_benchmark(2, 5, seed=5)
        ds.splits = ["train"] * 2
        with pytest.raises(ValueError, match="long enough"):
            build_features(ds, FutureSpec(10, 2), num_freq=20, p=4, seed=0)


class TestS1Joint:
    def test_recomputation_identity(self):
        # The returned states must equal the covariance-division formula
        # applied to the regression outputs, recomputed independently.
        ds = simulate_benchmark(3, 25, seed=6)
        ds.splits = ["train"] * 3
        fd = build_features(ds, FutureSpec(3, 2), num_freq=30, p=4, seed=0)
        lam = 1e-2
        s1 = s1_joint(fd, lam)
        t_oa = ridge_solve(fd.phi_h, khatri_rao(fd.psi_o, fd.psi_a), lam)
        t_aa = ridge_solve(fd.phi_h, khatri_rao(fd.psi_a, fd.psi_a), lam)
        d_o, d_a = fd.psi_o.shape[0], fd.psi_a.shape[0]
        for t in (0, 7, fd.n_samples - 1):
            c_oa = (t_oa @ fd.phi_h[:, t]).reshape(d_o, d_a)
            c_aa = (t_aa @ fd.phi_h[:, t]).reshape(d_a, d_a)
            c_aa = 0.5 * (c_aa + c_aa.T) + lam * np.eye(d_a)
            expected = c_oa @ np.linalg.inv(c_aa)
            np.testing.assert_allclose(
                s1.states[:, t].reshape(d_o, d_a), expected, atol=1e-10
            )

    def test_large_lambda_shrinks_states(self):
        ds = simulate_benchmark(2, 25, seed=7)
        ds.splits = ["train"] * 2
        fd = build_features(ds, FutureSpec(3, 2), num_freq=30, p=4, seed=0)
        s1 = s1_joint(fd, 1e6)
        assert np.abs(s1.states).max() < 1e-4

    def test_discrete_oracle_recovery(self):
        # With indicator features, an observation that reveals the state and
        # a one-step exhaustive history, the S1 states must converge to the
        # true conditional tables given (o_{t-1}, a_{t-1}).  Measured error
        # at this seed and ~5000 samples: 0.044 (cell-count noise floor sits
        # near the 0.05 bound, so the seed is pinned).
        model = make_biased_observable_iohmm()
        k = 2
        ds = sample_iohmm(model, lambda rng, t: rng.integers(2), 60, 88, seed=0)
        ds.splits = ["train"] * 60  # 60 * 85 = 5100 samples
        fd = build_features(ds, FutureSpec(k, 1), num_freq=0, p=999, seed=0, feature_mode="onehot")
        s1 = s1_joint(fd, 1e-5)

        tables = {}  # (prev_obs, prev_act) -> oracle table
        for s_prev in range(2):
            for a_prev in range(2):
                belief = model.transition[:, s_prev, a_prev]
                tables[(s_prev, a_prev)] = iohmm_predictive_state(model, belief, k)

        max_err = 0.0
        col = 0
        for (start, stop), traj in zip(fd.traj_slices, ds.split("train")):
            obs_idx = traj.observations.argmax(axis=0)
            act_idx = traj.actions.argmax(axis=0)
            for t in range(stop - start):
                if t >= 1:  # skip the zero-padded first history
                    oracle = tables[(obs_idx[t - 1], act_idx[t - 1])]
                    got = s1.states[:, col + t].reshape(oracle.shape)
                    max_err = max(max_err, np.abs(got - oracle).max())
            col += stop - start
        assert max_err <= 0.05

    def test_all_finite(self):
        ds = simulate_benchmark(2, 25, seed=8)
        ds.splits = ["train"] * 2
        fd = build_features(ds, FutureSpec(3, 2), num_freq=30, p=4, seed=0)
        for s1 in (s1_joint(fd, 1e-3), s1_conditional(fd, 1e-3)):
            for arr in (s1.states, s1.extended_xi, s1.extended_obs, s1.q_compressed):
                assert np.isfinite(arr).all()


class TestS1Conditional:
    def test_planted_tensor_recovery(self):
        rng = np.random.default_rng(0)
        d_out, d_in, d_h, n = 4, 3, 5, 600
        planted = rng.standard_normal((d_out, d_in, d_h))
        phi_h = rng.standard_normal((d_h, n))
        psi_a = rng.standard_normal((d_in, n))
        psi_o = np.einsum("oih,ht,it->ot", planted, phi_h, psi_a)
        states = _states_from_conditional(phi_h, psi_o, psi_a, 1e-10)
        oracle = np.einsum("oih,ht->oit", planted, phi_h).reshape(d_out * d_in, n)
        np.testing.assert_allclose(states, oracle, atol=1e-6)

    def test_constant_history_reduces_to_single_regression(self):
        rng = np.random.default_rng(1)
        d, n = 3, 300
        phi_h = np.ones((1, n))
        psi_a = rng.standard_normal((d, n))
        psi_o = rng.standard_normal((d, n))
        lam = 0.1
        states = _states_from_conditional(phi_h, psi_o, psi_a, lam)
        shared = ridge_solve(psi_a, psi_o, lam)
        for t in range(0, n, 50):
            np.testing.assert_allclose(states[:, t].reshape(d, d), shared, atol=1e-8)

    def test_output_shape(self):
        ds = simulate_benchmark(2, 25, seed=9)
        ds.splits = ["train"] * 2
        fd = build_features(ds, FutureSpec(3, 2), num_freq=30, p=4, seed=0)
        s1 = s1_conditional(fd, 1e-3)
        assert s1.states.shape == (fd.psi_o.shape[0] * fd.psi_a.shape[0], fd.n_samples)
        assert s1.state_shape == (fd.psi_o.shape[0], fd.psi_a.shape[0])


def make_fake_s1(rng, p_q=4, dim=3, n=200, planted=None):
    """S1Output with known structure for S2-level tests."""
    states = rng.standard_normal((dim * dim, n))
    u, _ = np.linalg.qr(rng.standard_normal((dim * dim, p_q)))
    u_q = PcaProjector(u)
    q = u.T @ states
    w0 = planted if planted is not None else rng.standard_normal((dim * dim, p_q))
    ext = w0 @ q
    return S1Output(
        states=states,
        extended_xi=ext,
        extended_obs=ext.copy(),
        state_shape=(dim, dim),
        xi_shape=(dim, dim),
        obs_shape=(dim, dim),
        u_q=u_q,
        q_compressed=q,
    ), w0


class TestS2:
    def test_planted_recovery(self):
        rng = np.random.default_rng(2)
        s1, w0 = make_fake_s1(rng)
        w_xi, w_o, _ = s2_regress(s1, 0.0)
        np.testing.assert_allclose(w_xi, w0, atol=1e-8)
        np.testing.assert_allclose(w_o, w0, atol=1e-8)

    def test_large_lambda_shrinks(self):
        rng = np.random.default_rng(3)
        s1, _ = make_fake_s1(rng)
        w_xi, _, _ = s2_regress(s1, 1e9)
        assert np.abs(w_xi).max() < 1e-4

    def test_too_few_samples(self):
        rng = np.random.default_rng(4)
        s1, _ = make_fake_s1(rng, p_q=4, n=3)
        with pytest.raises(ValueError, match="state samples"):
            s2_regress(s1, 0.1)

    def test_residual_nonincreasing_in_state_dim(self):
        # Nested state compressions (column-truncations of one basis) can
        # only lower the stage-2 residual as the kept dimension grows.
        ds = simulate_benchmark(6, 40, seed=10)
        ds.splits = ["train"] * 6
        fd = build_features(ds, FutureSpec(3, 4), num_freq=100, p=8, seed=0)
        s1 = s1_joint(fd, 1e-3)
        residuals = []
        for p_q in (2, 4, 8):
            basis = s1.u_q.basis[:, :p_q]
            q = basis.T @ s1.states
            w = ridge_solve(q, s1.extended_xi, 1e-9)
            residuals.append(np.linalg.norm(s1.extended_xi - w @ q))
        assert residuals[0] >= residuals[1] - 1e-9
        assert residuals[1] >= residuals[2] - 1e-9


class TestEstimateQ0:
    def test_average_branch_constant_states(self):
        rng = np.random.default_rng(5)
        s1, _ = make_fake_s1(rng)
        s1.q_compressed = np.tile(rng.standard_normal((4, 1)), (1, 50))

        class FakeFd:
            traj_slices = [(0, 25), (25, 50)]

        q0 = estimate_q0(s1, FakeFd(), n_min=100)
        np.testing.assert_allclose(q0, s1.q_compressed[:, 0], atol=1e-12)

    def test_average_permutation_invariant(self):
        rng = np.random.default_rng(6)
        s1, _ = make_fake_s1(rng)

        class FakeFd:
            traj_slices = [(0, 100), (100, 200)]

        q0 = estimate_q0(s1, FakeFd(), n_min=50)
        perm = rng.permutation(s1.q_compressed.shape[1])
        s1.q_compressed = s1.q_compressed[:, perm]
        np.testing.assert_allclose(estimate_q0(s1, FakeFd(), n_min=50), q0, atol=1e-12)

    def test_discrete_first_step_regression(self):
        # With many trajectories the regressed initial operator decodes to
        # the true table for the initial belief (measured error ~0.03 at
        # 3000 trajectories across seeds).
        model = make_biased_observable_iohmm()
        k = 2
        ds = sample_iohmm(model, lambda rng, t: rng.integers(2), 3000, k + 3, seed=2)
        ds.splits = ["train"] * 3000
        fd = build_features(ds, FutureSpec(k, 0), num_freq=0, p=999, seed=0, feature_mode="onehot")
        s1 = s1_joint(fd, 1e-5)
        q0 = estimate_q0(s1, fd, n_min=1, lam=1e-6)
        table = (s1.u_q.lift(q0)).reshape(2**k, 2**k)
        oracle = iohmm_predictive_state(model, model.initial_belief, k)
        assert np.abs(table - oracle).max() <= 0.05


class TestWPred:
    def test_constant_targets_exact(self):
        rng = np.random.default_rng(7)
        inputs = rng.standard_normal((5, 100))
        targets = np.full((3, 100), 2.5)
        w = ridge_with_intercept(inputs, targets, 1.0)
        preds = w @ np.vstack([inputs, np.ones((1, 100))])
        np.testing.assert_allclose(preds, targets, atol=1e-10)
        # holds on unseen inputs too: weights are zero, intercept carries it
        new = w @ np.concatenate([rng.standard_normal(5), [1.0]])
        np.testing.assert_allclose(new, [2.5, 2.5, 2.5], atol=1e-10)

    def test_planted_linear_recovery(self):
        rng = np.random.default_rng(8)
        s1, _ = make_fake_s1(rng, n=400)

        class FakeFd:
            psi_a = rng.standard_normal((3, 400))
            raw_future_obs = None

        z = khatri_rao(s1.q_compressed, FakeFd.psi_a)
        planted = rng.standard_normal((6, z.shape[0]))
        FakeFd.raw_future_obs = planted @ z
        w = train_w_pred(s1, FakeFd(), 0.0)
        np.testing.assert_allclose(w[:, :-1], planted, atol=1e-7)
        np.testing.assert_allclose(w[:, -1], np.zeros(6), atol=1e-7)

    def test_training_mse_beats_mean(self):
        ds = simulate_benchmark(4, 30, seed=11)
        ds.splits = ["train"] * 4
        fd = build_features(ds, FutureSpec(3, 3), num_freq=50, p=5, seed=0)
        s1 = s1_joint(fd, 1e-3)
        w = train_w_pred(s1, fd, 1e-6)
        z = np.vstack([khatri_rao(s1.q_compressed, fd.psi_a), np.ones((1, fd.n_samples))])
        resid = fd.raw_future_obs - w @ z
        target_var = np.var(fd.raw_future_obs, axis=1).sum()
        assert (resid**2).mean(axis=1).sum() <= target_var


class TestConsistencyTrend:
    def test_s2_residual_shrinks_with_sample_size(self):
        # With indicator features and no truncation loss, the stage-2
        # residual must shrink as the sample count grows.
        model = make_biased_observable_iohmm()
        k = 2
        medians = []
        for n_traj, length in ((6, 88), (24, 88), (60, 88)):  # ~500/2000/5000
            ds = sample_iohmm(model, lambda rng, t: rng.integers(2), n_traj, length, seed=4)
            ds.splits = ["train"] * n_traj
            fd = build_features(
                ds, FutureSpec(k, 1), num_freq=0, p=999, seed=0, feature_mode="onehot"
            )
            s1 = s1_joint(fd, 1e-5)
            w_xi, _, _ = s2_regress(s1, 1e-8)
            resid = np.linalg.norm(s1.extended_xi - w_xi @ s1.q_compressed, axis=0)
            medians.append(float(np.median(resid)))
        assert medians[0] > medians[1] > medians[2]


class TestLearnRffPsr:
    def test_end_to_end_and_roundtrip(self, tmp_path):
        ds = simulate_benchmark(8, 40, seed=12)
        spec = FutureSpec(4, 4)
        config = TrainConfig(num_freq=100, p=6, lambda1=1e-2, lambda2=1e-2, seed=3)
        model = learn_rff_psr(ds, spec, config)
        assert model.q0.shape == (model.dims["q"],)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(back.w_xi, model.w_xi)
        np.testing.assert_array_equal(back.w_pred, model.w_pred)
        np.testing.assert_array_equal(back.q0, model.q0)
        assert back.spec == model.spec

    def test_deterministic_given_seed(self, tmp_path):
        ds = simulate_benchmark(8, 40, seed=13)
        spec = FutureSpec(3, 4)
        config = TrainConfig(num_freq=80, p=5, lambda1=1e-2, lambda2=1e-2, seed=7)
        m1 = learn_rff_psr(ds, spec, config)
        m2 = learn_rff_psr(ds, spec, config)
        import json

        assert json.dumps(model_to_json(m1)) == json.dumps(model_to_json(m2))

    def test_bad_s1_mode(self):
        ds = simulate_benchmark(4, 30, seed=14)
        with pytest.raises(ValueError, match="s1_mode"):
            learn_rff_psr(ds, FutureSpec(3, 2), TrainConfig(num_freq=30, p=4), s1_mode="bogus")

    def test_json_roundtrip_via_dict(self):
        ds = simulate_benchmark(6, 30, seed=15)
        model = learn_rff_psr(
            ds, FutureSpec(3, 2), TrainConfig(num_freq=40, p=4, lambda1=0.1, lambda2=0.1)
        )
        back = model_from_json(model_to_json(model))
        np.testing.assert_array_equal(back.w_o, model.w_o)
