"""Tests for the autoregressive window-regression baseline."""

import numpy as np
import pytest

from rffpsr.arx import arx_predict, arx_rollout_eval, arx_train, load_arx, save_arx
from rffpsr.datagen import Dataset, Trajectory, simulate_benchmark, simulate_lds
from rffpsr.two_stage import FutureSpec, history_windows


def constant_dataset(value, n_traj=4, length=30):
    rng = np.random.default_rng(0)
    trajs = [
        Trajectory(np.full((1, length), value), rng.uniform(-1, 1, (1, length)))
        for _ in range(n_traj)
    ]
    return Dataset(trajs, 1, 1, 1.0, 0, ["train"] * (n_traj - 1) + ["test"])


class TestArx:
    def test_constant_observations_zero_mse(self):
        ds = constant_dataset(2.5)
        spec = FutureSpec(3, 4)
        model = arx_train(ds, spec, num_freq=50, p=5, lam=1e-2, seed=0)
        errors = arx_rollout_eval(model, ds.split("test")[0], (1, 2, 3))
        for errs in errors.values():
            np.testing.assert_allclose(errs, 0.0, atol=1e-16)

    def test_linear_system_near_exact(self):
        # Zero-noise linear dynamics with linear features: the window map is
        # exactly linear in (history, future actions), so ARX nails it.
        ds = simulate_lds(
            a=[[0.8]], b=[[1.0]], c=[[1.0]],
            process_noise_cov=[[0.0]], obs_noise_cov=[[0.0]],
            n_traj=30, length=40, seed=1,
        )
        spec = FutureSpec(4, 10)
        model = arx_train(ds, spec, p=60, lam=1e-8, seed=0, feature_mode="linear")
        errors = [
            arx_rollout_eval(model, tr, (1,), spec.history_len)[1] for tr in ds.split("test")
        ]
        assert np.concatenate(errors).mean() <= 1e-4

    def test_shuffled_targets_control(self):
        # Permuting the regression targets destroys the signal: test MSE must
        # stay near the target variance.
        ds = simulate_benchmark(10, 60, seed=2)
        spec = FutureSpec(4, 6)
        rng = np.random.default_rng(3)
        shuffled = []
        for i, tr in enumerate(ds.trajectories):
            if ds.splits[i] == "train":
                perm = rng.permutation(tr.length)
                shuffled.append(Trajectory(tr.observations[:, perm], tr.actions))
            else:
                shuffled.append(tr)
        ds_shuffled = Dataset(shuffled, 1, 1, ds.dt, ds.seed, ds.splits)
        model = arx_train(ds_shuffled, spec, num_freq=200, p=10, lam=1e-3, seed=0)
        errors = [
            arx_rollout_eval(model, tr, (1,), spec.history_len)[1]
            for tr in ds.split("test")
        ]
        mse = np.concatenate(errors).mean()
        test_obs = np.hstack([t.observations for t in ds.split("test")])
        assert mse >= 0.9 * test_obs.var()

    def test_predict_matches_rollout(self):
        ds = simulate_benchmark(6, 40, seed=4)
        spec = FutureSpec(3, 5)
        model = arx_train(ds, spec, num_freq=80, p=8, lam=1e-2, seed=0)
        traj = ds.split("test")[0]
        s = 7
        hist = history_windows(traj, spec.history_len, s + 1)[:, s]
        window = arx_predict(model, hist, traj.actions[:, s : s + 3])
        errors = arx_rollout_eval(model, traj, (1,), 0)
        t = s  # horizon 1 target at time s uses window start s
        expected = float(((window[0] - traj.observations[:, t]) ** 2).sum())
        assert abs(errors[1][t] - expected) < 1e-12

    def test_roundtrip(self, tmp_path):
        ds = simulate_benchmark(6, 40, seed=5)
        model = arx_train(ds, FutureSpec(3, 4), num_freq=60, p=6, lam=1e-2, seed=0)
        save_arx(model, tmp_path / "arx.json")
        back = load_arx(tmp_path / "arx.json")
        np.testing.assert_array_equal(back.weights, model.weights)
        rng = np.random.default_rng(6)
        hist = rng.standard_normal(model.spec.history_len * 2)
        acts = rng.standard_normal((1, 3))
        np.testing.assert_array_equal(
            arx_predict(model, hist, acts), arx_predict(back, hist, acts)
        )

    def test_kind_check(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"kind": "other"}')
        with pytest.raises(ValueError, match="arx"):
            load_arx(tmp_path / "bad.json")
