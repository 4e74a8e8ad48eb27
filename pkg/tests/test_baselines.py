import numpy as np
import pytest

from sampfit.baselines import (NonParametricModel, blurred_target, kalman_moments, kalman_predict_future,
                               train_nonparametric, train_single_point, train_unimodal, unimodal_mixture)
from sampfit.core import mixture_nll
from sampfit.errors import ConfigError
from sampfit.mdf import em_fit
from sampfit.sampler import SCALE_FLOOR, TrainConfig


def _kalman_oracle(obs, steps, q, r):
    """Scalar-per-axis recursion written out with explicit 2x2 algebra."""
    obs = np.asarray(obs, dtype=float)
    mean, var = np.zeros(2), np.zeros(2)
    for a in range(2):
        z = obs[:, a]
        v = (z[2] - z[0]) / 2.0
        F = np.array([[1.0, 1.0], [0.0, 1.0]])
        Q = q * np.eye(2)
        R = r * np.eye(2)
        x = np.array([z[0] - v, v])
        P = R.copy()
        for k in range(3):
            x = F @ x
            P = F @ P @ F.T + Q
            S = P + R
            K = P @ np.linalg.inv(S) if np.linalg.det(S) != 0 else np.zeros((2, 2))
            x = x + K @ (np.array([z[k], v]) - x)
            P = (np.eye(2) - K) @ P
        for _ in range(steps):
            x = F @ x
            P = F @ P @ F.T + Q
        mean[a], var[a] = x[0], P[0, 0]
    return mean, var


class TestKalman:
    def test_matches_hand_rolled_recursion(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            obs = np.cumsum(rng.normal(scale=5, size=(3, 2)), axis=0) + rng.uniform(0, 256, 2)
            steps = int(rng.integers(0, 40))
            q, r = rng.uniform(0.1, 5, size=2)
            mean, var = kalman_moments(obs, steps, q, r)
            m_ref, v_ref = _kalman_oracle(obs, steps, q, r)
            np.testing.assert_allclose(mean, m_ref, rtol=0, atol=1e-10)
            np.testing.assert_allclose(var, v_ref, rtol=1e-10, atol=1e-10)

    def test_noiseless_line_is_exact(self):
        m = kalman_predict_future([[0, 0], [1, 0], [2, 0]], 20, q=0.0, r=0.0)
        np.testing.assert_allclose(m.mu[0], [22.0, 0.0], atol=1e-12)
        mean, var = kalman_moments([[0, 0], [1, 0], [2, 0]], 20, q=0.0, r=0.0)
        np.testing.assert_array_equal(var, 0.0)

    def test_variance_grows_with_horizon(self):
        obs = [[10, 20], [12, 19], [15, 17]]
        var = [kalman_moments(obs, k)[1] for k in range(0, 30, 5)]
        assert np.all(np.diff(np.array(var), axis=0) > 0)

    def test_axes_independent(self):
        a = kalman_moments([[0, 5], [1, 5], [2, 5]], 7)
        b = kalman_moments([[0, -40], [1, 3], [2, 9]], 7)
        assert a[0][0] == b[0][0] and a[1][0] == b[1][0]

    def test_needs_three_observations(self):
        with pytest.raises(ConfigError):
            kalman_predict_future([[0, 0], [1, 1]], 5)


class TestSinglePoint:
    def test_constant_target(self):
        X = np.ones((200, 2))
        Y = np.tile([30.0, -12.0], (200, 1))
        model, trace = train_single_point(X, Y, TrainConfig(lr=1e-2, ed_iters=2000, nll_iters=0), out_scale=10.0)
        assert np.linalg.norm(model.forward(X[0]).mu[0] - [30, -12]) < 0.5
        assert np.all(np.isfinite(trace.losses()))

    def test_two_modes_land_on_the_median_segment(self):
        # any point on the segment minimizes the mean distance to two equally likely modes
        rng = np.random.default_rng(1)
        a, b = np.array([-20.0, 0.0]), np.array([20.0, 10.0])
        Y = np.where(rng.random((2000, 1)) < 0.5, a, b)
        X = np.ones((2000, 1))
        model, _ = train_single_point(X, Y, TrainConfig(lr=1e-2, ed_iters=3000, nll_iters=0), out_scale=10.0)
        p = model.forward(X[0]).mu[0]
        t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
        assert np.linalg.norm(p - (a + t * (b - a))) < 1.0
        ed = 0.5 * (np.linalg.norm(p - a) + np.linalg.norm(p - b))
        assert ed == pytest.approx(0.5 * np.linalg.norm(b - a), rel=0.01)
        # far from the modes themselves: the averaging pathology
        assert min(np.linalg.norm(p - a), np.linalg.norm(p - b)) > 5.0


class TestUnimodal:
    def test_recovers_sigma(self):
        rng = np.random.default_rng(2)
        X = np.ones((3000, 1))
        Y = np.array([40.0, 60.0]) + 3.0 * rng.normal(size=(3000, 2))
        cfg = TrainConfig(lr=1e-2, ed_iters=500, nll_iters=2500, sigma_schedule=[(0, 10.0)])
        model, _ = train_unimodal(X, Y, cfg, out_scale=10.0)
        m = unimodal_mixture(model, X[0])
        np.testing.assert_allclose(m.scale[0], 3.0, rtol=0.15)
        np.testing.assert_allclose(m.mu[0], [40, 60], atol=0.5)

    def test_bimodal_nll_worse_than_two_component_fit(self):
        rng = np.random.default_rng(3)
        centers = np.array([[0.0, 0.0], [30.0, 0.0]])
        Y = centers[rng.integers(2, size=2000)] + rng.normal(size=(2000, 2))
        X = np.ones((2000, 1))
        cfg = TrainConfig(lr=1e-2, ed_iters=500, nll_iters=2500, sigma_schedule=[(0, 30.0)])
        model, _ = train_unimodal(X, Y, cfg, out_scale=10.0)
        uni = np.mean(mixture_nll(unimodal_mixture(model, X[0]), Y))
        two = np.mean(mixture_nll(em_fit(Y, 2, np.random.default_rng(0)), Y))
        assert uni > two + 1.0

    def test_scale_respects_bound(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(200, 3))
        Y = 100 * rng.normal(size=(200, 2))
        cfg = TrainConfig(lr=1e-2, ed_iters=100, nll_iters=400, sigma_schedule=[(0, 4.0)])
        model, _ = train_unimodal(X, Y, cfg)
        _, sc = model.hypotheses(X)
        assert np.all(sc > SCALE_FLOOR) and np.all(sc <= 4.0)


class TestNonParametric:
    def test_blurred_target(self):
        t = blurred_target([[10.0, 26.0]], 16, 4.0, 1.5)[0].reshape(16, 16)
        assert t.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.unravel_index(np.argmax(t), t.shape) == (6, 2)

    def test_far_target_falls_back_to_edge_bin(self):
        t = blurred_target([[1e6, 5.0]], 8, 1.0, 0.1)[0].reshape(8, 8)
        assert t[5, 7] == 1.0

    def test_constant_target_argmax(self):
        X = np.ones((300, 2))
        anchors = np.tile([100.0, 100.0], (300, 1))
        Y = np.tile([110.0, 90.0], (300, 1))
        cfg = TrainConfig(lr=1e-2, np_iters=600)
        model, trace = train_nonparametric(X, Y, anchors, cfg, n=16, cell=4.0, hidden=(16,))
        g = model.predict_grid(X[0], anchors[0])
        assert g.mass.sum() == pytest.approx(1.0, abs=1e-9)
        r, c, _ = g.bin_index([110.0, 90.0])
        assert np.unravel_index(np.argmax(g.mass), g.mass.shape) == (r[0], c[0])
        assert np.all(np.isfinite(trace.losses()))

    def test_output_is_a_distribution(self):
        rng = np.random.default_rng(5)
        model = NonParametricModel(3, rng, n=8, hidden=(4,))
        model.params[-2][:] = rng.normal(size=model.params[-2].shape)
        q, _ = model.probs(rng.normal(size=(10, 3)))
        np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(q >= 0)

    def test_rejects_bad_sigma(self):
        with pytest.raises(ConfigError):
            NonParametricModel(2, np.random.default_rng(0), sigma_np=0.0)
