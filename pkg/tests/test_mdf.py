import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sampfit.core import HypothesisSet, Kind
from sampfit.mdf import (FittingHead, SoftAssignment, em_fit, finetune_end_to_end, fit_mixture, fit_moments,
                         joint_loss_and_grads, mixture_nll_batch, soft_assign, softmax, train_fitting)
from sampfit.losses import Variant, WtaConfig
from sampfit.sampler import THREE_POINTS, HypothesisNet, TrainConfig, train_sampler


def _brute_force(mu, s2, gamma):
    """Loop-level evaluation of the weight, mean and variance formulas."""
    K, M = gamma.shape
    pi, mean, var = np.zeros(M), np.zeros((M, 2)), np.zeros((M, 2))
    for i in range(M):
        G = 0.0
        for k in range(K):
            G += gamma[k, i]
        pi[i] = G / K
        for d in range(2):
            mean[i, d] = sum(gamma[k, i] * mu[k, d] for k in range(K)) / G
        for d in range(2):
            acc = 0.0
            for k in range(K):
                acc += gamma[k, i] * ((mean[i, d] - mu[k, d]) ** 2 + (0.0 if s2 is None else s2[k, d]))
            var[i, d] = acc / G
    return pi, mean, var


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        dn = f()
        x[i] = old
        g[i] = (up - dn) / (2 * h)
    return g


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)


class TestSoftAssign:
    def test_zero_logits_uniform(self):
        np.testing.assert_array_equal(soft_assign(np.zeros((3, 4))).gamma, 0.25)

    def test_large_logit_no_overflow(self):
        g = soft_assign([[1000.0, 0, 0, 0]]).gamma
        np.testing.assert_allclose(g, [[1, 0, 0, 0]], atol=1e-300)
        assert np.all(np.isfinite(g))

    def test_rows_sum_to_one(self):
        g = soft_assign(np.random.default_rng(0).normal(scale=10, size=(500, 6))).gamma
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_invalid_rows(self):
        with pytest.raises(ValueError):
            SoftAssignment(np.array([[0.5, 0.6]]))


class TestFitMixture:
    pts = HypothesisSet([[0, 0], [2, 0], [4, 0], [6, 0]])
    onehot = np.tile([1.0, 0, 0, 0], (4, 1))

    def test_population_variance(self):
        m = fit_mixture(self.pts, SoftAssignment(self.onehot))
        np.testing.assert_array_equal(m.weights, [1, 0, 0, 0])
        np.testing.assert_allclose(m.mu[0], [3, 0])
        assert m.scale[0, 0] ** 2 == pytest.approx(5.0, rel=1e-14)

    def test_total_variance_adds_hypothesis_variance(self):
        hs = HypothesisSet(self.pts.mu, np.ones((4, 2)))
        m = fit_mixture(hs, SoftAssignment(self.onehot))
        assert m.scale[0, 0] ** 2 == pytest.approx(6.0, rel=1e-14)
        assert m.scale[0, 1] ** 2 == pytest.approx(1.0, rel=1e-14)

    def test_degenerate_components_flagged(self):
        _, mean, var, degen = fit_moments(self.pts.mu[None], None, self.onehot[None])
        np.testing.assert_array_equal(degen[0], [False, True, True, True])
        np.testing.assert_allclose(mean[0, 1:], np.tile([3.0, 0.0], (3, 1)))
        assert np.all(var[0, 1:] > 0)

    def test_laplace_scale_conversion(self):
        m = fit_mixture(self.pts, SoftAssignment(self.onehot), kind=Kind.LAPLACE)
        assert m.scale[0, 0] == pytest.approx(np.sqrt(5.0 / 2.0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(200):
            K, M = rng.integers(2, 12), rng.integers(1, 6)
            mu = rng.normal(scale=20, size=(K, 2))
            s2 = rng.uniform(0.1, 4, size=(K, 2)) if rng.random() < 0.5 else None
            gamma = soft_assign(rng.normal(scale=2, size=(K, M))).gamma
            pi, mean, var, _ = fit_moments(mu[None], None if s2 is None else s2[None], gamma[None])
            bp, bm, bv = _brute_force(mu, s2, gamma)
            worst = max(worst, np.max(np.abs(pi[0] - bp)), np.max(np.abs(mean[0] - bm) / 20),
                        np.max(np.abs(var[0] - bv) / np.maximum(bv, 1)))
        assert worst < 1e-12

    def test_weights_sum_to_one_for_10k_assignments(self):
        rng = np.random.default_rng(1)
        gamma = softmax(rng.normal(scale=3, size=(10_000, 8, 4)))
        mu = rng.normal(size=(10_000, 8, 2))
        pi, _, _, _ = fit_moments(mu, None, gamma)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 10), st.integers(1, 5), st.integers(0, 10_000))
    def test_permutation_invariance(self, K, M, seed):
        rng = np.random.default_rng(seed)
        hs = HypothesisSet(rng.normal(size=(K, 2)), rng.uniform(0.1, 2, (K, 2)))
        g = soft_assign(rng.normal(size=(K, M)))
        perm = rng.permutation(K)
        a = fit_mixture(hs, g)
        b = fit_mixture(HypothesisSet(hs.mu[perm], hs.scale[perm]), SoftAssignment(g.gamma[perm]))
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-14)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-12)
        np.testing.assert_allclose(a.scale, b.scale, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10), st.integers(1, 5), st.integers(0, 10_000))
    def test_variance_floor_from_hypothesis_scales(self, K, M, seed):
        rng = np.random.default_rng(seed)
        mu = rng.normal(size=(1, K, 2))
        s2 = rng.uniform(0.1, 2, (1, K, 2))
        gamma = softmax(rng.normal(size=(1, K, M)))
        _, _, var, degen = fit_moments(mu, s2, gamma)
        floor = np.einsum("bkm,bkd->bmd", gamma, s2) / gamma.sum(axis=1)[..., None]
        ok = ~degen[0]
        assert np.all(var[0][ok] >= floor[0][ok] * (1 - 1e-12))

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            fit_mixture(self.pts, SoftAssignment(np.full((3, 2), 0.5)))


class TestGradients:
    @pytest.mark.parametrize("kind", list(Kind))
    def test_mixture_nll_batch(self, kind):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(50):
            M = 3
            pi = soft_assign(rng.normal(size=(1, M))).gamma
            mean = rng.normal(scale=2, size=(1, M, 2))
            var = rng.uniform(0.5, 3, size=(1, M, 2))
            y = rng.normal(scale=2, size=(1, 2))
            if np.min(np.abs(y[:, None] - mean)) < 1e-3:
                continue
            _, g_pi, g_mean, g_var = mixture_nll_batch(pi, mean, var, y, kind)
            f = lambda: mixture_nll_batch(pi, mean, var, y, kind, grad=False)[0]
            worst = max(worst, _rel(g_pi, _fd(f, pi)), _rel(g_mean, _fd(f, mean)), _rel(g_var, _fd(f, var)))
        assert worst < 1e-4

    @pytest.mark.parametrize("with_scale", [False, True])
    @pytest.mark.parametrize("kind", list(Kind))
    def test_head_parameters_and_inputs(self, with_scale, kind):
        rng = np.random.default_rng(4)
        K, M = 6, 3
        worst = 0.0
        for _ in range(50):
            head = FittingHead(K, M, rng, with_scale=with_scale, hidden=8, in_scale=3.0, kind=kind, min_var=0.5)
            mu = rng.normal(scale=3, size=(2, K, 2))
            sc = rng.uniform(0.5, 2, size=(2, K, 2)) if with_scale else None
            y = rng.normal(scale=3, size=(2, 2))
            loss, grads, g_mu, g_sc = head.loss_and_grads(mu, sc, y, want_input_grad=True)
            f = lambda: head.loss_and_grads(mu, sc, y)[0]
            for p, g in zip(head.params, grads):
                worst = max(worst, _rel(g, _fd(f, p)))
            worst = max(worst, _rel(g_mu, _fd(f, mu)))
            if with_scale:
                worst = max(worst, _rel(g_sc, _fd(f, sc)))
        assert worst < 1e-4

    def test_joint_end_to_end(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(50):
            samp = HypothesisNet(3, 4, rng, with_scale=True, hidden=(6,), out_scale=2.0, sigma_bound=4.0)
            head = FittingHead(4, 2, rng, hidden=6)
            X = rng.normal(size=(3, 3))
            Y = rng.normal(scale=2, size=(3, 2))
            _, grads = joint_loss_and_grads(samp, head, X, Y)
            params = samp.params + head.params
            f = lambda: joint_loss_and_grads(samp, head, X, Y)[0]
            worst = max(worst, max(_rel(g, _fd(f, p)) for p, g in zip(params, grads)))
        assert worst < 1e-4


class _FixedSampler:
    """Stands in for a trained sampler: hypotheses depend on nothing."""

    def __init__(self, mu):
        self.mu = np.asarray(mu, float)
        self.K = len(self.mu)
        self.with_scale = False

    def hypotheses(self, X):
        return np.repeat(self.mu[None], len(X), axis=0), None


class TestTraining:
    def test_two_clusters_are_separated(self):
        rng = np.random.default_rng(0)
        K = 10
        labels = np.array([0] * 5 + [1] * 5)
        mu = np.where(labels[:, None] == 0, [0.0, 0.0], [40.0, 0.0]) + rng.normal(scale=0.5, size=(K, 2))
        samp = _FixedSampler(mu)
        Y = np.where(rng.random(2000)[:, None] < 0.5, [0.0, 0.0], [40.0, 0.0]) + rng.normal(size=(2000, 2))
        X = np.zeros((2000, 1))
        head = FittingHead(K, 2, np.random.default_rng(1), with_scale=False, hidden=32, in_scale=20.0)
        cfg = TrainConfig(lr=1e-2, fit_iters=1500)
        before = head.loss_and_grads(*samp.hypotheses(X[:500]), Y[:500])[0]
        head, trace = train_fitting(head, samp, X, Y, cfg)
        after = head.loss_and_grads(*samp.hypotheses(X[:500]), Y[:500])[0]
        z, _ = head.mlp.forward(head._inputs(mu[None], None))
        gamma = soft_assign(z.reshape(K, 2)).gamma
        assert np.all(gamma.max(axis=1) >= 0.9)
        pred = gamma.argmax(axis=1)
        purity = max(np.mean(pred == labels), np.mean(pred != labels))
        assert purity >= 0.95
        assert after <= before
        assert np.all(np.isfinite(trace.losses()))

    def _three_cluster_pair(self, seed):
        rng = np.random.default_rng(seed)
        Y = 100.0 * THREE_POINTS[rng.integers(3, size=2000)] + rng.normal(size=(2000, 2))
        X = np.ones((2000, 1))
        cfg = TrainConfig(lr=1e-2, seed=seed, ed_iters=2000, nll_iters=1000, fit_iters=1000, finetune_iters=1000,
                          sigma_schedule=[(0, 5.0)])
        samp = HypothesisNet(1, 8, np.random.default_rng(seed), with_scale=True, out_scale=10.0,
                             out_offset=(50.0, 50.0), sigma_bound=5.0)
        train_sampler(samp, X, Y, cfg, WtaConfig(Variant.EWTA, top_k=8))
        head = FittingHead(8, 4, np.random.default_rng(seed + 100), in_scale=10.0, in_offset=(50.0, 50.0))
        train_fitting(head, samp, X, Y, cfg)
        return samp, head, X, Y, cfg

    @staticmethod
    def _off_mode_mass(mix, tol=10.0):
        d = np.linalg.norm(mix.mu[:, None] - 100.0 * THREE_POINTS[None], axis=-1).min(axis=1)
        return mix.weights[d > tol].sum()

    def test_finetune_lowers_nll_and_removes_spurious_modes(self):
        deltas, off_before, off_after = [], [], []
        for seed in range(5):
            samp, head, X, Y, cfg = self._three_cluster_pair(seed)
            before = joint_loss_and_grads(samp, head, X, Y)[0]
            off_before.append(self._off_mode_mass(head(samp.forward(X[0]))))
            finetune_end_to_end(samp, head, X, Y, dataclasses.replace(cfg, lr=1e-3), start_iter=4000)
            after = joint_loss_and_grads(samp, head, X, Y)[0]
            deltas.append(after - before)
            mix = head(samp.forward(X[0]))
            assert abs(mix.weights.sum() - 1) < 1e-9 and np.all(mix.scale > 0)
            off_after.append(self._off_mode_mass(mix))
        assert np.median(deltas) < 0
        # EWTA leaves some hypotheses between the clusters; joint training moves their weight onto real modes
        assert sum(b >= 0.1 for b in off_before) >= 3
        assert sum(a < 0.05 for a in off_after) >= 4


class TestEm:
    def test_two_well_separated_clusters(self):
        rng = np.random.default_rng(0)
        P = np.vstack([rng.normal(size=(500, 2)), rng.normal(size=(500, 2)) + [20, 0]])
        m = em_fit(P, 2, np.random.default_rng(1))
        order = np.argsort(m.mu[:, 0])
        np.testing.assert_allclose(m.mu[order], [[0, 0], [20, 0]], atol=0.3)
        np.testing.assert_allclose(m.weights, 0.5, atol=0.05)

    def test_single_component_closed_form(self):
        P = np.random.default_rng(2).normal(size=(300, 2)) * [3, 1]
        m = em_fit(P, 1, np.random.default_rng(0))
        np.testing.assert_allclose(m.mu[0], P.mean(axis=0), atol=1e-9)
        np.testing.assert_allclose(m.scale[0] ** 2, P.var(axis=0), rtol=1e-9)

    def test_log_likelihood_monotone(self):
        rng = np.random.default_rng(3)
        P = np.vstack([rng.normal(size=(200, 2)) * 3, rng.normal(size=(200, 2)) + [5, 5]])
        _, hist = em_fit(P, 3, rng, return_history=True)
        assert np.all(np.diff(hist) >= -1e-9 * np.abs(hist[1:]))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            em_fit([[0, 0], [0, 0], [1, 1]], 3, np.random.default_rng(0))
