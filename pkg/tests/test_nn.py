import numpy as np
import pytest

from sampfit.nn import Adam, Mlp, Sgd, Whitening, clip_grads, make_optimizer, sigmoid, softplus


class TestActivations:
    def test_softplus_zero(self):
        assert softplus(0.0) == pytest.approx(np.log(2.0))

    def test_softplus_large_inputs_stay_finite(self):
        np.testing.assert_allclose(softplus(np.array([800.0, -800.0])), [800.0, 0.0])

    def test_sigmoid_symmetry(self):
        x = np.linspace(-30, 30, 61)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


class TestMlp:
    def test_shapes(self):
        net = Mlp([3, 5, 4], np.random.default_rng(0))
        out, acts = net.forward(np.zeros((7, 3)))
        assert out.shape == (7, 4)
        assert len(acts) == 3
        assert net.n_params == 3 * 5 + 5 + 5 * 4 + 4

    def test_zero_block_starts_at_zero(self):
        net = Mlp([3, 6, 5], np.random.default_rng(0), head_blocks=[3, 2], zero_blocks=(1,))
        np.testing.assert_array_equal(net.params[-2][:, 3:], 0.0)

    def test_appending_blocks_keeps_earlier_init(self):
        a = Mlp([3, 6, 4], np.random.default_rng(1), head_blocks=[4])
        b = Mlp([3, 6, 7], np.random.default_rng(1), head_blocks=[4, 3])
        np.testing.assert_array_equal(a.params[-2], b.params[-2][:, :4])

    def test_bad_blocks(self):
        with pytest.raises(ValueError):
            Mlp([2, 3], np.random.default_rng(0), head_blocks=[2])

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        net = Mlp([4, 8, 8, 3], rng)
        x = rng.normal(size=(5, 4))
        w = rng.normal(size=(5, 3))

        def f():
            return float(np.sum(net.forward(x)[0] * w))

        _, acts = net.forward(x)
        grads, gx = net.backward(acts, w)
        h = 1e-6
        for p, g in zip(net.params, grads):
            fd = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                up = f()
                p[i] = old - h
                dn = f()
                p[i] = old
                fd[i] = (up - dn) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)
        fdx = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            old = x[i]
            x[i] = old + h
            up = f()
            x[i] = old - h
            dn = f()
            x[i] = old
            fdx[i] = (up - dn) / (2 * h)
        np.testing.assert_allclose(gx, fdx, rtol=1e-5, atol=1e-7)

    def test_state_roundtrip(self):
        net = Mlp([2, 4, 3], np.random.default_rng(0), head_blocks=[1, 2])
        back = Mlp.from_state(net.state(), net.params)
        x = np.ones((1, 2))
        np.testing.assert_array_equal(back.forward(x)[0], net.forward(x)[0])
        assert back.head_blocks == [1, 2]


class TestOptimizers:
    def test_sgd_step(self):
        p = [np.array([1.0, 2.0])]
        Sgd(0.5).step(p, [np.array([2.0, -2.0])])
        np.testing.assert_array_equal(p[0], [0.0, 3.0])

    def test_adam_first_step_is_lr_sized(self):
        p = [np.array([1.0, 1.0])]
        Adam(lr=0.1).step(p, [np.array([3.0, -1e-3])])
        np.testing.assert_allclose(p[0], [0.9, 1.1], rtol=1e-4)

    def test_adam_minimizes_quadratic(self):
        p = [np.array([5.0, -3.0])]
        opt = Adam(lr=0.05)
        for _ in range(2000):
            opt.step(p, [2 * p[0]])
        np.testing.assert_allclose(p[0], 0.0, atol=1e-3)

    def test_factory(self):
        assert isinstance(make_optimizer("sgd", 0.1), Sgd)
        assert isinstance(make_optimizer("adam", 0.1), Adam)
        with pytest.raises(ValueError):
            make_optimizer("rmsprop", 0.1)

    def test_clip(self):
        g = [np.array([3.0]), np.array([4.0])]
        assert clip_grads(g, 1.0) == 5.0
        np.testing.assert_allclose([g[0][0], g[1][0]], [0.6, 0.8])

    def test_clip_disabled(self):
        g = [np.array([30.0])]
        clip_grads(g, 0.0)
        assert g[0][0] == 30.0


class TestWhitening:
    def test_fitted_features_have_identity_covariance(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(2000, 3)) @ np.array([[3.0, 0, 0], [1.0, 0.2, 0], [0, 0, 50.0]]) + 7.0
        Z = Whitening.fit(X)(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(np.cov(Z, rowvar=False), np.eye(3), atol=1e-8)

    def test_constant_column_passes_through(self):
        X = np.column_stack([np.arange(10.0), np.ones(10)])
        Z = Whitening.fit(X)(X)
        assert np.all(np.isfinite(Z))
        np.testing.assert_allclose(Z[:, np.argmin(np.ptp(Z, axis=0))], 0.0, atol=1e-12)

    def test_state_roundtrip(self):
        X = np.random.default_rng(1).normal(size=(50, 2))
        w = Whitening.fit(X)
        back = Whitening.from_state(w.state())
        np.testing.assert_array_equal(back(X), w(X))
        assert Whitening.from_state(None) is None
