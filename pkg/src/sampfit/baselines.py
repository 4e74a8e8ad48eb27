"""Comparison methods: constant-velocity Kalman filter and simple learned predictors."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import GridDensity, Kind, MixtureDistribution
from .errors import ConfigError
from .losses import LossKind, Variant, WtaConfig
from .mdf import softmax
from .nn import Mlp, Whitening
from .sampler import HypothesisNet, TrainConfig, Trainer, train_sampler

log = logging.getLogger(__name__)


# -- Kalman filter -------------------------------------------------------------------

@dataclass
class KalmanState:
    """Per-axis (location, velocity) state: ``x`` (2 axes, 2), ``P`` (2 axes, 2, 2)."""

    x: np.ndarray
    P: np.ndarray

    def predict(self, F, Q):
        self.x = self.x @ F.T
        self.P = F @ self.P @ F.T + Q

    def update(self, z, R):
        # H = I: the observation is (location, velocity) per axis
        S = self.P + R
        K = self.P @ np.linalg.pinv(S)
        self.x = self.x + np.einsum("aij,aj->ai", K, z - self.x)
        self.P = (np.eye(2) - K) @ self.P
        self.P = 0.5 * (self.P + np.swapaxes(self.P, -1, -2))


def kalman_predict_future(history, dt_future: int, q: float = 2.0, r: float = 2.0,
                          dt: float = 1.0) -> MixtureDistribution:
    """Constant-velocity filter over 3 observed positions, then ``dt_future`` predict steps.

    Observations are (position, mean velocity) where the velocity constant is
    the average of the two observed frame-to-frame velocities.  The filter is
    started one frame before the first observation and runs three
    predict/update cycles.  Returns a single Gaussian (zero variance is
    floored at 1e-6 to keep the mixture valid).
    """
    obs = np.asarray(history, dtype=float).reshape(-1, 2)
    if len(obs) != 3:
        raise ConfigError("the Kalman baseline needs exactly 3 observed positions")
    mean, var = kalman_moments(obs, dt_future, q, r, dt)
    return MixtureDistribution([1.0], mean[None], np.sqrt(np.maximum(var, 1e-12))[None], Kind.GAUSSIAN)


def kalman_moments(obs, dt_future: int, q: float = 2.0, r: float = 2.0, dt: float = 1.0):
    """Per-axis predicted location mean (2,) and variance (2,)."""
    obs = np.asarray(obs, dtype=float).reshape(3, 2)
    v = (obs[2] - obs[0]) / (2.0 * dt)
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = np.broadcast_to(q * np.eye(2), (2, 2, 2))
    R = np.broadcast_to(r * np.eye(2), (2, 2, 2))
    st = KalmanState(np.stack([obs[0] - v * dt, v], axis=1), R.copy())
    for k in range(3):
        st.predict(F, Q)
        st.update(np.stack([obs[k], v], axis=1), R)
    for _ in range(int(dt_future)):
        st.predict(F, Q)
    return st.x[:, 0].copy(), st.P[:, 0, 0].copy()


# -- learned single-shot baselines --------------------------------------------------------

def train_single_point(X, Y, cfg: TrainConfig, rng=None, **net_kw):
    """K = 1 point regressor trained with the Euclidean distance."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    model = HypothesisNet(X.shape[1], 1, rng, with_scale=False, **net_kw)
    return train_sampler(model, X, Y, cfg, WtaConfig(Variant.WTA, loss_kind=LossKind.ED))


def train_unimodal(X, Y, cfg: TrainConfig, rng=None, density=Kind.GAUSSIAN, **net_kw):
    """K = 1 hypothesis with a bounded scale, ED warm-up then NLL."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    model = HypothesisNet(X.shape[1], 1, rng, with_scale=True, sigma_bound=cfg.sigma_bound(0), **net_kw)
    return train_sampler(model, X, Y, cfg, WtaConfig(Variant.WTA, loss_kind=LossKind.ED, density=density))


def unimodal_mixture(model: HypothesisNet, x, kind=Kind.GAUSSIAN) -> MixtureDistribution:
    hs = model.forward(x)
    return MixtureDistribution([1.0], hs.mu, hs.scale, kind)


# -- non-parametric grid ----------------------------------------------------------------

def blurred_target(y_local, n: int, cell: float, sigma_bins: float) -> np.ndarray:
    """(B, n*n) row-major targets: Gaussian bumps at ``y_local`` (window pixels), normalized."""
    y = np.atleast_2d(np.asarray(y_local, dtype=float))
    c = (np.arange(n) + 0.5) * cell
    s = sigma_bins * cell
    gx = np.exp(-0.5 * ((c[None, :] - y[:, :1]) / s) ** 2)
    gy = np.exp(-0.5 * ((c[None, :] - y[:, 1:2]) / s) ** 2)
    t = gy[:, :, None] * gx[:, None, :]
    t = t.reshape(len(y), -1)
    z = t.sum(axis=1, keepdims=True)
    # a target far outside the window falls back to its nearest bin
    far = z[:, 0] < 1e-300
    if far.any():
        idx = np.clip(np.floor(y[far] / cell).astype(int), 0, n - 1)
        t[far] = 0.0
        t[np.flatnonzero(far), idx[:, 1] * n + idx[:, 0]] = 1.0
        z[far] = 1.0
    return t / z


class NonParametricModel:
    """Trunk with an n x n logit head over a window of grid bins around an anchor.

    The window is aligned with the world grid: it covers ``n`` bins of size
    ``cell`` centered on the bin holding the anchor.
    """

    def __init__(self, in_dim: int, rng: np.random.Generator, n: int = 64, cell: float = 4.0,
                 hidden=(64, 64), sigma_np: float = 3.0, input_transform: Whitening | None = None):
        if sigma_np <= 0:
            raise ConfigError("sigma_np must be positive")
        self.in_dim, self.n, self.cell, self.sigma_np = in_dim, n, float(cell), float(sigma_np)
        self.hidden = tuple(hidden)
        self.input_transform = input_transform
        self.mlp = Mlp([in_dim, *hidden, n * n], rng, zero_blocks=(0,))

    @property
    def params(self):
        return self.mlp.params

    def window_origin(self, anchor):
        """Pixel origin of each window, snapped to the world grid."""
        a = np.atleast_2d(np.asarray(anchor, dtype=float))
        return (np.floor(a / self.cell) - self.n // 2) * self.cell

    def probs(self, X):
        X = np.atleast_2d(X)
        z, acts = self.mlp.forward(X if self.input_transform is None else self.input_transform(X))
        return softmax(z, axis=-1), acts

    def loss_and_grads(self, X, Y_local):
        q, acts = self.probs(X)
        t = blurred_target(Y_local, self.n, self.cell, self.sigma_np)
        B = len(X)
        loss = -np.sum(t * np.log(np.maximum(q, 1e-300)), axis=1)
        grads, _ = self.mlp.backward(acts, (q - t) / B)
        return float(loss.mean()), grads

    def predict_grid(self, x, anchor, world_bins: int = 64) -> GridDensity:
        """Window probabilities pasted into a world-aligned grid, renormalized."""
        q, _ = self.probs(np.asarray(x, dtype=float).reshape(1, -1))
        win = q[0].reshape(self.n, self.n)
        o = (self.window_origin(anchor)[0] / self.cell).astype(int)  # (col, row) offset in bins
        out = np.zeros((world_bins, world_bins))
        r0, c0 = o[1], o[0]
        rs, cs = slice(max(r0, 0), min(r0 + self.n, world_bins)), slice(max(c0, 0), min(c0 + self.n, world_bins))
        out[rs, cs] = win[rs.start - r0:rs.stop - r0, cs.start - c0:cs.stop - c0]
        tot = out.sum()
        if tot <= 0:
            raise ConfigError("prediction window does not overlap the world grid")
        return GridDensity(out / tot, (self.cell, self.cell), (0.0, 0.0))

    def state(self) -> dict:
        return {"type": "NonParametricModel", "in_dim": self.in_dim, "n": self.n, "cell": self.cell,
                "sigma_np": self.sigma_np, "hidden": list(self.hidden), "mlp": self.mlp.state(),
                "input": None if self.input_transform is None else self.input_transform.state()}

    @classmethod
    def from_state(cls, state, params):
        obj = cls.__new__(cls)
        obj.in_dim, obj.n, obj.cell = state["in_dim"], state["n"], state["cell"]
        obj.sigma_np, obj.hidden = state["sigma_np"], tuple(state["hidden"])
        obj.input_transform = Whitening.from_state(state.get("input"))
        obj.mlp = Mlp.from_state(state["mlp"], params)
        return obj


def train_nonparametric(X, Y, anchors, cfg: TrainConfig, sigma_np: float = 3.0, n: int = 64, cell: float = 4.0,
                        rng=None, hidden=(64, 64), input_transform=None):
    """Cross-entropy between the predicted bin distribution and the blurred target."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ConfigError("empty dataset")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    model = NonParametricModel(X.shape[1], rng, n, cell, hidden, sigma_np, input_transform)
    Y_local = np.asarray(Y, dtype=float) - model.window_origin(anchors)
    tr = Trainer(model.params, len(X), cfg, stream=3)
    tr.run(cfg.np_iters, "np", lambda idx, i: model.loss_and_grads(X[idx], Y_local[idx]))
    return model, tr.trace
