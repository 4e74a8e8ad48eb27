"""Stage one: a conditional network emitting K hypotheses.

Means are an affine map of the raw network output (``offset + out_scale *
raw``) so the network can work in normalized units while hypotheses live in
pixels.  Scales go through ``softplus + floor`` when no upper bound is set,
and through a sigmoid bounded to ``(floor, bound)`` with unit slope at the
center otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import HypothesisSet
from .errors import ConfigError, NumericalError
from .losses import (LossKind, Variant, WtaConfig, ewta_stages, schedule_top_k, stage_boundaries,
                     wta_batch)
from .nn import Mlp, Whitening, clip_grads, make_optimizer, sigmoid, softplus

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-3


def bounded_scale(raw, bound, floor=SCALE_FLOOR):
    """floor + (bound - floor) * sigmoid(4 raw / (bound - floor)); slope 1 at raw = 0."""
    span = bound - floor
    return floor + span * sigmoid(4.0 * raw / span)


def bounded_scale_grad(raw, bound, floor=SCALE_FLOOR):
    span = bound - floor
    s = sigmoid(4.0 * raw / span)
    return 4.0 * s * (1.0 - s)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    # iteration counts per stage
    ed_iters: int = 2000
    nll_iters: int = 1000
    fit_iters: int = 2000
    finetune_iters: int = 1000
    mdn_full_iters: int = 3000
    np_iters: int = 3000
    # (iteration, bound) knots, linearly interpolated over the global counter
    sigma_schedule: list = field(default_factory=lambda: [(0, 5.0)])
    trace_every: int = 100
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.trace_every < 1:
            raise ConfigError("learning rate, batch size and trace interval must be positive")
        if any(b <= SCALE_FLOOR for _, b in self.sigma_schedule):
            raise ConfigError("sigma bounds must exceed the scale floor")

    def sigma_bound(self, it: int) -> float:
        knots = sorted(self.sigma_schedule)
        xs = [k[0] for k in knots]
        ys = [k[1] for k in knots]
        return float(np.interp(it, xs, ys))


class HypothesisNet:
    """input -> 64 -> 64 -> K x 2 means (+ K x 2 raw scales), tanh hidden."""

    def __init__(self, in_dim: int, K: int, rng: np.random.Generator, with_scale=False,
                 hidden=(64, 64), out_scale=1.0, out_offset=(0.0, 0.0), extra_outputs=0,
                 sigma_bound: Optional[float] = None, input_transform: Optional[Whitening] = None):
        self.in_dim, self.K, self.with_scale = in_dim, K, with_scale
        self.input_transform = input_transform
        self.out_scale = float(out_scale)
        self.out_offset = np.asarray(out_offset, dtype=float).reshape(2)
        self.sigma_bound = sigma_bound
        self.extra_outputs = extra_outputs
        blocks = [2 * K] + ([2 * K] if with_scale else []) + ([extra_outputs] if extra_outputs else [])
        zero = (len(blocks) - 1,) if extra_outputs else ()
        self.mlp = Mlp([in_dim, *hidden, sum(blocks)], rng, head_blocks=blocks, zero_blocks=zero)

    @property
    def params(self):
        return self.mlp.params

    def _check(self, X):
        if X.shape[-1] != self.in_dim:
            raise ConfigError(f"feature dimension {X.shape[-1]} does not match model input {self.in_dim}")

    def scale_from_raw(self, raw):
        if self.sigma_bound is None:
            return softplus(raw) + SCALE_FLOOR
        return bounded_scale(raw, self.sigma_bound)

    def scale_grad(self, raw):
        if self.sigma_bound is None:
            return sigmoid(raw)
        return bounded_scale_grad(raw, self.sigma_bound)

    def forward_batch(self, X):
        """Returns ``mu (B,K,2)``, ``scale (B,K,2) | None``, extra outputs, cache."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check(X)
        out, acts = self.mlp.forward(X if self.input_transform is None else self.input_transform(X))
        K2 = 2 * self.K
        mu = self.out_offset + self.out_scale * out[:, :K2].reshape(-1, self.K, 2)
        scale, raw_s = None, None
        col = K2
        if self.with_scale:
            raw_s = out[:, K2:2 * K2].reshape(-1, self.K, 2)
            scale = self.scale_from_raw(raw_s)
            col = 2 * K2
        extra = out[:, col:] if self.extra_outputs else None
        return mu, scale, extra, (acts, raw_s)

    def backward_batch(self, cache, g_mu, g_scale=None, g_extra=None):
        acts, raw_s = cache
        B = acts[0].shape[0]
        parts = [(self.out_scale * g_mu).reshape(B, -1)]
        if self.with_scale:
            gs = np.zeros((B, self.K, 2)) if g_scale is None else g_scale * self.scale_grad(raw_s)
            parts.append(gs.reshape(B, -1))
        if self.extra_outputs:
            parts.append(np.zeros((B, self.extra_outputs)) if g_extra is None else g_extra)
        return self.mlp.backward(acts, np.concatenate(parts, axis=1))

    def forward(self, x) -> HypothesisSet:
        mu, scale, _, _ = self.forward_batch(np.asarray(x, dtype=float).reshape(1, -1))
        return HypothesisSet(mu[0], None if scale is None else scale[0])

    def hypotheses(self, X):
        mu, scale, _, _ = self.forward_batch(X)
        return mu, scale

    def state(self) -> dict:
        return {
            "type": "HypothesisNet", "in_dim": self.in_dim, "K": self.K, "with_scale": self.with_scale,
            "out_scale": self.out_scale, "out_offset": self.out_offset.tolist(),
            "extra_outputs": self.extra_outputs, "sigma_bound": self.sigma_bound, "mlp": self.mlp.state(),
            "input": None if self.input_transform is None else self.input_transform.state(),
        }

    @classmethod
    def from_state(cls, state, params):
        obj = cls.__new__(cls)
        obj.in_dim, obj.K, obj.with_scale = state["in_dim"], state["K"], state["with_scale"]
        obj.out_scale = state["out_scale"]
        obj.out_offset = np.asarray(state["out_offset"], dtype=float)
        obj.extra_outputs = state["extra_outputs"]
        obj.sigma_bound = state["sigma_bound"]
        obj.input_transform = Whitening.from_state(state.get("input"))
        obj.mlp = Mlp.from_state(state["mlp"], params)
        return obj


def forward(model: HypothesisNet, x) -> HypothesisSet:
    return model.forward(x)


# -- training ----------------------------------------------------------------

@dataclass
class LossTrace:
    rows: list = field(default_factory=list)

    def add(self, it, phase, loss):
        self.rows.append((int(it), phase, float(loss)))

    def losses(self, phase=None):
        return np.array([r[2] for r in self.rows if phase is None or r[1] == phase])

    def extend(self, other: "LossTrace"):
        self.rows.extend(other.rows)


class Trainer:
    """Minibatch loop shared by all trainers: sampling, optimizer, tracing, NaN guard."""

    def __init__(self, params, n: int, cfg: TrainConfig, stream: int = 0, trace=None, start_iter=0):
        self.params = params
        self.n = n
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, 7919, stream])
        self.opt = make_optimizer(cfg.optimizer, cfg.lr)
        self.trace = trace if trace is not None else LossTrace()
        self.it = start_iter

    def run(self, n_iters: int, phase: str, step_fn: Callable):
        """``step_fn(batch_idx, local_iter) -> (mean loss, grads)``."""
        acc, cnt = 0.0, 0
        for i in range(n_iters):
            idx = self.rng.integers(0, self.n, size=min(self.cfg.batch_size, self.n))
            loss, grads = step_fn(idx, i)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericalError(f"non-finite loss/gradient in phase {phase!r} at iteration {self.it} "
                                     f"(loss={loss})")
            if self.cfg.grad_clip:
                clip_grads(grads, self.cfg.grad_clip)
            self.opt.step(self.params, grads)
            acc += loss
            cnt += 1
            self.it += 1
            if cnt == self.cfg.trace_every or i == n_iters - 1:
                self.trace.add(self.it, phase, acc / cnt)
                acc, cnt = 0.0, 0
        return self.trace


def train_sampler(model: HypothesisNet, X, Y, cfg: TrainConfig, wta: WtaConfig,
                  trainer: Optional[Trainer] = None, nll_phase: Optional[bool] = None):
    """Phase 1: ED on the means; phase 2 (scaled models): NLL, both with the WTA variant.

    EWTA restarts its top-k schedule at the start of each phase.  Returns the
    model (trained in place) and its loss trace.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ConfigError("empty dataset")
    wta.validate(model.K)
    tr = trainer or Trainer(model.params, len(X), cfg)
    do_nll = model.with_scale if nll_phase is None else nll_phase

    def make_step(kind: LossKind, total: int):
        base = WtaConfig(wta.variant, wta.epsilon, wta.top_k, kind, wta.density)

        def step(idx, i):
            if model.with_scale:
                model.sigma_bound = cfg.sigma_bound(tr.it)
            c = schedule_top_k(base, i, total, model.K)
            mu, scale, _, cache = model.forward_batch(X[idx])
            loss, g_mu, g_sc = wta_batch(mu, scale if kind is LossKind.NLL else None, Y[idx], c)
            B = len(idx)
            grads, _ = model.backward_batch(cache, g_mu / B, None if g_sc is None else g_sc / B)
            return float(loss.mean()), grads
        return step

    if cfg.ed_iters:
        tr.run(cfg.ed_iters, "ed", make_step(LossKind.ED, cfg.ed_iters))
    if do_nll and cfg.nll_iters:
        tr.run(cfg.nll_iters, "nll", make_step(LossKind.NLL, cfg.nll_iters))
    if model.with_scale:
        model.sigma_bound = cfg.sigma_bound(tr.it)
    return model, tr.trace


# -- free-hypothesis simulation ------------------------------------------------

@dataclass
class SimConfig:
    steps: int = 10000
    lr: float = 1e-2
    seed: int = 0
    init_center: tuple = (0.0, 0.0)
    init_spread: float = 1.0


@dataclass
class SimResult:
    init: np.ndarray
    final: np.ndarray
    snapshots: list  # (label, positions) per stage, taken at the end of the stage

    def untouched(self, tol=1e-3) -> int:
        return int(np.sum(np.linalg.norm(self.final - self.init, axis=1) <= tol))


def simulate_free_hypotheses(gt_sampler: Callable[[np.random.Generator], np.ndarray], K: int,
                             cfg: SimConfig, wta: WtaConfig, init=None) -> SimResult:
    """Hypotheses as free 2-D points attracted by one ground-truth draw per step."""
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        init = np.asarray(cfg.init_center, float) + cfg.init_spread * rng.standard_normal((K, 2))
    init = np.asarray(init, dtype=float).reshape(K, 2)
    mu = init.copy()
    base = WtaConfig(wta.variant, wta.epsilon, 1, LossKind.ED, wta.density)
    base.validate(K)
    if wta.variant is Variant.EWTA:
        bounds = stage_boundaries(cfg.steps, K)[1:] + [cfg.steps]
        labels = [f"top{k}" for k in ewta_stages(K)]
    else:
        bounds, labels = [cfg.steps], [wta.variant.value]
    snaps = []
    nxt = 0
    for t in range(cfg.steps):
        y = np.asarray(gt_sampler(rng), dtype=float).reshape(1, 2)
        c = schedule_top_k(base, t, cfg.steps, K)
        _, g, _ = wta_batch(mu[None], None, y, c)
        mu -= cfg.lr * g[0]
        while nxt < len(bounds) and t + 1 == bounds[nxt]:
            snaps.append((labels[nxt], mu.copy()))
            nxt += 1
    return SimResult(init, mu, snaps)


# -- ground-truth samplers for the simulations (unit square, y down) -----------------

THREE_POINTS = np.array([[0.2, 0.3], [0.8, 0.2], [0.55, 0.85]])
CLUSTER_BOXES = np.array([[0.0, 0.0, 0.3, 0.3], [0.7, 0.7, 1.0, 1.0]])  # upper left, bottom right


def three_point_sampler(rng: np.random.Generator) -> np.ndarray:
    return THREE_POINTS[rng.integers(len(THREE_POINTS))]


def two_cluster_sampler(rng: np.random.Generator) -> np.ndarray:
    x0, y0, x1, y1 = CLUSTER_BOXES[rng.integers(2)]
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])


def uniform_sampler(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=2)


GT_SAMPLERS = {"three": three_point_sampler, "two-cluster": two_cluster_sampler, "uniform": uniform_sampler}


def cluster_counts(points, boxes=CLUSTER_BOXES) -> np.ndarray:
    """Hypotheses per box, each assigned to the box with the nearest center."""
    centers = 0.5 * (boxes[:, :2] + boxes[:, 2:])
    d = np.linalg.norm(np.asarray(points)[:, None] - centers[None], axis=-1)
    return np.bincount(np.argmin(d, axis=1), minlength=len(boxes))
