"""Single-stage mixture density network with a staged training schedule.

The network is a ``HypothesisNet`` with M means, M bounded scales and an
appended block of M weight logits.  The logit block is zero-initialized and
sits after the mean block, so phase 1 (means trained as EWTA hypotheses)
follows exactly the same path as a point-hypothesis sampler with K = M.
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .core import Kind, MixtureDistribution
from .errors import ConfigError
from .losses import LossKind, Variant, WtaConfig
from .mdf import mixture_nll_batch, softmax
from .sampler import HypothesisNet, TrainConfig, Trainer, train_sampler

log = logging.getLogger(__name__)


class MdnModel(HypothesisNet):
    def __init__(self, in_dim: int, M: int, rng: np.random.Generator, hidden=(64, 64), out_scale=1.0,
                 out_offset=(0.0, 0.0), sigma_bound: float = 5.0, kind=Kind.GAUSSIAN, input_transform=None):
        if sigma_bound is None:
            raise ConfigError("the MDN always bounds its scales")
        super().__init__(in_dim, M, rng, with_scale=True, hidden=hidden, out_scale=out_scale,
                         out_offset=out_offset, extra_outputs=M, sigma_bound=sigma_bound,
                         input_transform=input_transform)
        self.kind = Kind(kind)

    @property
    def M(self) -> int:
        return self.K

    def mixture_params(self, X):
        mu, scale, logits, cache = self.forward_batch(X)
        return softmax(logits, axis=-1), mu, scale, cache

    def mixtures(self, X) -> list[MixtureDistribution]:
        pi, mu, scale, _ = self.mixture_params(X)
        return [MixtureDistribution(p, m, s, self.kind) for p, m, s in zip(pi, mu, scale)]

    def loss_and_grads(self, X, Y):
        """Mean full-mixture NLL and parameter gradients."""
        pi, mu, scale, cache = self.mixture_params(X)
        var = scale * scale if self.kind is Kind.GAUSSIAN else 2.0 * scale * scale
        loss, g_pi, g_mean, g_var = mixture_nll_batch(pi, mu, var, Y, self.kind)
        B = len(Y)
        g_pi, g_mean, g_var = g_pi / B, g_mean / B, g_var / B
        dvar = 2.0 * scale if self.kind is Kind.GAUSSIAN else 4.0 * scale
        g_logits = pi * (g_pi - np.sum(pi * g_pi, axis=-1, keepdims=True))
        grads, _ = self.backward_batch(cache, g_mean, g_var * dvar, g_logits)
        return float(loss.mean()), grads

    def state(self) -> dict:
        s = super().state()
        s.update(type="MdnModel", kind=self.kind.value)
        return s

    @classmethod
    def from_state(cls, state, params):
        obj = super().from_state(state, params)
        obj.kind = Kind(state.get("kind", "gaussian"))
        return obj


def mdn_forward(model: MdnModel, x) -> MixtureDistribution:
    return model.mixtures(np.asarray(x, dtype=float).reshape(1, -1))[0]


def mdn_sigma_schedule(cfg: TrainConfig, low=5.0, high=30.0) -> list:
    """Bound ``low`` through phases 1-2, then raised linearly to ``high`` over phase 3."""
    p3 = cfg.ed_iters + cfg.nll_iters
    return [(0, low), (p3, low), (p3 + max(cfg.mdn_full_iters, 1), high)]


def train_mdn(model: MdnModel, X, Y, cfg: TrainConfig, wta: Optional[WtaConfig] = None):
    """(1) EWTA + ED on the means, (2) EWTA + NLL, (3) full mixture NLL.

    The weight logits receive no gradient in phases 1-2 and stay zero, so the
    mixture is uniform until phase 3.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ConfigError("empty dataset")
    wta = wta or WtaConfig(Variant.EWTA, loss_kind=LossKind.ED, density=model.kind)
    tr = Trainer(model.params, len(X), cfg)
    train_sampler(model, X, Y, cfg, wta, trainer=tr, nll_phase=True)

    def step(idx, i):
        model.sigma_bound = cfg.sigma_bound(tr.it)
        return model.loss_and_grads(X[idx], Y[idx])

    if cfg.mdn_full_iters:
        tr.run(cfg.mdn_full_iters, "mixture", step)
    model.sigma_bound = cfg.sigma_bound(tr.it)
    return model, tr.trace
