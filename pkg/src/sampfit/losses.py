"""Winner-takes-all meta-losses over hypothesis sets.

Winners are always ranked by Euclidean distance between hypothesis mean and
target, whichever per-hypothesis loss is being optimized.  Everything here is
vectorized over a minibatch: means ``(B, K, 2)``, scales ``(B, K, 2)`` or
None, targets ``(B, 2)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import HypothesisSet, Kind
from .errors import ConfigError

_LOG_2PI = math.log(2.0 * math.pi)
ED_EPS = 1e-12


class Variant(str, enum.Enum):
    WTA = "wta"
    RWTA = "rwta"
    EWTA = "ewta"


class LossKind(str, enum.Enum):
    ED = "ed"
    NLL = "nll"


@dataclass(frozen=True)
class WtaConfig:
    variant: Variant = Variant.EWTA
    epsilon: float = 0.05
    top_k: int = 1
    loss_kind: LossKind = LossKind.ED
    density: Kind = Kind.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        object.__setattr__(self, "density", Kind(self.density))

    def validate(self, K: int) -> None:
        if self.variant is Variant.RWTA and not (0.0 < self.epsilon < 1.0 / K):
            raise ConfigError(f"RWTA needs 0 < epsilon < 1/K = {1.0 / K:.4g}, got {self.epsilon}")
        if self.variant is Variant.EWTA and not (1 <= self.top_k <= K):
            raise ConfigError(f"EWTA top_k must lie in [1, {K}], got {self.top_k}")

    def with_top_k(self, k: int) -> "WtaConfig":
        return WtaConfig(self.variant, self.epsilon, k, self.loss_kind, self.density)


# -- per-hypothesis losses -----------------------------------------------------

def _check_scale(scale, kind):
    if LossKind(kind) is LossKind.NLL and scale is None:
        raise ConfigError("the NLL hypothesis loss needs per-hypothesis scales")


def per_hyp_losses(mu, scale, y, kind=LossKind.ED, density=Kind.GAUSSIAN):
    """Loss of every hypothesis: ``(B, K)`` for batched inputs."""
    _check_scale(scale, kind)
    d = mu - y[..., None, :]
    if LossKind(kind) is LossKind.ED:
        return np.sqrt(np.sum(d * d, axis=-1))
    if Kind(density) is Kind.GAUSSIAN:
        z = d / scale
        return np.sum(0.5 * z * z + np.log(scale) + 0.5 * _LOG_2PI, axis=-1)
    return np.sum(np.abs(d) / scale + np.log(2.0 * scale), axis=-1)


def per_hyp_loss(h_mu, y, kind=LossKind.ED, scale=None, density=Kind.GAUSSIAN) -> float:
    """Loss of a single hypothesis against a single target."""
    mu = np.asarray(h_mu, float).reshape(1, 1, 2)
    sc = None if scale is None else np.asarray(scale, float).reshape(1, 1, 2)
    return float(per_hyp_losses(mu, sc, np.asarray(y, float).reshape(1, 2), kind, density)[0, 0])


def per_hyp_grads(mu, scale, y, kind=LossKind.ED, density=Kind.GAUSSIAN):
    """d loss / d mu and d loss / d scale per hypothesis (scale grad None for ED)."""
    _check_scale(scale, kind)
    d = mu - y[..., None, :]
    if LossKind(kind) is LossKind.ED:
        n = np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
        safe = np.where(n < ED_EPS, 1.0, n)
        g = np.where(n < ED_EPS, 0.0, d / safe)
        return g, None
    if Kind(density) is Kind.GAUSSIAN:
        s2 = scale * scale
        return d / s2, 1.0 / scale - d * d / (s2 * scale)
    return np.sign(d) / scale, 1.0 / scale - np.abs(d) / (scale * scale)


# -- winner selection --------------------------------------------------------

def winner_weights(mu, y, cfg: WtaConfig) -> np.ndarray:
    """``(B, K)`` weights from the Euclidean ranking; ties go to the lower index."""
    K = mu.shape[-2]
    cfg.validate(K)
    d = np.sum((mu - y[..., None, :]) ** 2, axis=-1)
    B = d.shape[0]
    w = np.zeros_like(d)
    rows = np.arange(B)[:, None]
    if cfg.variant is Variant.EWTA:
        order = np.argsort(d, axis=-1, kind="stable")[:, : cfg.top_k]
        w[rows, order] = 1.0
        return w
    best = np.argmin(d, axis=-1)[:, None]
    if cfg.variant is Variant.WTA:
        w[rows, best] = 1.0
    else:
        w[:] = cfg.epsilon
        w[rows, best] = 1.0 - (K - 1) * cfg.epsilon
    return w


def select_winners(hs: HypothesisSet, y, cfg: WtaConfig) -> np.ndarray:
    return winner_weights(hs.mu[None], np.asarray(y, float).reshape(1, 2), cfg)[0]


def wta_batch(mu, scale, y, cfg: WtaConfig):
    """Per-sample WTA loss ``(B,)`` with gradients w.r.t. means and scales.

    The winner mask is held constant while differentiating.
    """
    w = winner_weights(mu, y, cfg)
    losses = per_hyp_losses(mu, scale, y, cfg.loss_kind, cfg.density)
    g_mu, g_sc = per_hyp_grads(mu, scale, y, cfg.loss_kind, cfg.density)
    g_mu = g_mu * w[..., None]
    if g_sc is not None:
        g_sc = g_sc * w[..., None]
    elif scale is not None:
        g_sc = np.zeros_like(scale)
    return np.sum(w * losses, axis=-1), g_mu, g_sc


def wta_loss_and_grad(hs: HypothesisSet, y, cfg: WtaConfig):
    """Loss and gradient for one hypothesis set: ``(loss, grad_mu, grad_scale)``."""
    sc = hs.scale[None] if hs.has_scale else None
    loss, g_mu, g_sc = wta_batch(hs.mu[None], sc, np.asarray(y, float).reshape(1, 2), cfg)
    return float(loss[0]), g_mu[0], None if g_sc is None else g_sc[0]


# -- EWTA schedule -----------------------------------------------------------

def ewta_stages(K: int) -> list[int]:
    """Halving sequence K, ceil(K/2), ceil(K/4), ..., 1."""
    stages = [K]
    while stages[-1] > 1:
        stages.append(math.ceil(stages[-1] / 2))
    return stages


def ewta_schedule(step: int, total: int, K: int) -> int:
    """top-k at ``step`` with equal-length stages over ``total`` iterations."""
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    stages = ewta_stages(K)
    return stages[min(step * len(stages) // total, len(stages) - 1)]


def stage_boundaries(total: int, K: int) -> list[int]:
    """First iteration of every EWTA stage."""
    n = len(ewta_stages(K))
    return [-(-i * total // n) for i in range(n)]


def schedule_top_k(cfg: WtaConfig, step: int, total: int, K: int) -> WtaConfig:
    if cfg.variant is Variant.EWTA:
        return cfg.with_top_k(ewta_schedule(step, total, K))
    return cfg
