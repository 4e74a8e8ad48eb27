"""Stage two: mixture density fitting from hypotheses.

The fitting head maps the concatenated hypotheses to K x M logits; a row-wise
softmax gives soft assignments and closed-form weighted moments give the
mixture.  Gradients flow analytically through the moments, the softmax and
the head back into the hypotheses, which is what end-to-end finetuning uses.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .core import PDF_FLOOR, HypothesisSet, Kind, MixtureDistribution
from .errors import ConfigError
from .nn import Mlp
from .sampler import HypothesisNet, TrainConfig, Trainer

log = logging.getLogger(__name__)

DEGENERATE_MASS = 1e-12
MIN_SCALE = 1e-3
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SoftAssignment:
    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or np.any(g < 0) or np.max(np.abs(g.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("soft assignment rows must be probability vectors")
        object.__setattr__(self, "gamma", g)


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def soft_assign(logits) -> SoftAssignment:
    return SoftAssignment(softmax(np.asarray(logits, dtype=float), axis=-1))


# -- closed-form fit -----------------------------------------------------------

def fit_moments(mu, s2, gamma):
    """Batched weights/means/variances.

    ``mu`` (B,K,2), ``s2`` (B,K,2) hypothesis variances or None, ``gamma``
    (B,K,M).  Returns ``pi (B,M)``, ``mean (B,M,2)``, ``var (B,M,2)``,
    ``degenerate (B,M)``.
    """
    K = mu.shape[1]
    G = gamma.sum(axis=1)                                   # (B,M)
    degenerate = G < DEGENERATE_MASS
    Gs = np.where(degenerate, 1.0, G)
    mean = np.einsum("bkm,bkd->bmd", gamma, mu) / Gs[..., None]
    diff = mu[:, :, None, :] - mean[:, None, :, :]          # (B,K,M,2)
    within = diff * diff if s2 is None else diff * diff + s2[:, :, None, :]
    var = np.einsum("bkm,bkmd->bmd", gamma, within) / Gs[..., None]
    pi = G / K
    if degenerate.any():
        pi = np.where(degenerate, 0.0, pi)
        pi = pi / pi.sum(axis=1, keepdims=True)
        gmean = mu.mean(axis=1)
        mean = np.where(degenerate[..., None], gmean[:, None, :], mean)
        var = np.where(degenerate[..., None], MIN_SCALE ** 2, var)
    return pi, mean, var, degenerate


def fit_moments_backward(mu, s2, gamma, mean, var, degenerate, g_pi, g_mean, g_var):
    """Pull gradients w.r.t. (pi, mean, var) back to (gamma, mu, s2)."""
    K = mu.shape[1]
    G = gamma.sum(axis=1)
    inv = np.where(degenerate, 0.0, 1.0 / np.where(degenerate, 1.0, G))   # (B,M)
    g_mean = g_mean * inv[..., None]
    g_var = g_var * inv[..., None]
    diff = mu[:, :, None, :] - mean[:, None, :, :]                        # (B,K,M,2)
    sk = 0.0 if s2 is None else s2[:, :, None, :]
    dvar_dg = diff * diff + sk - var[:, None, :, :]
    g_gamma = (g_pi[:, None, :] * np.where(degenerate, 0.0, 1.0)[:, None, :] / K
               + np.einsum("bmd,bkmd->bkm", g_mean, diff)
               + np.einsum("bmd,bkmd->bkm", g_var, dvar_dg))
    g_mu = (np.einsum("bkm,bmd->bkd", gamma, g_mean)
            + 2.0 * np.einsum("bkm,bmd,bkmd->bkd", gamma, g_var, diff))
    g_s2 = None if s2 is None else np.einsum("bkm,bmd->bkd", gamma, g_var)
    return g_gamma, g_mu, g_s2


def var_to_scale(var, kind=Kind.GAUSSIAN):
    """sigma = sqrt(var) for Gaussians, b = sqrt(var / 2) for Laplace."""
    return np.sqrt(var) if Kind(kind) is Kind.GAUSSIAN else np.sqrt(var / 2.0)


def fit_mixture(hs: HypothesisSet, g: SoftAssignment, kind=Kind.GAUSSIAN, min_var=0.0) -> MixtureDistribution:
    gamma = g.gamma if isinstance(g, SoftAssignment) else np.asarray(g, dtype=float)
    if gamma.shape[0] != hs.K:
        raise ValueError("soft assignment rows must match the number of hypotheses")
    s2 = None if not hs.has_scale else hs.scale[None] ** 2
    pi, mean, var, _ = fit_moments(hs.mu[None], s2, gamma[None])
    scale = var_to_scale(var[0] + min_var, kind)
    # zero spread (coincident point hypotheses) falls back to the minimal scale
    return MixtureDistribution(pi[0], mean[0], np.where(scale > 0, scale, MIN_SCALE), kind)


# -- mixture NLL with gradients -------------------------------------------------

def mixture_nll_batch(pi, mean, var, y, kind=Kind.GAUSSIAN, grad=True):
    """-log(p(y) + floor) per sample, with gradients w.r.t. pi, mean, var."""
    d = y[:, None, :] - mean                               # (B,M,2)
    if Kind(kind) is Kind.GAUSSIAN:
        logphi = np.sum(-0.5 * d * d / var - 0.5 * np.log(var) - 0.5 * _LOG_2PI, axis=-1)
    else:
        b = np.sqrt(var / 2.0)
        logphi = np.sum(-np.abs(d) / b - np.log(2.0 * b), axis=-1)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    logp = logsumexp(logpi + logphi, axis=1)                 # (B,)
    p = np.exp(logp)
    loss = -np.log(p + PDF_FLOOR)
    if not grad:
        return loss
    c = expit(logp - np.log(PDF_FLOOR))                     # p / (p + floor)
    r = np.exp(logpi + logphi - logp[:, None]) * c[:, None]  # damped responsibilities
    g_pi = -np.exp(logphi - logp[:, None]) * c[:, None]
    if Kind(kind) is Kind.GAUSSIAN:
        g_mean = -r[..., None] * d / var
        g_var = -r[..., None] * (0.5 * d * d / (var * var) - 0.5 / var)
    else:
        g_mean = -r[..., None] * np.sign(d) / b
        g_var = -r[..., None] * (np.abs(d) / (b * b) - 1.0 / b) / (4.0 * b)
    return loss, g_pi, g_mean, g_var


# -- fitting head ----------------------------------------------------------------

class FittingHead:
    """Two dense layers: concatenated hypotheses -> K*M logits."""

    def __init__(self, K: int, M: int, rng: np.random.Generator, with_scale=True, hidden=128,
                 in_scale=1.0, in_offset=(0.0, 0.0), kind=Kind.GAUSSIAN, min_var=1.0):
        self.K, self.M, self.with_scale = K, M, with_scale
        self.in_scale = float(in_scale)
        self.in_offset = np.asarray(in_offset, dtype=float).reshape(2)
        self.kind = Kind(kind)
        self.min_var = float(min_var)
        in_dim = K * (4 if with_scale else 2)
        self.mlp = Mlp([in_dim, hidden, K * M], rng)

    @property
    def params(self):
        return self.mlp.params

    def _inputs(self, mu, scale):
        B = mu.shape[0]
        parts = [((mu - self.in_offset) / self.in_scale).reshape(B, -1)]
        if self.with_scale:
            parts.append((scale / self.in_scale).reshape(B, -1))
        return np.concatenate(parts, axis=1)

    def forward_batch(self, mu, scale):
        if self.with_scale and scale is None:
            raise ConfigError("this fitting head expects hypotheses with scales")
        z, acts = self.mlp.forward(self._inputs(mu, scale))
        z = z.reshape(-1, self.K, self.M)
        gamma = softmax(z, axis=-1)
        s2 = scale * scale if self.with_scale else None
        pi, mean, var, degen = fit_moments(mu, s2, gamma)
        return (pi, mean, var + self.min_var), (acts, mu, s2, gamma, mean, var, degen)

    def mixtures(self, mu, scale):
        (pi, mean, var), _ = self.forward_batch(mu, scale)
        sc = var_to_scale(var, self.kind)
        return [MixtureDistribution(p, m, s, self.kind) for p, m, s in zip(pi, mean, sc)]

    def __call__(self, hs: HypothesisSet) -> MixtureDistribution:
        return self.mixtures(hs.mu[None], None if not hs.has_scale else hs.scale[None])[0]

    def loss_and_grads(self, mu, scale, y, want_input_grad=False):
        (pi, mean, var_eff), (acts, mu_, s2, gamma, mean_, var, degen) = self.forward_batch(mu, scale)
        loss, g_pi, g_mean, g_var = mixture_nll_batch(pi, mean, var_eff, y, self.kind)
        B = len(y)
        g_pi, g_mean, g_var = g_pi / B, g_mean / B, g_var / B
        g_gamma, g_mu, g_s2 = fit_moments_backward(mu, s2, gamma, mean, var, degen, g_pi, g_mean, g_var)
        g_z = gamma * (g_gamma - np.sum(gamma * g_gamma, axis=-1, keepdims=True))
        grads, g_in = self.mlp.backward(acts, g_z.reshape(B, -1))
        if not want_input_grad:
            return float(loss.mean()), grads, None, None
        K2 = 2 * self.K
        g_mu = g_mu + g_in[:, :K2].reshape(B, self.K, 2) / self.in_scale
        g_scale = None
        if self.with_scale:
            g_scale = 2.0 * scale * g_s2 + g_in[:, K2:].reshape(B, self.K, 2) / self.in_scale
        return float(loss.mean()), grads, g_mu, g_scale

    def state(self) -> dict:
        return {"type": "FittingHead", "K": self.K, "M": self.M, "with_scale": self.with_scale,
                "in_scale": self.in_scale, "in_offset": self.in_offset.tolist(), "kind": self.kind.value,
                "min_var": self.min_var, "mlp": self.mlp.state()}

    @classmethod
    def from_state(cls, state, params):
        obj = cls.__new__(cls)
        obj.K, obj.M, obj.with_scale = state["K"], state["M"], state["with_scale"]
        obj.in_scale = state["in_scale"]
        obj.in_offset = np.asarray(state["in_offset"], dtype=float)
        obj.kind = Kind(state["kind"])
        obj.min_var = state["min_var"]
        obj.mlp = Mlp.from_state(state["mlp"], params)
        return obj


class TwoStageModel:
    """Sampler followed by a fitting head; predicts a mixture per input."""

    def __init__(self, sampler: HypothesisNet, head: FittingHead):
        self.sampler, self.head = sampler, head

    def predict(self, X) -> list[MixtureDistribution]:
        mu, scale = self.sampler.hypotheses(X)
        return self.head.mixtures(mu, scale if self.head.with_scale else None)


def train_fitting(head: FittingHead, sampler: HypothesisNet, X, Y, cfg: TrainConfig, start_iter=0):
    """Train only the head against the mixture NLL, sampler frozen."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    tr = Trainer(head.params, len(X), cfg, stream=1, start_iter=start_iter)

    def step(idx, i):
        mu, scale = sampler.hypotheses(X[idx])
        loss, grads, _, _ = head.loss_and_grads(mu, scale if head.with_scale else None, Y[idx])
        return loss, grads

    tr.run(cfg.fit_iters, "fit", step)
    return head, tr.trace


def joint_loss_and_grads(sampler: HypothesisNet, head: FittingHead, X, Y):
    mu, scale, _, cache = sampler.forward_batch(X)
    loss, g_head, g_mu, g_scale = head.loss_and_grads(mu, scale if head.with_scale else None, Y,
                                                      want_input_grad=True)
    g_samp, _ = sampler.backward_batch(cache, g_mu, g_scale)
    return loss, g_samp + g_head


def finetune_end_to_end(sampler: HypothesisNet, head: FittingHead, X, Y, cfg: TrainConfig, start_iter=0):
    """Drop the WTA loss and train both stages jointly on the mixture NLL."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    params = sampler.params + head.params
    tr = Trainer(params, len(X), cfg, stream=2, start_iter=start_iter)

    def step(idx, i):
        if sampler.with_scale:
            sampler.sigma_bound = cfg.sigma_bound(tr.it)
        return joint_loss_and_grads(sampler, head, X[idx], Y[idx])

    tr.run(cfg.finetune_iters, "finetune", step)
    return (sampler, head), tr.trace


# -- EM reference fitter -----------------------------------------------------------

def _kmeanspp(points, M, rng):
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, M):
        probs = d2 / d2.sum() if d2.sum() > 0 else None
        c = points[rng.choice(n, p=probs)]
        centers.append(c)
        d2 = np.minimum(d2, np.sum((points - c) ** 2, axis=1))
    return np.array(centers)


def em_fit(points, M: int, rng: np.random.Generator, max_iter=200, tol=1e-8, var_floor=1e-6,
           return_history=False):
    """EM for an axis-factorized Gaussian mixture with k-means++ seeding."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(np.unique(P, axis=0)) < M:
        raise ValueError(f"need at least {M} distinct points for {M} components")
    mean = _kmeanspp(P, M, rng)
    var = np.tile(np.maximum(P.var(axis=0), var_floor), (M, 1))
    pi = np.full(M, 1.0 / M)
    history = []
    prev = None
    for _ in range(max_iter):
        d = P[:, None, :] - mean[None]
        lj = np.log(pi) + np.sum(-0.5 * d * d / var - 0.5 * np.log(var) - 0.5 * _LOG_2PI, axis=-1)
        lse = logsumexp(lj, axis=1)
        ll = float(lse.sum())
        history.append(ll)
        if prev is not None and abs(ll - prev) <= tol * abs(prev):
            break
        prev = ll
        r = np.exp(lj - lse[:, None])
        Nk = r.sum(axis=0)
        pi = Nk / len(P)
        mean = (r.T @ P) / Nk[:, None]
        d = P[:, None, :] - mean[None]
        var = np.maximum(np.einsum("nm,nmd->md", r, d * d) / Nk[:, None], var_floor)
    m = MixtureDistribution(pi / pi.sum(), mean, np.sqrt(var), Kind.GAUSSIAN)
    return (m, history) if return_history else m
