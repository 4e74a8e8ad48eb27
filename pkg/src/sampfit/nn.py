"""Tiny dense networks with hand-written backpropagation.

Parameters live in a flat list ``[W0, b0, W1, b1, ...]`` so optimizers and
checkpointing can treat every model uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Whitening:
    """Fixed affine input map ``(x - mean) @ proj`` (PCA whitening when fitted)."""

    def __init__(self, mean, proj):
        self.mean = np.asarray(mean, dtype=float)
        self.proj = np.asarray(proj, dtype=float)

    @classmethod
    def fit(cls, X, eps=1e-8) -> "Whitening":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        ev, V = np.linalg.eigh(np.atleast_2d(np.cov(X - mean, rowvar=False)))
        # constant directions (e.g. a fixed actor bit) are passed through unscaled
        scale = np.where(ev > eps, 1.0 / np.sqrt(np.maximum(ev, eps)), 1.0)
        return cls(mean, V * scale)

    def __call__(self, X):
        return (X - self.mean) @ self.proj

    def state(self) -> dict:
        return {"mean": self.mean.tolist(), "proj": self.proj.tolist()}

    @classmethod
    def from_state(cls, state) -> "Whitening | None":
        return None if state is None else cls(state["mean"], state["proj"])


class Mlp:
    """tanh hidden layers, linear output.

    ``head_blocks`` splits the output layer into column blocks that are
    initialized one after another; a block listed in ``zero_blocks`` starts at
    zero.  Initialization only depends on fan-in, so prepending or appending
    blocks never changes the values drawn for the others.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator,
                 head_blocks: Sequence[int] | None = None, zero_blocks: Sequence[int] = ()):
        self.sizes = list(sizes)
        if head_blocks is None:
            head_blocks = [self.sizes[-1]]
        if sum(head_blocks) != self.sizes[-1]:
            raise ValueError("head blocks must add up to the output size")
        self.head_blocks = list(head_blocks)
        self.params = []
        n_layers = len(self.sizes) - 1
        for li, (fin, fout) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            lim = np.sqrt(3.0 / fin)
            if li < n_layers - 1:
                W = rng.uniform(-lim, lim, size=(fin, fout))
            else:
                cols = []
                for bi, nb in enumerate(self.head_blocks):
                    if bi in zero_blocks:
                        cols.append(np.zeros((fin, nb)))
                    else:
                        cols.append(rng.uniform(-lim, lim, size=(fin, nb)))
                W = np.concatenate(cols, axis=1)
            self.params += [W, np.zeros(fout)]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x):
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for li in range(n_layers):
            W, b = self.params[2 * li], self.params[2 * li + 1]
            h = h @ W + b
            if li < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout):
        """Gradients for every parameter plus d/d input."""
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        d = dout
        for li in reversed(range(n_layers)):
            W = self.params[2 * li]
            if li < n_layers - 1:
                d = d * (1.0 - acts[li + 1] ** 2)
            grads[2 * li] = acts[li].T @ d
            grads[2 * li + 1] = d.sum(axis=0)
            d = d @ W.T
        return grads, d

    def state(self) -> dict:
        return {"sizes": self.sizes, "head_blocks": self.head_blocks}

    @classmethod
    def from_state(cls, state: dict, params) -> "Mlp":
        obj = cls.__new__(cls)
        obj.sizes = list(state["sizes"])
        obj.head_blocks = list(state["head_blocks"])
        obj.params = [np.array(p, dtype=np.float64) for p in params]
        return obj


@dataclass
class Sgd:
    lr: float = 1e-3

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return Sgd(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def clip_grads(grads, max_norm):
    """Global-norm clipping in place; returns the pre-clip norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm and total > max_norm:
        s = max_norm / total
        for g in grads:
            g *= s
    return total
