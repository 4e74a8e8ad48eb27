"""Shared value types and mixture/grid primitives.

All coordinates are continuous pixel positions in the plane; the CPI world
spans ``[0, WORLD_SIZE)`` on both axes.  Densities factorize over the x and
y axes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

WORLD_SIZE = 256.0
PDF_FLOOR = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


class Kind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ComponentParams:
    mu: np.ndarray
    scale: np.ndarray
    kind: Kind = Kind.GAUSSIAN

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(self.mu).reshape(2))
        object.__setattr__(self, "scale", _frozen(self.scale).reshape(2))
        object.__setattr__(self, "kind", Kind(self.kind))
        if not np.all(self.scale > 0):
            raise ValueError(f"component scales must be positive, got {self.scale}")


@dataclass(frozen=True)
class MixtureDistribution:
    """Weighted mixture of axis-factorized Gaussian or Laplace components.

    ``scale`` holds sigma per axis for Gaussians and b per axis for Laplace.
    """

    weights: np.ndarray
    mu: np.ndarray
    scale: np.ndarray
    kind: Kind = Kind.GAUSSIAN

    def __post_init__(self):
        w = _frozen(self.weights).reshape(-1)
        mu = _frozen(self.mu).reshape(-1, 2)
        scale = _frozen(self.scale).reshape(-1, 2)
        if not (len(w) == len(mu) == len(scale)) or len(w) == 0:
            raise ValueError("weights, mu and scale must have matching non-zero length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {w}")
        if not np.all(scale > 0):
            raise ValueError("mixture scales must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "kind", Kind(self.kind))

    @classmethod
    def from_components(cls, components: Sequence[ComponentParams], weights):
        kinds = {c.kind for c in components}
        if len(kinds) != 1:
            raise ValueError("all components must share one kind")
        return cls(
            weights=np.asarray(weights, dtype=float),
            mu=np.stack([c.mu for c in components]),
            scale=np.stack([c.scale for c in components]),
            kind=kinds.pop(),
        )

    @property
    def M(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[ComponentParams]:
        return [ComponentParams(m, s, self.kind) for m, s in zip(self.mu, self.scale)]

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "M": self.M,
            "pi": self.weights.tolist(),
            "mu": self.mu.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MixtureDistribution":
        return cls(np.asarray(rec["pi"]), np.asarray(rec["mu"]), np.asarray(rec["scale"]), Kind(rec["kind"]))


@dataclass(frozen=True)
class HypothesisSet:
    """K hypotheses; ``scale`` is None for point hypotheses."""

    mu: np.ndarray
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        mu = _frozen(self.mu).reshape(-1, 2)
        if len(mu) < 1:
            raise ValueError("a hypothesis set needs K >= 1")
        object.__setattr__(self, "mu", mu)
        if self.scale is not None:
            scale = _frozen(self.scale).reshape(-1, 2)
            if scale.shape != mu.shape or not np.all(scale > 0):
                raise ValueError("hypothesis scales must match mu and be positive")
            object.__setattr__(self, "scale", scale)

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def has_scale(self) -> bool:
        return self.scale is not None


@dataclass
class GridDensity:
    """Row-major histogram; row index is y, column index is x.

    Bin ``(r, c)`` covers ``[x0 + c*dx, x0 + (c+1)*dx) x [y0 + r*dy, ...)``.
    """

    mass: np.ndarray
    cell: tuple = (1.0, 1.0)
    origin: tuple = (0.0, 0.0)
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if self.mass.ndim != 2:
            raise ValueError("grid mass must be 2-D (height, width)")
        if np.any(self.mass < 0):
            raise ValueError("grid mass must be non-negative")
        self.cell = (float(self.cell[0]), float(self.cell[1]))
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return self.mass.shape[0]

    @property
    def width(self) -> int:
        return self.mass.shape[1]

    @property
    def bin_area(self) -> float:
        return self.cell[0] * self.cell[1]

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def is_normalized(self, tol=1e-9) -> bool:
        return abs(self.total - 1.0) <= tol

    def normalized(self) -> "GridDensity":
        t = self.total
        if t <= 0:
            raise ValueError("cannot normalize an empty grid")
        return GridDensity(self.mass / t, self.cell, self.origin, self.clamped)

    def coarsen(self, f: int) -> "GridDensity":
        """Sum f x f blocks of bins; both dimensions must be divisible by f."""
        h, w = self.mass.shape
        if f < 1 or h % f or w % f:
            raise ValueError(f"grid {w}x{h} cannot be pooled by {f}")
        m = self.mass.reshape(h // f, f, w // f, f).sum(axis=(1, 3))
        return GridDensity(m, (self.cell[0] * f, self.cell[1] * f), self.origin, self.clamped)

    def centers(self) -> np.ndarray:
        """(height*width, 2) array of bin-center xy coordinates, row-major."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell[0]
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell[1]
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def bin_index(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest-bin (row, col) for xy points, clamped; third value flags clamping."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        c = np.floor((p[:, 0] - self.origin[0]) / self.cell[0]).astype(np.int64)
        r = np.floor((p[:, 1] - self.origin[1]) / self.cell[1]).astype(np.int64)
        cc = np.clip(c, 0, self.width - 1)
        rr = np.clip(r, 0, self.height - 1)
        return rr, cc, (cc != c) | (rr != r)

    def same_shape(self, other: "GridDensity") -> bool:
        return self.mass.shape == other.mass.shape and np.allclose(self.cell, other.cell) \
            and np.allclose(self.origin, other.origin)


@dataclass(frozen=True)
class ConditionedSample:
    x: np.ndarray
    y_hat: np.ndarray


def world_grid(w: int, h: int, extent: float = WORLD_SIZE) -> dict:
    return {"cell": (extent / w, extent / h), "origin": (0.0, 0.0)}


# -- densities ---------------------------------------------------------------

def component_logpdf(y, mu, scale, kind=Kind.GAUSSIAN):
    """log phi(y | mu, scale) summed over the two axes.

    Broadcasts: ``y`` (..., 2) against ``mu``/``scale`` (..., 2).
    """
    y = np.asarray(y, dtype=float)
    d = y - mu
    if Kind(kind) is Kind.GAUSSIAN:
        z = d / scale
        return np.sum(-0.5 * z * z - np.log(scale) - 0.5 * _LOG_2PI, axis=-1)
    return np.sum(-np.abs(d) / scale - np.log(2.0 * scale), axis=-1)


def mixture_logpdf(m: MixtureDistribution, y) -> np.ndarray:
    """log p(y) for y of shape (2,) or (n, 2)."""
    y = np.asarray(y, dtype=float)
    yy = y.reshape(-1, 1, 2)
    with np.errstate(divide="ignore"):
        logw = np.log(m.weights)
    lp = logsumexp(logw + component_logpdf(yy, m.mu, m.scale, m.kind), axis=-1)
    return lp[0] if y.ndim == 1 else lp


def mixture_pdf(m: MixtureDistribution, y):
    return np.exp(mixture_logpdf(m, y))


def mixture_nll(m: MixtureDistribution, y):
    """-log(p(y) + 1e-12); finite for every finite y."""
    return -np.log(mixture_pdf(m, y) + PDF_FLOOR)


def sample_mixture(m: MixtureDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    comp = rng.choice(m.M, size=n, p=m.weights)
    mu, scale = m.mu[comp], m.scale[comp]
    if m.kind is Kind.GAUSSIAN:
        return mu + scale * rng.standard_normal((n, 2))
    return mu + rng.laplace(0.0, 1.0, size=(n, 2)) * scale


# -- rasterization -----------------------------------------------------------

def rasterize_mixture(m: MixtureDistribution, w: int, h: int, cell=None, origin=(0.0, 0.0)) -> GridDensity:
    """Bin mass = pdf at the bin center times bin area, renormalized to 1.

    Defaults to a grid spanning the whole world.  Evaluated in log space so a
    narrow component never produces an all-zero grid.
    """
    if w < 1 or h < 1:
        raise ValueError("grid needs w, h >= 1")
    if cell is None:
        cell = (WORLD_SIZE / w, WORLD_SIZE / h)
    g = GridDensity(np.zeros((h, w)), cell, origin)
    lp = mixture_logpdf(m, g.centers())
    lp = lp - lp.max()
    mass = np.exp(lp).reshape(h, w)
    g.mass = mass / mass.sum()
    return g


def points_to_grid(points, w: int, h: int, weights=None, cell=None, origin=(0.0, 0.0)) -> GridDensity:
    """Nearest-bin histogram of weighted points (uniform weights by default)."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    if cell is None:
        cell = (WORLD_SIZE / w, WORLD_SIZE / h)
    wts = np.full(len(p), 1.0 / len(p)) if weights is None else np.asarray(weights, dtype=float)
    g = GridDensity(np.zeros((h, w)), cell, origin)
    rr, cc, clamped = g.bin_index(p)
    np.add.at(g.mass, (rr, cc), wts)
    g.clamped = int(clamped.sum())
    return g


def dirac_mixture(hs: HypothesisSet, w: int = 64, h: int = 64, cell=None, origin=(0.0, 0.0)) -> GridDensity:
    """Uniform mixture of Diracs: each hypothesis puts 1/K on its nearest bin.

    Out-of-extent hypotheses are clamped to the border bin; the number of
    clamped hypotheses is stored in ``GridDensity.clamped``.
    """
    return points_to_grid(hs.mu, w, h, cell=cell, origin=origin)
