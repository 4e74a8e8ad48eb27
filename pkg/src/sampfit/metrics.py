"""Distribution metrics: oracle error, sample NLL, exact EMD, WEMD and SEMD."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ._transport import OPTIMAL, transport_simplex
from .core import PDF_FLOOR, GridDensity, HypothesisSet, MixtureDistribution, mixture_logpdf, mixture_nll, \
    rasterize_mixture
from .errors import NumericalError

MAX_ARCS = 4_000_000


@dataclass(frozen=True)
class TransportPlan:
    """Optimal plan between two supports: ``(source, target, mass)`` triples and cost."""

    source: np.ndarray
    target: np.ndarray
    mass: np.ndarray
    cost: float
    iterations: int = 0

    def marginals(self, n_src: int, n_tgt: int):
        a = np.bincount(self.source, weights=self.mass, minlength=n_src)
        b = np.bincount(self.target, weights=self.mass, minlength=n_tgt)
        return a, b


def _tol(xa, xb):
    span = max(np.ptp(xa, axis=0).max(initial=0.0), np.ptp(xb, axis=0).max(initial=0.0), 1.0)
    return 1e-11 * span


def emd_points(xa, wa, xb, wb, return_plan: bool = False):
    """Exact EMD between two weighted point sets (weights rescaled to equal totals)."""
    xa = np.ascontiguousarray(xa, dtype=np.float64).reshape(-1, 2)
    xb = np.ascontiguousarray(xb, dtype=np.float64).reshape(-1, 2)
    wa = np.asarray(wa, dtype=np.float64).reshape(-1)
    wb = np.asarray(wb, dtype=np.float64).reshape(-1)
    ka, kb = wa > 0, wb > 0
    ia, ib = np.flatnonzero(ka), np.flatnonzero(kb)
    a, b = wa[ka], wb[kb]
    if a.size == 0 or b.size == 0:
        raise ValueError("both point sets need positive mass")
    a = a / a.sum()
    b = b / b.sum()
    n, m = a.size, b.size
    cost, bi, bj, bf, it, status = transport_simplex(a, b, xa[ka], xb[kb], 50 * (n + m) * (n + m) + 1000,
                                                     _tol(xa[ka], xb[kb]))
    if status != OPTIMAL:
        raise NumericalError(f"transport simplex hit its iteration limit ({it} pivots)")
    if not return_plan:
        return float(cost)
    keep = bf > 0
    return float(cost), TransportPlan(ia[bi[keep]], ib[bj[keep]], bf[keep], float(cost), int(it))


def emd_exact(p: GridDensity, q: GridDensity, return_plan: bool = False, max_arcs: int = MAX_ARCS):
    """Optimal transport cost between two normalized grids, Euclidean ground distance in pixels.

    Only bins with positive mass enter the problem, so the work scales with
    the product of the two support sizes; ``max_arcs`` caps that product.
    Bin indices in the plan are flat row-major indices.
    """
    if not p.same_shape(q):
        raise ValueError("EMD needs grids of identical geometry")
    for g in (p, q):
        if not g.is_normalized(1e-6):
            raise ValueError("EMD inputs must be normalized")
    pa, qa = p.mass.ravel(), q.mass.ravel()
    arcs = int(np.count_nonzero(pa)) * int(np.count_nonzero(qa))
    if arcs > max_arcs:
        raise ValueError(f"supports of {np.count_nonzero(pa)} x {np.count_nonzero(qa)} bins exceed the exact-EMD "
                         f"limit of {max_arcs} arcs; sparsify the grids or use wemd()")
    c = p.centers()
    return emd_points(c, pa, c, qa, return_plan)


def _pad_pow2(a):
    h, w = a.shape
    n = 1 << max(0, math.ceil(math.log2(max(h, w))))
    out = np.zeros((n, n))
    out[:h, :w] = a
    return out


def haar2d(a):
    """Orthonormal 2-D Haar pyramid: list of (level j, details) finest first, then the coarsest average."""
    cur = _pad_pow2(np.asarray(a, dtype=float))
    levels = []
    j = 0
    while cur.shape[0] > 1:
        tl, tr = cur[0::2, 0::2], cur[0::2, 1::2]
        bl, br = cur[1::2, 0::2], cur[1::2, 1::2]
        avg = 0.5 * (tl + tr + bl + br)
        dh = 0.5 * (tl - tr + bl - br)
        dv = 0.5 * (tl + tr - bl - br)
        dd = 0.5 * (tl - tr - bl + br)
        levels.append((j, np.stack([dh, dv, dd])))
        cur = avg
        j -= 1
    return levels, (j, cur)


def wemd(p: GridDensity, q: GridDensity, n_dim: int = 2) -> float:
    """Wavelet EMD: sum of |Haar coefficients of p - q| weighted by 2^(-j(1 + n/2)).

    ``j = 0`` is the finest level and coarser levels have negative ``j``, so
    the weight grows with the spatial scale a coefficient moves mass over.
    The result is scaled by the bin size, giving pixel-mass units.
    """
    if p.mass.shape != q.mass.shape:
        raise ValueError("WEMD needs grids of identical shape")
    levels, (jc, coarse) = haar2d(p.mass - q.mass)
    e = 1.0 + n_dim / 2.0
    total = sum(2.0 ** (-j * e) * np.abs(d).sum() for j, d in levels)
    total += 2.0 ** (-(jc + 1) * e) * float(np.abs(coarse).sum())
    return float(total * p.cell[0])


def oracle_error(pred: Union[HypothesisSet, MixtureDistribution], y_hat) -> float:
    """Distance from the ground truth to the closest hypothesis / component mean."""
    mu = np.asarray(pred.mu, dtype=float).reshape(-1, 2)
    return float(np.min(np.linalg.norm(mu - np.asarray(y_hat, dtype=float).reshape(1, 2), axis=1)))


def grid_nll(g: GridDensity, samples) -> np.ndarray:
    """-log(bin mass / bin area + floor) of each sample's bin."""
    rr, cc, _ = g.bin_index(samples)
    return -np.log(g.mass[rr, cc] / g.bin_area + PDF_FLOOR)


def nll_metric(density: Union[MixtureDistribution, GridDensity], samples) -> float:
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(s) == 0:
        raise ValueError("need at least one sample")
    if isinstance(density, GridDensity):
        return float(np.mean(grid_nll(density, s)))
    return float(np.mean(mixture_nll(density, s)))


def primary_mode(m: MixtureDistribution) -> int:
    """Component whose mean carries the highest mixture density."""
    lp = np.atleast_1d(mixture_logpdf(m, m.mu))
    return int(np.argmax(lp))


def semd(m: MixtureDistribution, rasterized: bool = False, grid=(64, 64)) -> float:
    """Cost of moving every secondary component onto the primary mode.

    Point-mass form by default; ``rasterized=True`` instead compares the
    rasterized mixture with its rasterized primary component via WEMD.
    """
    k = primary_mode(m)
    if not rasterized:
        d = np.linalg.norm(m.mu - m.mu[k], axis=1)
        return float(np.sum(np.delete(m.weights * d, k)))
    uni = MixtureDistribution([1.0], m.mu[k:k + 1], m.scale[k:k + 1], m.kind)
    return wemd(rasterize_mixture(m, *grid), rasterize_mixture(uni, *grid))
