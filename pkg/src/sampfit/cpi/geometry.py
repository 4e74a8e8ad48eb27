"""Crossroad geometry: a plus-shaped road on a 256 x 256 pixel world.

Every region is a union of disjoint half-open integer rectangles
``(x0, y0, x1, y1)``.  Image convention: x grows right, y grows down.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD = 256
ROAD_LO, ROAD_HI = 88, 168
ZEBRA = 32
PED_BOX = 20
CAR_BOX = 40
STEP = 10.0


def _rects(*r):
    return np.array(r, dtype=np.int64).reshape(-1, 4)


@dataclass(frozen=True)
class Regions:
    pavement: np.ndarray   # R_P
    vehicle: np.ndarray    # R_V
    shared: np.ndarray     # R_S
    crossing: np.ndarray   # R_X
    corners: np.ndarray    # inner pavement corners next to the crossing

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("pavement", "vehicle", "shared", "crossing", "corners")}


def default_regions() -> Regions:
    lo, hi, W, z = ROAD_LO, ROAD_HI, WORLD, ZEBRA
    pavement = _rects((0, 0, lo, lo), (hi, 0, W, lo), (0, hi, lo, W), (hi, hi, W, W))
    vehicle = _rects((lo, 0, hi, W), (0, lo, lo, hi), (hi, lo, W, hi))
    shared = _rects((lo, lo - z, hi, lo), (lo, hi, hi, hi + z), (lo - z, lo, lo, hi), (hi, lo, hi + z, hi))
    crossing = _rects((lo, lo, hi, hi))
    corners = np.array([(lo, lo), (hi, lo), (lo, hi), (hi, hi)], dtype=np.float64)
    return Regions(pavement, vehicle, shared, crossing, corners)


REGIONS = default_regions()


def directions(n: int) -> np.ndarray:
    """v(g) = 10 (sin g, cos g) for g = 0, 360/n, ..."""
    g = np.deg2rad(np.arange(n) * 360.0 / n)
    d = STEP * np.stack([np.sin(g), np.cos(g)], axis=1)
    return np.where(np.abs(d) < 1e-12, 0.0, d)


PED_DIRS = directions(8)
CAR_DIRS = directions(4)


def box_origin(center, size: int) -> np.ndarray:
    """Integer top-left pixel of a size x size box around a continuous center."""
    return np.floor(np.asarray(center, dtype=float) - size / 2.0 + 0.5).astype(np.int64)


def overlap(center, size: int, rects: np.ndarray) -> int:
    """ov: number of box pixels inside the rectangle union."""
    o = box_origin(center, size)
    w = np.minimum(o[0] + size, rects[:, 2]) - np.maximum(o[0], rects[:, 0])
    h = np.minimum(o[1] + size, rects[:, 3]) - np.maximum(o[1], rects[:, 1])
    return int(np.sum(np.where((w > 0) & (h > 0), w * h, 0)))


def inter(center, size, rects) -> bool:
    return overlap(center, size, rects) > 0


def within(center, size, rects) -> bool:
    """Box fully contained in the region."""
    return overlap(center, size, rects) == size * size


def dtc(x, corners=None) -> float:
    c = REGIONS.corners if corners is None else corners
    return float(np.min(np.linalg.norm(c - np.asarray(x, dtype=float), axis=1)))


def angle_diff(a1, a2) -> float:
    """ad in degrees, in [0, 180]."""
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    n = np.linalg.norm(a1) * np.linalg.norm(a2)
    if n == 0:
        return 0.0
    return float(np.degrees(np.arccos(np.clip(np.dot(a1, a2) / n, -1.0, 1.0))))


def in_world(center, size) -> bool:
    o = box_origin(center, size)
    return bool(np.all(o >= 0) and np.all(o + size <= WORLD))
