"""Dataset generation, feature extraction and loading.

A dataset directory holds ``manifest.ini`` plus ``.npy`` record arrays (no
timestamps, so regeneration is byte-identical) and, for the test split,
Monte-Carlo ground-truth grids in ``.grid`` files.  Every sequence draws
from its own stream ``SeedSequence([seed, split, index])``.
"""
from __future__ import annotations

import configparser
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..core import points_to_grid
from ..errors import ConfigError
from ..io import digest, read_grids, write_grids
from .geometry import REGIONS, WORLD
from .world import OC_RAW_WEIGHTS, OC_STRAIGHT, ActorState, init_world, rollout_terminals, simulate

log = logging.getLogger(__name__)

TRAIN, TEST = 0, 1
PED, CAR = 0, 1
FORMAT_VERSION = 1


@dataclass
class DatasetConfig:
    n_sequences: int = 2000
    futures_per_seq: int = 10
    dt: int = 20
    h: int = 2
    seed: int = 0
    n_test: int = 54
    n_rollouts: int = 20000
    grid: int = 64
    burn_in_max: int = 0
    mc_keep: int = 2000

    def validate(self):
        for k in ("n_sequences", "futures_per_seq", "n_test", "n_rollouts", "grid", "mc_keep"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        for k in ("dt", "h", "burn_in_max"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")


def history_positions(worlds) -> np.ndarray:
    """(len, 2, 2) positions [pedestrian, car] of a list of worlds."""
    return np.array([[w.x_p, w.x_c] for w in worlds], dtype=float)


def featurize(history, h: int, actor: int = PED) -> np.ndarray:
    """Positions of both actors over the last h+1 frames / world size, plus the actor bit."""
    pos = history_positions(history) if isinstance(history[0], ActorState) else np.asarray(history, float)
    if len(pos) < h + 1:
        raise ValueError(f"need at least {h + 1} frames, got {len(pos)}")
    return np.concatenate([pos[-(h + 1):].reshape(-1) / WORLD, [float(actor)]])


def featurize_batch(hist: np.ndarray, actor: int) -> np.ndarray:
    """``hist`` (N, h+1, 2, 2) -> (N, 4(h+1)+1)."""
    n = len(hist)
    return np.concatenate([hist.reshape(n, -1) / WORLD, np.full((n, 1), float(actor))], axis=1)


def _sequence(cfg: DatasetConfig, split: int, idx: int):
    rng = np.random.default_rng([cfg.seed, split, idx])
    w0 = init_world(rng)
    burn = int(rng.integers(0, cfg.burn_in_max + 1))
    worlds, last = simulate(w0, burn + cfg.h, rng)
    return rng, history_positions(worlds[-(cfg.h + 1):]), last


def _manifest(cfg: DatasetConfig, files: dict) -> str:
    cp = configparser.ConfigParser()
    params = asdict(cfg)
    cp["dataset"] = {k: str(v) for k, v in params.items()}
    cp["dataset"]["format_version"] = str(FORMAT_VERSION)
    cp["dataset"]["config_digest"] = digest(params)
    cp["world"] = {
        "size": str(int(WORLD)),
        "regions": json.dumps(REGIONS.as_dict(), sort_keys=True),
        "car_oc_weights_raw": json.dumps(list(OC_RAW_WEIGHTS)),
        "car_oc_weights_used": json.dumps([OC_STRAIGHT, 1.0 - OC_STRAIGHT]),
    }
    cp["files"] = files
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def generate_dataset(cfg: DatasetConfig, sink) -> Path:
    """Write train/test records and the manifest into directory ``sink``."""
    cfg.validate()
    out = Path(sink)
    out.mkdir(parents=True, exist_ok=True)
    tag = digest(asdict(cfg))
    F, H = cfg.futures_per_seq, cfg.h + 1
    hist = np.empty((cfg.n_sequences, H, 2, 2))
    fut = np.empty((cfg.n_sequences, F, 2, 2))
    for s in range(cfg.n_sequences):
        rng, hist[s], last = _sequence(cfg, TRAIN, s)
        fut[s] = rollout_terminals(last, cfg.dt, F, rng)
    np.save(out / "train_hist.npy", hist)
    np.save(out / "train_future.npy", fut)

    thist = np.empty((cfg.n_test, H, 2, 2))
    tfut = np.empty((cfg.n_test, 2, 2))
    keep = min(cfg.mc_keep, cfg.n_rollouts)
    mc = np.empty((cfg.n_test, keep, 2, 2))
    grids = {PED: [], CAR: []}
    for i in range(cfg.n_test):
        rng, thist[i], last = _sequence(cfg, TEST, i)
        tfut[i] = rollout_terminals(last, cfg.dt, 1, rng)[0]
        term = rollout_terminals(last, cfg.dt, cfg.n_rollouts, rng)
        mc[i] = term[:keep]
        for a in (PED, CAR):
            grids[a].append(points_to_grid(term[:, a], cfg.grid, cfg.grid))
    np.save(out / "test_hist.npy", thist)
    np.save(out / "test_future.npy", tfut)
    np.save(out / "test_mc.npy", mc)
    write_grids(out / "test_gt_ped.grid", grids[PED], tag)
    write_grids(out / "test_gt_car.grid", grids[CAR], tag)
    files = {k: k for k in ("train_hist.npy", "train_future.npy", "test_hist.npy", "test_future.npy",
                            "test_mc.npy", "test_gt_ped.grid", "test_gt_car.grid")}
    (out / "manifest.ini").write_text(_manifest(cfg, files))
    log.info("wrote dataset %s (%d train records, %d test conditions)", out, cfg.n_sequences * F, cfg.n_test)
    return out


@dataclass
class Dataset:
    cfg: DatasetConfig
    train_hist: np.ndarray    # (S, h+1, 2, 2)
    train_future: np.ndarray  # (S, F, 2, 2)
    test_hist: np.ndarray     # (T, h+1, 2, 2)
    test_future: np.ndarray   # (T, 2, 2)
    test_mc: np.ndarray       # (T, keep, 2, 2)
    test_gt: dict             # actor -> list of GridDensity

    def train_xy(self, frame="local"):
        """Both actors' samples: features, targets and anchors (current positions).

        With ``frame='local'`` targets are offsets from the anchor.
        """
        S, F = self.train_future.shape[:2]
        Xs, Ys, As = [], [], []
        for a in (PED, CAR):
            x = featurize_batch(self.train_hist, a)
            anchor = self.train_hist[:, -1, a]
            y = self.train_future[:, :, a]                    # (S, F, 2)
            Xs.append(np.repeat(x, F, axis=0))
            As.append(np.repeat(anchor, F, axis=0))
            Ys.append(y.reshape(-1, 2))
        X, Y, A = np.concatenate(Xs), np.concatenate(Ys), np.concatenate(As)
        return X, (Y - A if frame == "local" else Y), A

    def test_conditions(self):
        """Yields (actor, index, features, anchor, future sample, MC samples, gt grid)."""
        for a in (PED, CAR):
            X = featurize_batch(self.test_hist, a)
            for i in range(len(self.test_hist)):
                yield a, i, X[i], self.test_hist[i, -1, a], self.test_future[i, a], self.test_mc[i, :, a], \
                    self.test_gt[a][i]


def read_manifest(path) -> DatasetConfig:
    cp = configparser.ConfigParser()
    cp.read(Path(path) / "manifest.ini")
    if "dataset" not in cp:
        raise ConfigError(f"{path} has no dataset manifest")
    d = cp["dataset"]
    return DatasetConfig(**{k: int(d[k]) for k in asdict(DatasetConfig()).keys()})


def load_dataset(path) -> Dataset:
    p = Path(path)
    cfg = read_manifest(p)
    return Dataset(cfg, np.load(p / "train_hist.npy"), np.load(p / "train_future.npy"),
                   np.load(p / "test_hist.npy"), np.load(p / "test_future.npy"), np.load(p / "test_mc.npy"),
                   {PED: read_grids(p / "test_gt_ped.grid"), CAR: read_grids(p / "test_gt_car.grid")})
