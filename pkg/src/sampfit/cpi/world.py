"""Car/pedestrian world: initialization, state rules, action mixtures, stepping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import points_to_grid
from ..errors import ConfigError, SimulationError
from . import _kernels as K
from .geometry import CAR_BOX, CAR_DIRS, PED_BOX, PED_DIRS, REGIONS, WORLD, Regions, angle_diff, overlap

PED_STATES = ("TC", "SC", "C", "FC", "AC")
CAR_STATES = ("SC", "C", "FC", "OC")
# raw weights of the car's out-of-crossing row; they do not sum to one
OC_RAW_WEIGHTS = (0.8, 0.3)
OC_STRAIGHT = OC_RAW_WEIGHTS[0] / sum(OC_RAW_WEIGHTS)
INIT_BUDGET = 100_000


@dataclass(frozen=True)
class ActorState:
    """World at time t: positions, current states, state histories, headings.

    ``heading_*`` is the last non-zero action of each actor; it stands in for
    the previous action whenever an actor stood still.
    """

    x_p: np.ndarray
    x_c: np.ndarray
    s_p: str
    s_c: str
    h_p: tuple
    h_c: tuple
    heading_p: np.ndarray
    heading_c: np.ndarray
    t: int = 0

    def arrays(self):
        pos = np.array([self.x_p, self.x_c], dtype=np.float64)
        head = np.array([self.heading_p, self.heading_c], dtype=np.float64)
        crossed = np.array(["C" in self.h_p, "C" in self.h_c])
        state = np.array([PED_STATES.index(self.s_p), CAR_STATES.index(self.s_c)], dtype=np.int64)
        return pos, head, crossed, state


@dataclass(frozen=True)
class ActionMixture:
    """Displacement mixture; ``sigma`` may be 0 for exact (Dirac) components."""

    weights: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.mu[comp] + self.sigma[comp, None] * rng.standard_normal((n, 2))


def _regions(reg: Regions):
    return reg.shared, reg.pavement, reg.crossing, reg.corners


def step_states(x_p, x_c, h_p=(), h_c=(), regions: Regions = REGIONS) -> tuple[str, str]:
    """First-match state rules for the given positions and prior histories."""
    sp = K.ped_state(float(x_p[0]), float(x_p[1]), "C" in h_p, regions.shared, regions.pavement)
    sc = K.car_state(float(x_c[0]), float(x_c[1]), "C" in h_c, regions.shared, regions.crossing)
    if sp == K.NO_RULE or sc == K.NO_RULE:
        raise SimulationError(f"no state rule matched at x_p={x_p}, x_c={x_c}")
    return PED_STATES[sp], CAR_STATES[sc]


def make_world(x_p, x_c, heading_p=None, heading_c=None, h_p=(), h_c=(),
               regions: Regions = REGIONS) -> ActorState:
    """World at the given positions; states follow from the rules and ``h_*``."""
    x_p = np.asarray(x_p, dtype=float)
    x_c = np.asarray(x_c, dtype=float)
    if heading_p is None:
        d = regions.corners - x_p
        heading_p = d[np.argmin(np.linalg.norm(d, axis=1))]
        if not np.any(heading_p):
            heading_p = PED_DIRS[0]
    if heading_c is None:
        to_center = np.array([WORLD / 2, WORLD / 2]) - x_c
        if np.linalg.norm(to_center) < 1e-9:
            heading_c = CAR_DIRS[0]
        else:
            heading_c = CAR_DIRS[int(np.argmin([angle_diff(a, to_center) for a in CAR_DIRS]))]
    sp, sc = step_states(x_p, x_c, h_p, h_c, regions)
    return ActorState(x_p, x_c, sp, sc, tuple(h_p) + (sp,), tuple(h_c) + (sc,),
                      np.asarray(heading_p, dtype=float), np.asarray(heading_c, dtype=float))


def init_world(rng: np.random.Generator, regions: Regions = REGIONS, budget: int = INIT_BUDGET) -> ActorState:
    """Rejection-sample a pedestrian inside R_P u R_S and a car inside R_V."""
    ped_ok = np.concatenate([regions.pavement, regions.shared])
    hp, hc = PED_BOX / 2, CAR_BOX / 2
    x_p = x_c = None
    for _ in range(budget):
        c = rng.uniform(hp, WORLD - hp, size=2)
        if overlap(c, PED_BOX, ped_ok) == PED_BOX * PED_BOX:
            x_p = c
            break
    for _ in range(budget):
        c = rng.uniform(hc, WORLD - hc, size=2)
        if overlap(c, CAR_BOX, regions.vehicle) == CAR_BOX * CAR_BOX:
            x_c = c
            break
    if x_p is None or x_c is None:
        raise ConfigError(f"rejection sampling exhausted {budget} draws; check the region geometry")
    return make_world(x_p, x_c, regions=regions)


def action_distribution(s_p: str, s_c: str, w: ActorState,
                        regions: Regions = REGIONS) -> tuple[ActionMixture, ActionMixture]:
    """Pedestrian and car action mixtures for the given state pair in world ``w``."""
    sp, sc = PED_STATES.index(s_p), CAR_STATES.index(s_c)
    n, wt, mu, sig = K.ped_params(sp, sc, float(w.x_p[0]), float(w.x_p[1]), float(w.heading_p[0]),
                                  float(w.heading_p[1]), regions.shared, regions.pavement,
                                  regions.corners, PED_DIRS)
    ped = ActionMixture(wt[:n].copy(), mu[:n].copy(), sig[:n].copy())
    n, wt, mu, sig = K.car_params(sp, sc, float(w.heading_c[0]), float(w.heading_c[1]), CAR_DIRS, OC_STRAIGHT)
    car = ActionMixture(wt[:n].copy(), mu[:n].copy(), sig[:n].copy())
    return ped, car


def simulate(w: ActorState, n_steps: int, rng: np.random.Generator,
             regions: Regions = REGIONS) -> tuple[list, ActorState]:
    """Roll ``n_steps`` steps; returns the list of worlds (including ``w``) and the last one."""
    pos, head, crossed, state = w.arrays()
    rec_pos = np.zeros((n_steps, 4, 2))
    rec_state = np.zeros((n_steps, 2), dtype=np.int64)
    bad = K.advance(pos, head, crossed, state, n_steps, rng, *_regions(regions), PED_DIRS, CAR_DIRS,
                    OC_STRAIGHT, rec_pos, rec_state)
    if bad >= 0:
        raise SimulationError(f"no state rule matched at step {w.t + bad}")
    worlds = [w]
    cur = w
    for t in range(n_steps):
        hp = cur.h_p + (PED_STATES[rec_state[t, 0]],)
        hc = cur.h_c + (CAR_STATES[rec_state[t, 1]],)
        r = rec_pos[t]
        cur = ActorState(r[0].copy(), r[1].copy(), hp[-1], hc[-1], hp, hc, r[2].copy(), r[3].copy(), cur.t + 1)
        worlds.append(cur)
    return worlds, cur


def step(w: ActorState, rng: np.random.Generator, regions: Regions = REGIONS) -> ActorState:
    """One transition t -> t + 1."""
    return simulate(w, 1, rng, regions)[1]


def rollout_terminals(w: ActorState, dt: int, n_rollouts: int, rng: np.random.Generator,
                      regions: Regions = REGIONS) -> np.ndarray:
    """(n, 2, 2) terminal positions of independent continuations."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    pos, head, crossed, state = w.arrays()
    out = np.empty((n_rollouts, 2, 2))
    fails = K.rollouts(pos, head, crossed, state, int(dt), int(n_rollouts), rng, *_regions(regions),
                       PED_DIRS, CAR_DIRS, OC_STRAIGHT, out)
    if fails:
        raise SimulationError(f"{fails} rollouts hit an unmatched state rule")
    return out


def gt_distribution(w: ActorState, dt: int, n_rollouts: int, grid=(64, 64), rng=None,
                    regions: Regions = REGIONS, return_samples=False):
    """Monte-Carlo future densities of pedestrian and car after ``dt`` steps."""
    rng = np.random.default_rng(0) if rng is None else rng
    term = rollout_terminals(w, dt, n_rollouts, rng, regions)
    gw, gh = grid
    ped = points_to_grid(term[:, 0], gw, gh)
    car = points_to_grid(term[:, 1], gw, gh)
    return (ped, car, term) if return_samples else (ped, car)
