"""Per-step simulator kernels (numba when available).

World layout shared by all kernels: ``pos`` (2, 2) with row 0 the pedestrian
and row 1 the car, ``head`` (2, 2) last non-zero actions, ``crossed`` (2,)
whether C already occurs in the actor's history, ``state`` (2,) int codes.
"""
import numpy as np

from .._accel import jit

# pedestrian states
P_TC, P_SC, P_C, P_FC, P_AC = 0, 1, 2, 3, 4
# car states
C_SC, C_C, C_FC, C_OC = 0, 1, 2, 3

PED_HALF = 10.0
CAR_HALF = 20.0
WORLD = 256.0
NO_RULE = -1


@jit
def _origin(c, half):
    return np.int64(np.floor(c - half + 0.5))


@jit
def _overlap(cx, cy, half, rects):
    ox = _origin(cx, half)
    oy = _origin(cy, half)
    size = np.int64(2 * half)
    tot = 0
    for r in range(rects.shape[0]):
        w = min(ox + size, rects[r, 2]) - max(ox, rects[r, 0])
        h = min(oy + size, rects[r, 3]) - max(oy, rects[r, 1])
        if w > 0 and h > 0:
            tot += w * h
    return tot


@jit
def _dtc(x, y, corners):
    best = np.inf
    for k in range(corners.shape[0]):
        dx = x - corners[k, 0]
        dy = y - corners[k, 1]
        d = np.sqrt(dx * dx + dy * dy)
        if d < best:
            best = d
    return best


@jit
def _ad(ax, ay, bx, by):
    n = np.sqrt(ax * ax + ay * ay) * np.sqrt(bx * bx + by * by)
    if n == 0.0:
        return 0.0
    c = (ax * bx + ay * by) / n
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return np.arccos(c) * 180.0 / np.pi


@jit
def _order(v):
    """Stable ascending argsort of a short vector (insertion sort)."""
    n = v.size
    idx = np.arange(n)
    for i in range(1, n):
        k = idx[i]
        j = i - 1
        while j >= 0 and v[idx[j]] > v[k]:
            idx[j + 1] = idx[j]
            j -= 1
        idx[j + 1] = k
    return idx


@jit
def ped_state(px, py, crossed, shared, pavement):
    s = _overlap(px, py, PED_HALF, shared) > 0
    p = _overlap(px, py, PED_HALF, pavement) > 0
    if not s and not crossed:
        return P_TC
    if s and p and not crossed:
        return P_SC
    if s and p and crossed:
        return P_FC
    if s:
        return P_C
    if crossed:
        return P_AC
    return NO_RULE


@jit
def car_state(cx, cy, crossed, shared, crossing):
    fully = _overlap(cx, cy, CAR_HALF, crossing) == np.int64(4 * CAR_HALF * CAR_HALF)
    s = _overlap(cx, cy, CAR_HALF, shared) > 0
    if fully and not crossed:
        return C_C
    if s and not crossed:
        return C_SC
    if s and crossed:
        return C_FC
    # out of the crossing, including a car still inside R_X after its turn
    return C_OC


@jit
def ped_params(sp, sc, px, py, hx, hy, shared, pavement, corners, dirs):
    """Mixture of the pedestrian action: (n, weights, means, sigmas)."""
    w = np.zeros(4)
    mu = np.zeros((4, 2))
    sig = np.zeros(4)
    nd = dirs.shape[0]
    cost = np.empty(nd)
    if sp == P_TC:
        for k in range(nd):
            cost[k] = _dtc(px + dirs[k, 0], py + dirs[k, 1], corners)
        o = _order(cost)
        w[0] = 0.7
        w[1] = 0.3
        mu[0] = dirs[o[0]]
        mu[1] = dirs[o[1]]
        sig[0] = 2.0
        sig[1] = 2.0
        return 2, w, mu, sig
    if sp == P_SC and (sc == C_SC or sc == C_C or sc == C_FC):
        w[0] = 1.0
        return 1, w, mu, sig
    if sp == P_AC:
        for k in range(nd):
            cost[k] = -_dtc(px + dirs[k, 0], py + dirs[k, 1], corners)
        o = _order(cost)
        w[0] = 0.4
        for i in range(4):
            if i > 0:
                w[i] = 0.2
            mu[i] = dirs[o[i]]
            sig[i] = 2.0
        return 4, w, mu, sig
    # SC with the car out of the crossing, C and FC: heading vs. region overlap
    if sp == P_FC:
        region = pavement
        ang = 1.0
    else:
        region = shared
        ang = 2.0 if sp == P_C else 1.0
    for k in range(nd):
        cost[k] = ang * _ad(dirs[k, 0], dirs[k, 1], hx, hy) \
            - _overlap(px + dirs[k, 0], py + dirs[k, 1], PED_HALF, region)
    o = _order(cost)
    w[0] = 1.0
    mu[0] = dirs[o[0]]
    sig[0] = 2.0
    return 1, w, mu, sig


@jit
def car_params(sp, sc, hx, hy, dirs, oc_straight):
    w = np.zeros(4)
    mu = np.zeros((4, 2))
    sig = np.zeros(4)
    if sp == P_C or sp == P_FC:
        w[0] = 1.0
        return 1, w, mu, sig
    nd = dirs.shape[0]
    cost = np.empty(nd)
    for k in range(nd):
        cost[k] = _ad(dirs[k, 0], dirs[k, 1], hx, hy)
    o = _order(cost)
    if sc == C_C:
        for i in range(3):
            w[i] = 1.0 / 3.0
            mu[i] = dirs[o[i]]
            sig[i] = 2.0
        return 3, w, mu, sig
    w[0] = 0.7 if sc != C_OC else oc_straight
    w[1] = 1.0 - w[0]
    mu[0] = dirs[o[0]]
    sig[0] = 2.0
    return 2, w, mu, sig


@jit
def sample_action(n, w, mu, sig, rng, out):
    k = 0
    if n > 1:
        u = rng.random()
        acc = w[0]
        while k < n - 1 and u >= acc:
            k += 1
            acc += w[k]
    out[0] = mu[k, 0]
    out[1] = mu[k, 1]
    if sig[k] > 0.0:
        out[0] += sig[k] * rng.standard_normal()
        out[1] += sig[k] * rng.standard_normal()


@jit
def _clamp(v, lo, hi):
    return lo if v < lo else (hi if v > hi else v)


@jit
def advance(pos, head, crossed, state, n_steps, rng, shared, pavement, crossing, corners,
            ped_dirs, car_dirs, oc_straight, rec_pos, rec_state):
    """Run ``n_steps`` steps in place.

    When the record arrays have ``n_steps`` rows, row t of ``rec_pos`` (4, 2)
    receives positions then headings after step t and ``rec_state`` the
    states.  Returns the failing step index or -1.
    """
    ap = np.zeros(2)
    ac = np.zeros(2)
    record = rec_pos.shape[0] >= n_steps
    for t in range(n_steps):
        sp = state[0]
        sc = state[1]
        n, w, mu, sig = ped_params(sp, sc, pos[0, 0], pos[0, 1], head[0, 0], head[0, 1],
                                   shared, pavement, corners, ped_dirs)
        sample_action(n, w, mu, sig, rng, ap)
        n, w, mu, sig = car_params(sp, sc, head[1, 0], head[1, 1], car_dirs, oc_straight)
        sample_action(n, w, mu, sig, rng, ac)
        pos[0, 0] = _clamp(pos[0, 0] + ap[0], PED_HALF, WORLD - PED_HALF)
        pos[0, 1] = _clamp(pos[0, 1] + ap[1], PED_HALF, WORLD - PED_HALF)
        pos[1, 0] = _clamp(pos[1, 0] + ac[0], CAR_HALF, WORLD - CAR_HALF)
        pos[1, 1] = _clamp(pos[1, 1] + ac[1], CAR_HALF, WORLD - CAR_HALF)
        if ap[0] != 0.0 or ap[1] != 0.0:
            head[0, 0] = ap[0]
            head[0, 1] = ap[1]
        if ac[0] != 0.0 or ac[1] != 0.0:
            head[1, 0] = ac[0]
            head[1, 1] = ac[1]
        s0 = ped_state(pos[0, 0], pos[0, 1], crossed[0], shared, pavement)
        s1 = car_state(pos[1, 0], pos[1, 1], crossed[1], shared, crossing)
        if s0 == NO_RULE or s1 == NO_RULE:
            return t
        state[0] = s0
        state[1] = s1
        if s0 == P_C:
            crossed[0] = True
        if s1 == C_C:
            crossed[1] = True
        if record:
            rec_pos[t, :2] = pos
            rec_pos[t, 2:] = head
            rec_state[t, 0] = s0
            rec_state[t, 1] = s1
    return -1


@jit
def rollouts(pos0, head0, crossed0, state0, n_steps, n, rng, shared, pavement, crossing, corners,
             ped_dirs, car_dirs, oc_straight, out):
    """Terminal positions of ``n`` independent continuations; returns failures."""
    rp = np.zeros((0, 4, 2))
    rs = np.zeros((0, 2), dtype=np.int64)
    fails = 0
    for r in range(n):
        pos = pos0.copy()
        head = head0.copy()
        crossed = crossed0.copy()
        state = state0.copy()
        if advance(pos, head, crossed, state, n_steps, rng, shared, pavement, crossing, corners,
                   ped_dirs, car_dirs, oc_straight, rp, rs) >= 0:
            fails += 1
        out[r] = pos
    return fails
