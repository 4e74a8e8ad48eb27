"""Time the JIT kernels against their interpreted fallback.

Each mode runs in a fresh interpreter because ``SAMPFIT_DISABLE_NUMBA`` is read
at import time.  Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, time
import numpy as np
from sampfit import _accel
from sampfit.core import GridDensity
from sampfit.cpi.world import init_world, rollout_terminals
from sampfit.metrics import emd_exact

def best(f, repeat):
    f()  # warm-up, includes compilation when JIT is on
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        f()
        out.append(time.perf_counter() - t)
    return min(out)

def grid(rng, n):
    m = rng.random((n, n)) * (rng.random((n, n)) > 0.5)
    return GridDensity(m / m.sum(), (1.0, 1.0))

rng = np.random.default_rng(0)
pairs = [(grid(rng, 16), grid(rng, 16)) for _ in range(5)]
w = init_world(np.random.default_rng(1))
repeat = {repeat}
res = {{
    "numba": _accel.NUMBA_ENABLED,
    "emd_exact 5 x 16x16": best(lambda: [emd_exact(p, q) for p, q in pairs], repeat),
    "cpi rollouts 2000 x 20 steps": best(lambda: rollout_terminals(w, 20, 2000, np.random.default_rng(2)), repeat),
}}
print(json.dumps(res))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env["SAMPFIT_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", CHILD.format(repeat=repeat)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    jit, py = run(False, args.repeat), run(True, args.repeat)
    print(f"{'kernel':32s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for k in jit:
        if k == "numba":
            continue
        print(f"{k:32s} {jit[k]:10.4f} {py[k]:10.4f} {py[k] / jit[k]:8.1f}x")


if __name__ == "__main__":
    main()
