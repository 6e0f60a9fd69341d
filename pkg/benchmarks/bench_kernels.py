"""Compare the compiled kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py [--n 32] [--repeat 5]``.  Prints one
line per kernel with the best-of-repeat wall time of each backend, the
speed-up, and the maximum absolute difference between the two outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from magel import _kernels_py
from magel.degree import boundary_polyline
from magel.grid import build_grid, state_from_map
from magel.maxwell import build_eulerian_grid
from magel.scenarios import perturbed_identity_map
from magel.verify import default_ball

try:
    from magel import _core
except ImportError:  # pragma: no cover
    _core = None


def _best(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def cases(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    g = build_grid(n, n)
    s = state_from_map(g, perturbed_identity_map(rng, 0.02), rng.uniform(-np.pi, np.pi, g.n_cells))
    eg = build_eulerian_grid(s, 1.0)
    box = (eg.origin[0], eg.origin[1], eg.hx, eg.hy, eg.mx, eg.my)
    corners = np.ascontiguousarray(s.corners())
    poly = boundary_polyline(s, default_ball(g))
    pts = np.ascontiguousarray(eg.centers()[:: max(1, eg.mx * eg.my // 4000)])
    u = rng.normal(size=(eg.my, eg.mx))
    dep = np.ascontiguousarray(rng.uniform(0, 1, (4 * g.n_cells, 2)) * 0.9 + 0.05)
    vals = rng.normal(size=(4 * g.n_cells, 2))
    gm = rng.normal(size=(eg.mx * eg.my, 2))
    zp = rng.normal(size=(4 * g.n_cells, 2))
    return {
        "locate_preimages": lambda k: k.locate_preimages(corners, *box),
        "winding_numbers": lambda k: k.winding_numbers(poly, pts),
        "polyline_distance": lambda k: k.polyline_distance(poly, pts),
        "laplacian_apply": lambda k: k.laplacian_apply(u, eg.hx, eg.hy),
        "bspline_deposit": lambda k: k.bspline_deposit(dep, vals, *box),
        "bspline_deposit_adjoint": lambda k: k.bspline_deposit_adjoint(dep, vals, zp, gm, *box),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32, help="reference cells per side")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<26}{'python [ms]':>13}{'compiled [ms]':>15}{'speed-up':>10}{'max |diff|':>13}")
    for name, call in cases(args.n).items():
        tp, op = _best(lambda: call(_kernels_py), args.repeat)
        if _core is None:
            print(f"{name:<26}{1e3 * tp:13.3f}{'-':>15}{'-':>10}{'-':>13}")
            continue
        tc, oc = _best(lambda: call(_core), args.repeat)
        print(f"{name:<26}{1e3 * tp:13.3f}{1e3 * tc:15.3f}{tp / tc:10.1f}{_diff(op, oc):13.2e}")


if __name__ == "__main__":
    main()
