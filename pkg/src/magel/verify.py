"""Verification suites shared by the CLI verify modes and the test-suite.

Each function returns plain numbers (residuals) so callers decide on
tolerances and reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from . import degree as dg
from .energy import (LoadSchedule, MaterialParams, boundary_penalty, elastic_energy, exchange_energy, load_work)
from .grid import RefGrid, State, build_grid, check_div_identities, state_from_map
from .maxwell import EulerianGrid, MaxwellContext, build_eulerian_grid, solve_stray_field, source_term
from .scenarios import angle_doubling_case, doubled_annulus, perturbed_identity_map, random_admissible_state


# ---------------------------------------------------------------- degree and images

def image_perimeter(state: State) -> float:
    """Length of the closed polyline y(boundary of the reference rectangle)."""
    g = state.grid
    nx, ny = g.nx, g.ny
    idx = np.concatenate([np.arange(nx + 1),
                          nx + (nx + 1) * np.arange(1, ny + 1),
                          ny * (nx + 1) + np.arange(nx - 1, -1, -1),
                          (nx + 1) * np.arange(ny - 1, -1, -1)])
    pts = state.y[idx]
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def default_ball(grid: RefGrid, frac: float = 0.3) -> dg.Ball:
    c = (grid.origin[0] + 0.5 * grid.extent[0], grid.origin[1] + 0.5 * grid.extent[1])
    return dg.Ball(c, frac * min(grid.extent))


@dataclass
class DegreeSuite:
    max_discrepancy: int  # over random maps and the angle-doubling map
    doubling_max_degree: int
    flood_fill_bad: int
    nested_violations: int
    cn_injective_ratio: float  # max |CN residual| / (2 h perimeter)
    cn_doubling_ratio: float  # CN residual / doubled area
    affine_cov_residual: float
    affine_cov_bound: float
    maps: int


def degree_suite(grid: RefGrid, n_maps: int, seed: int, amp: float = 0.02) -> DegreeSuite:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 17]))
    worst, nested, cn_ratio = 0, 0, 0.0
    U = default_ball(grid)
    balls = [default_ball(grid, f) for f in (0.15, 0.25, 0.35)]
    for _ in range(n_maps):
        s = random_admissible_state(grid, rng, amp)
        eg = build_eulerian_grid(s, 1.0)
        worst = max(worst, dg.verify_deg_eq_mult(s, U, eg))
        nested += dg.nested_image_violations(s, balls, eg)
        tol = 2.0 * max(eg.hx, eg.hy) * image_perimeter(s)
        cn_ratio = max(cn_ratio, abs(dg.ciarlet_necas_residual(s, eg)) / tol)
    case = angle_doubling_case()
    rep = dg.compare_deg_mult(case.state, case.U, case.eg)
    worst = max(worst, rep.discrepancy)
    ok, bad = dg.flood_fill_consistent(rep.degree)
    ann, eg2, doubled = doubled_annulus()
    cn_doubling = dg.ciarlet_necas_residual(ann, eg2) / doubled
    # affine map, psi = 1: exact up to rasterization of the image boundary
    A = np.eye(2) + rng.normal(size=(2, 2)) * 0.1
    b = rng.normal(size=2) * 0.1
    s = state_from_map(grid, lambda x: x @ A.T + b)
    eg = build_eulerian_grid(s, 1.0)
    _, _, r = dg.change_of_variable(s, None, lambda p: np.ones(len(p)), eg)
    bound = 1e-12 + image_perimeter(s) * eg.diagonal
    return DegreeSuite(worst, rep.max_degree, bad, nested, cn_ratio, cn_doubling, r, bound, n_maps)


def change_of_variables_slopes(n_pairs: int, seed: int, levels=(16, 32, 64)) -> tuple[np.ndarray, np.ndarray]:
    """Residuals (n_pairs, levels) and fitted log-log slopes for smooth (y, psi) pairs.

    psi is a narrow Gaussian bump centred on the image of an interior point, so
    the boundary rasterization does not dominate the quadrature error.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 23]))
    res = np.zeros((n_pairs, len(levels)))
    for k in range(n_pairs):
        ymap = perturbed_identity_map(rng, 0.03, modes=2, linear=0.1)
        c = rng.uniform(0.4, 0.6, 2)
        w = rng.uniform(0.05, 0.07)
        yc = ymap(c[None])[0]

        def psi(p, yc=yc, w=w):
            return np.exp(-((p[:, 0] - yc[0]) ** 2 + (p[:, 1] - yc[1]) ** 2) / (2 * w * w))

        for j, n in enumerate(levels):
            g = build_grid(n, n)
            s = state_from_map(g, ymap)
            res[k, j] = dg.change_of_variable(s, None, psi, build_eulerian_grid(s))[2]
    h = 1.0 / np.asarray(levels, dtype=float)
    slopes = np.array([np.polyfit(np.log(h), np.log(np.maximum(r, 1e-300)), 1)[0] for r in res])
    return res, slopes


# ---------------------------------------------------------------- divergence identities

def div_identity_orders(seed: int, levels=(8, 16, 32), quadrature: str = "gauss2") -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 29]))
    ymap = perturbed_identity_map(rng, 0.05, linear=0.1)

    def psi(p):
        return np.stack([np.sin(p[:, 0]) * p[:, 1] ** 2, np.cos(p[:, 1]) + p[:, 0] ** 3], axis=1)

    def div_psi(p):
        return np.cos(p[:, 0]) * p[:, 1] ** 2 - np.sin(p[:, 1])

    def phi(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def grad_phi(x):
        return np.pi * np.stack([np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
                                 np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])], axis=1)

    res = []
    for n in levels:
        g = build_grid(n, n, quadrature=quadrature)
        res.append(check_div_identities(g, state_from_map(g, ymap).y, psi, div_psi, phi, grad_phi))
    res = np.array(res)
    ratio = np.asarray(levels[1:], dtype=float) / np.asarray(levels[:-1], dtype=float)
    return res, np.log(res[:-1] / res[1:]) / np.log(ratio)


# ---------------------------------------------------------------- gradient consistency

def _fd_error(fun, state: State, rng, interior_only: bool = False, eps: float = 1e-6) -> float:
    """Relative mismatch between the analytic and central-difference directional derivative."""
    E, gy, gth = fun(state, True)
    g = state.grid
    vy = rng.normal(size=state.y.shape) * g.h
    if interior_only:
        mask = np.zeros(g.n_nodes, dtype=bool)
        mask[g.interior_nodes()] = True
        vy[~mask] = 0.0
    vt = rng.normal(size=state.theta.shape)
    an = float(np.sum(gy * vy) + np.sum(gth * vt))
    ep = fun(State(g, state.y + eps * vy, state.theta + eps * vt), False)[0]
    em = fun(State(g, state.y - eps * vy, state.theta - eps * vt), False)[0]
    fd = (ep - em) / (2 * eps)
    scale = max(abs(an), abs(fd), 1e-8 * max(1.0, abs(E)))
    return abs(an - fd) / scale


@dataclass
class GradientSuite:
    errors: dict  # term -> max relative error
    states: int


def gradient_suite(grid: RefGrid, n_states: int, seed: int, params: MaterialParams | None = None,
                   loads: LoadSchedule | None = None, with_maxwell: bool = True) -> GradientSuite:
    params = params or MaterialParams(alpha=1.2, beta=0.9)
    if loads is None:
        loads = LoadSchedule.from_expressions(
            [0.0, 1.0], f=("0.3*x2", "-0.2+x1"), g=("0.1", "0.2*x1"), h=("0.5+0.1*x2", "0.3*sin(x1)"),
            d=("x1 + 0.05*x2", "x2"), gamma=("left", "bottom"), sigma=("right",))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 31]))
    t = 0.5
    terms = {
        "E_el": lambda s, wg: elastic_energy(s, params, wg),
        "E_exc": lambda s, wg: exchange_energy(s, wg),
        "L": lambda s, wg: load_work(s, loads, t, wg),
        "B": lambda s, wg: boundary_penalty(s, loads, t, params, wg),
    }
    errors = {k: 0.0 for k in terms}
    if with_maxwell:
        errors["E_mag"] = 0.0
    for _ in range(n_states):
        s = random_admissible_state(grid, rng)
        for k, fun in terms.items():
            errors[k] = max(errors[k], _fd_error(fun, s, rng))
        if with_maxwell:
            ctx = MaxwellContext(build_eulerian_grid(s, 1.0))

            def emag(st, wg, ctx=ctx):
                return ctx.energy(st, wg)[:3]

            errors["E_mag"] = max(errors["E_mag"], _fd_error(emag, s, rng, interior_only=True))
    return GradientSuite(errors, n_states)


# ---------------------------------------------------------------- uniformly magnetized disc

def _disc_box(radius: float, n: int, box: float) -> EulerianGrid:
    """Square box of half-width ~ box*radius centered on the disc, ``n`` cells per radius."""
    h = radius / n
    m = 2 * int(round(box * n))
    return EulerianGrid((-0.5 * m * h, -0.5 * m * h), h, h, m, m, box)


def _disc_window(radius: float, eg: EulerianGrid, sub: int):
    """Area fractions of the disc on the smallest window of cells around it (plus two cells)."""
    c = eg.mx // 2
    k = int(np.ceil(radius / eg.hx)) + 2
    lo = c - k
    w = 2 * k
    s = (np.arange(sub) + 0.5) / sub
    x = eg.origin[0] + (lo + np.arange(w)[:, None] + s[None]) * eg.hx  # (w, sub)
    inside = x[:, None, :, None] ** 2 + x[None, :, None, :] ** 2 < radius * radius  # (wy, wx, sy, sx)
    return inside.mean(axis=(2, 3)), lo, w


def disc_magnetization(radius: float, eg: EulerianGrid, sub: int = 8) -> np.ndarray:
    """m = area fraction * e1 on ``eg`` (my, mx, 2)."""
    frac, lo, w = _disc_window(radius, eg, sub)
    m = np.zeros(eg.shape + (2,))
    m[lo:lo + w, lo:lo + w, 0] = frac
    return m


def disc_energy(radius: float, n: int, box: float, sub: int = 8) -> float:
    """E_mag of the uniformly e1-magnetized disc through the standard solver."""
    eg = _disc_box(radius, n, box)
    return solve_stray_field(disc_magnetization(radius, eg, sub), eg).E_mag


def disc_energy_spectral(radius: float, n: int, box: float, sub: int = 8) -> float:
    """Same discrete energy as :func:`disc_energy` with two full-size arrays only.

    The source is local, so it is assembled on a window around the disc, and
    E = b^T K^-1 b / 2 is summed in the orthonormal sine basis where K is
    diagonal.  This makes the 4x-resolution oracle affordable in memory.
    """
    eg = _disc_box(radius, n, box)
    frac, lo, w = _disc_window(radius, eg, sub)
    win = EulerianGrid((0.0, 0.0), eg.hx, eg.hy, w, w, box)
    mw = np.zeros((w, w, 2))
    mw[..., 0] = frac
    b = np.zeros(eg.shape)
    b[lo:lo + w, lo:lo + w] = source_term(mw, win)
    bh = sfft.dstn(b, type=2, norm="ortho", overwrite_x=True)
    del b
    lx = 4.0 * np.sin(np.pi * np.arange(1, eg.mx + 1) / (2 * eg.mx)) ** 2 * (eg.hy / eg.hx)
    ly = 4.0 * np.sin(np.pi * np.arange(1, eg.my + 1) / (2 * eg.my)) ** 2 * (eg.hx / eg.hy)
    total = 0.0
    for j in range(0, eg.my, 256):
        blk = bh[j:j + 256]
        total += float(np.sum(blk * blk / (ly[j:j + 256, None] + lx[None, :])))
    return 0.5 * total


@dataclass
class DiscOracle:
    base: float
    oracle: float
    exact: float  # whole-space value pi R^2 / 4 (demagnetizing factor 1/2)
    runs: dict  # (n, box) -> energy

    @property
    def rel_error(self) -> float:
        return abs(self.base - self.oracle) / self.oracle


def disc_oracle(radius: float = 0.5, n: int = 64, box: float = 10.0, sub: int = 8) -> DiscOracle:
    """Base solve against the fine-grid oracle at 4x resolution and 2x padding.

    The energy error behaves like a/n (the magnetization jumps at the rim)
    plus b/box^2 (zero potential on the box edge).  The oracle removes both
    leading terms by Richardson extrapolation: first order in 1/n at
    resolutions 2n, 4n and padding 2*box, second order in 1/box at
    resolution 2n.
    """
    runs = {(n, box): disc_energy(radius, n, box, sub)}
    for key in ((2 * n, box), (2 * n, 2 * box), (4 * n, 2 * box)):
        runs[key] = disc_energy_spectral(radius, key[0], key[1], sub)
    e_h = 2.0 * runs[(4 * n, 2 * box)] - runs[(2 * n, 2 * box)]
    e_box = (runs[(2 * n, 2 * box)] - runs[(2 * n, box)]) / 3.0
    return DiscOracle(runs[(n, box)], e_h + e_box, 0.25 * np.pi * radius ** 2, runs)
