"""Eulerian magnetization and the discrete stray-field problem.

The potential lives at cell centers of a box in actual space with a
zero-Dirichlet condition on the box edge (ghost value ``-u``).  With the
face gradient ``G``, face weights ``W`` (cell area, halved on boundary faces)
and face averaging ``A`` the discrete weak form reads

    G^T W (G u + A m) = 0,    E_mag = 1/2 sum W (G u)^2,

and ``G^T W G`` equals ``hx*hy`` times the 5-point negative Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, cg

from ._backend import bspline_deposit, bspline_deposit_adjoint, laplacian_apply, locate_preimages
from .errors import ConfigurationError, PaddingTooSmallError, SolverError
from .grid import State, director_perp, scatter_nodes, shape_derivs, shape_values


@dataclass(frozen=True)
class EulerianGrid:
    """Cell-centered grid on the box ``origin + [0, mx*hx] x [0, my*hy]``."""

    origin: tuple[float, float]
    hx: float
    hy: float
    mx: int
    my: int
    padding: float = 1.0

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.my, self.mx)

    @property
    def n_cells(self) -> int:
        return self.mx * self.my

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.hx, self.hy))

    def centers(self) -> np.ndarray:
        """Cell centers, shape (my*mx, 2), flat index ``j*mx + i``."""
        xs = self.origin[0] + (np.arange(self.mx) + 0.5) * self.hx
        ys = self.origin[1] + (np.arange(self.my) + 0.5) * self.hy
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def bounds(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return ox, ox + self.mx * self.hx, oy, oy + self.my * self.hy

    def require_inside(self, pts: np.ndarray, cells: float = 2.0) -> None:
        """Raise unless ``pts`` keep ``cells`` cell widths from the box edge."""
        x0, x1, y0, y1 = self.bounds()
        mx, my = cells * self.hx, cells * self.hy
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        if lo[0] < x0 + mx or hi[0] > x1 - mx or lo[1] < y0 + my or hi[1] > y1 - my:
            raise PaddingTooSmallError("padding too small: deformed image leaves the Eulerian box")


def build_eulerian_grid(state: State, padding: float = 1.0, cell_size: Optional[tuple[float, float]] = None,
                        min_margin_cells: int = 4) -> EulerianGrid:
    """Box around the image of ``state`` with ``padding`` times its diameter on each side.

    The default cell size is the reference one and the origin is snapped to the
    reference grid lines, so the identity map puts Eulerian centers on the
    reference cell centers.
    """
    if not padding > 0:
        raise ConfigurationError("padding must be > 0")
    g = state.grid
    hx, hy = cell_size if cell_size is not None else (g.hx, g.hy)
    if hx <= 0 or hy <= 0:
        raise ConfigurationError("Eulerian cell size must be positive")
    lo = state.y.min(axis=0)
    hi = state.y.max(axis=0)
    pad = padding * float(np.hypot(*(hi - lo)))
    pad_x = max(pad, min_margin_cells * hx)
    pad_y = max(pad, min_margin_cells * hy)
    ox = g.origin[0] + np.floor((lo[0] - pad_x - g.origin[0]) / hx) * hx
    oy = g.origin[1] + np.floor((lo[1] - pad_y - g.origin[1]) / hy) * hy
    mx = int(np.ceil((hi[0] + pad_x - ox) / hx - 1e-9))
    my = int(np.ceil((hi[1] + pad_y - oy) / hy - 1e-9))
    return EulerianGrid((float(ox), float(oy)), float(hx), float(hy), mx, my, float(padding))


# ---------------------------------------------------------------- face operators

def face_gradient(u: np.ndarray, eg: EulerianGrid) -> tuple[np.ndarray, np.ndarray]:
    """Normal derivatives on x-faces (my, mx+1) and y-faces (my+1, mx)."""
    gx = np.empty((eg.my, eg.mx + 1))
    gx[:, 1:-1] = (u[:, 1:] - u[:, :-1]) / eg.hx
    gx[:, 0] = 2.0 * u[:, 0] / eg.hx
    gx[:, -1] = -2.0 * u[:, -1] / eg.hx
    gy = np.empty((eg.my + 1, eg.mx))
    gy[1:-1] = (u[1:] - u[:-1]) / eg.hy
    gy[0] = 2.0 * u[0] / eg.hy
    gy[-1] = -2.0 * u[-1] / eg.hy
    return gx, gy


def face_gradient_adjoint(fx: np.ndarray, fy: np.ndarray, eg: EulerianGrid) -> np.ndarray:
    out = np.zeros(eg.shape)
    out[:, 1:] += fx[:, 1:-1] / eg.hx
    out[:, :-1] -= fx[:, 1:-1] / eg.hx
    out[:, 0] += 2.0 * fx[:, 0] / eg.hx
    out[:, -1] -= 2.0 * fx[:, -1] / eg.hx
    out[1:] += fy[1:-1] / eg.hy
    out[:-1] -= fy[1:-1] / eg.hy
    out[0] += 2.0 * fy[0] / eg.hy
    out[-1] -= 2.0 * fy[-1] / eg.hy
    return out


def face_weights(eg: EulerianGrid) -> tuple[np.ndarray, np.ndarray]:
    wx = np.full((eg.my, eg.mx + 1), eg.cell_area)
    wx[:, [0, -1]] *= 0.5
    wy = np.full((eg.my + 1, eg.mx), eg.cell_area)
    wy[[0, -1]] *= 0.5
    return wx, wy


def face_average(m: np.ndarray, eg: EulerianGrid) -> tuple[np.ndarray, np.ndarray]:
    """Normal component of ``m`` (my, mx, 2) averaged onto faces; zero on the box edge."""
    ax = np.zeros((eg.my, eg.mx + 1))
    ax[:, 1:-1] = 0.5 * (m[:, 1:, 0] + m[:, :-1, 0])
    ay = np.zeros((eg.my + 1, eg.mx))
    ay[1:-1] = 0.5 * (m[1:, :, 1] + m[:-1, :, 1])
    return ax, ay


def face_average_adjoint(fx: np.ndarray, fy: np.ndarray, eg: EulerianGrid) -> np.ndarray:
    out = np.zeros(eg.shape + (2,))
    out[:, 1:, 0] += 0.5 * fx[:, 1:-1]
    out[:, :-1, 0] += 0.5 * fx[:, 1:-1]
    out[1:, :, 1] += 0.5 * fy[1:-1]
    out[:-1, :, 1] += 0.5 * fy[1:-1]
    return out


def source_term(m: np.ndarray, eg: EulerianGrid) -> np.ndarray:
    """Right-hand side b = -G^T W A m."""
    ax, ay = face_average(m, eg)
    wx, wy = face_weights(eg)
    return -face_gradient_adjoint(wx * ax, wy * ay, eg)


def stiffness_apply(u: np.ndarray, eg: EulerianGrid) -> np.ndarray:
    return laplacian_apply(np.ascontiguousarray(u), eg.hx, eg.hy)


# ---------------------------------------------------------------- solvers

@dataclass
class StrayFieldSolution:
    u: np.ndarray  # (my, mx)
    grad_x: np.ndarray  # face normal derivatives
    grad_y: np.ndarray
    E_mag: float
    residual: float  # ||K u - b|| / ||b||
    iterations: int
    method: str

    def cell_field(self) -> np.ndarray:
        """Du averaged from faces to cell centers, (my, mx, 2)."""
        return np.stack([0.5 * (self.grad_x[:, 1:] + self.grad_x[:, :-1]),
                         0.5 * (self.grad_y[1:] + self.grad_y[:-1])], axis=-1)


def _dst_eigenvalues(eg: EulerianGrid) -> np.ndarray:
    kx = np.arange(1, eg.mx + 1)
    ky = np.arange(1, eg.my + 1)
    lx = 4.0 * np.sin(np.pi * kx / (2 * eg.mx)) ** 2 * (eg.hy / eg.hx)
    ly = 4.0 * np.sin(np.pi * ky / (2 * eg.my)) ** 2 * (eg.hx / eg.hy)
    return ly[:, None] + lx[None, :]


def _solve_dst(b: np.ndarray, eg: EulerianGrid) -> np.ndarray:
    bh = sfft.dstn(b, type=2)
    return sfft.idstn(bh / _dst_eigenvalues(eg), type=2)


def _solve_cg(b: np.ndarray, eg: EulerianGrid, tol: float, maxiter: int) -> tuple[np.ndarray, int]:
    n = eg.n_cells
    op = LinearOperator((n, n), matvec=lambda v: stiffness_apply(v.reshape(eg.shape), eg).ravel(), dtype=np.float64)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(op, b.ravel(), rtol=tol, atol=0.0, maxiter=maxiter, callback=cb)
    return x.reshape(eg.shape), count[0]


def solve_stray_field(m: np.ndarray, eg: EulerianGrid, method: str = "dst", tol: float = 1e-12,
                      maxiter: int = 10000, residual_cap: float = 1e-10) -> StrayFieldSolution:
    """Solve the discrete magnetostatic problem for the Eulerian field ``m`` (my, mx, 2)."""
    m = np.asarray(m, dtype=np.float64).reshape(eg.shape + (2,))
    b = source_term(m, eg)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        z = np.zeros(eg.shape)
        gx, gy = face_gradient(z, eg)
        return StrayFieldSolution(z, gx, gy, 0.0, 0.0, 0, method)
    if method == "dst":
        u, its = _solve_dst(b, eg), 1
    elif method == "cg":
        u, its = _solve_cg(b, eg, tol, maxiter)
    else:
        raise ConfigurationError(f"unknown Maxwell solver {method!r}")
    res = float(np.linalg.norm(stiffness_apply(u, eg) - b)) / nb
    if res > residual_cap:
        raise SolverError(f"stray-field solve did not converge: relative residual {res:.3e} after {its} iterations", res)
    gx, gy = face_gradient(u, eg)
    wx, wy = face_weights(eg)
    E = 0.5 * float(np.sum(wx * gx * gx) + np.sum(wy * gy * gy))
    return StrayFieldSolution(u, gx, gy, E, res, its, method)


def magnetization_gradient(sol: StrayFieldSolution, eg: EulerianGrid) -> np.ndarray:
    """dE_mag/dm per Eulerian cell, (my, mx, 2); equals -A^T W G u."""
    wx, wy = face_weights(eg)
    return -face_average_adjoint(wx * sol.grad_x, wy * sol.grad_y, eg)


# ---------------------------------------------------------------- point-sampled magnetization

@dataclass
class Rasterization:
    m: np.ndarray  # (my, mx, 2)
    multiplicity: np.ndarray  # (my, mx) preimage counts
    cell: np.ndarray  # (my, mx) first preimage cell or -1
    s: np.ndarray  # (my, mx, 2) local coordinates of that preimage

    @property
    def flagged(self) -> int:
        return int(np.count_nonzero(self.multiplicity > 1))


def _bilinear_parts(corners: np.ndarray):
    a = corners[..., 0, :]
    b = corners[..., 1, :] - a
    c = corners[..., 2, :] - a
    d = corners[..., 3, :] - corners[..., 1, :] - corners[..., 2, :] + a
    return a, b, c, d


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def preimages(state: State, eg: EulerianGrid):
    """All (Eulerian cell, reference cell, local coords) incidences of the image."""
    return locate_preimages(state.corners(), eg.origin[0], eg.origin[1], eg.hx, eg.hy, eg.mx, eg.my)


def rasterize_magnetization(state: State, eg: EulerianGrid) -> Rasterization:
    """m = z / det Dy at the first (lowest cell index) preimage of each Eulerian center."""
    g = state.grid
    eg.require_inside(state.y, cells=1.0)
    pt, cell, s = preimages(state, eg)
    n = eg.n_cells
    mult = np.bincount(pt, minlength=n)
    first = np.ones(len(pt), dtype=bool)
    first[1:] = pt[1:] != pt[:-1]
    pt, cell, s = pt[first], cell[first], s[first]
    corners = state.corners()[cell]
    _, b, c, d = _bilinear_parts(corners)
    j = _cross(b + d * s[:, 1:2], c + d * s[:, 0:1])
    J = j / g.cell_area
    m = np.zeros((n, 2))
    m[pt] = state.z[cell] / J[:, None]
    cell_map = np.full(n, -1, dtype=np.int64)
    cell_map[pt] = cell
    s_map = np.zeros((n, 2))
    s_map[pt] = s
    return Rasterization(m.reshape(eg.shape + (2,)), mult.reshape(eg.shape), cell_map.reshape(eg.shape),
                         s_map.reshape(eg.shape + (2,)))


def _sample_chain(state: State, ras: Rasterization, gm: np.ndarray):
    """Pull dE/dm back through the point-sampled magnetization (implicit preimage sensitivity)."""
    g = state.grid
    cell = ras.cell.ravel()
    on = cell >= 0
    pt = np.flatnonzero(on)
    cell = cell[on]
    s = ras.s.reshape(-1, 2)[pt]
    gme = gm.reshape(-1, 2)[pt]
    corners = state.corners()[cell]
    _, b, c, d = _bilinear_parts(corners)
    Mcols = np.stack([b + d * s[:, 1:2], c + d * s[:, 0:1]], axis=-1)  # (n, i, k) = dY_i/ds_k
    j = Mcols[:, 0, 0] * Mcols[:, 1, 1] - Mcols[:, 0, 1] * Mcols[:, 1, 0]
    cof = np.stack([np.stack([Mcols[:, 1, 1], -Mcols[:, 1, 0]], -1),
                    np.stack([-Mcols[:, 0, 1], Mcols[:, 0, 0]], -1)], axis=1)
    grad_s_j = np.stack([_cross(b, d), _cross(d, c)], axis=-1)  # (n, 2)
    MinvT = cof / j[:, None, None]
    N = shape_values(s)  # (n, 4)
    dN = shape_derivs(s)  # (n, 4, 2)
    dj = np.einsum("nik,nak->nai", cof, dN) - N[:, :, None] * np.einsum("nik,nk->ni", MinvT, grad_s_j)[:, None, :]
    z = state.z[cell]
    m = z * (g.cell_area / j)[:, None]
    gm_dot_m = np.einsum("ni,ni->n", gme, m)
    per_corner = -(gm_dot_m / j)[:, None, None] * dj
    gy = np.zeros((g.n_nodes, 2))
    nodes = g.cell_nodes[cell]
    for k in range(2):
        gy[:, k] = np.bincount(nodes.ravel(), per_corner[..., k].ravel(), g.n_nodes)
    gth = np.bincount(cell, np.einsum("ni,ni->n", gme, director_perp(state.theta[cell])) * g.cell_area / j, g.n_cells)
    return gy, gth


# ---------------------------------------------------------------- smooth deposit

_SUB = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


def _box_args(eg: EulerianGrid):
    return eg.origin[0], eg.origin[1], eg.hx, eg.hy, eg.mx, eg.my


def deposit_magnetization(state: State, eg: EulerianGrid) -> np.ndarray:
    """Smooth Eulerian magnetization from the pushed-forward moment ``z dx``.

    Each reference cell carries moment ``z * cell_area`` split over four
    sub-cell points; each point spreads onto Eulerian cells with a tensor
    quadratic B-spline, so the total moment is conserved and the result is
    C^1 in the deformation.
    """
    g = state.grid
    eg.require_inside(state.y, cells=2.0)
    pts = (shape_values(_SUB) @ state.corners()).reshape(-1, 2)
    coef = 0.25 * g.cell_area / eg.cell_area
    vals = np.repeat(state.z, 4, axis=0) * coef
    return bspline_deposit(pts, vals, *_box_args(eg)).reshape(eg.shape + (2,))


def _deposit_chain(state: State, eg: EulerianGrid, gm: np.ndarray):
    g = state.grid
    N = shape_values(_SUB)
    pts = (N @ state.corners()).reshape(-1, 2)
    coef = 0.25 * g.cell_area / eg.cell_area
    zq = np.repeat(state.z, 4, axis=0)
    zpq = np.repeat(director_perp(state.theta), 4, axis=0)
    dp, gth_pts = bspline_deposit_adjoint(pts, zq, zpq, gm, *_box_args(eg))
    gth = coef * gth_pts.reshape(g.n_cells, 4).sum(axis=1)
    gy = scatter_nodes(g, N.T[None] @ (coef * dp.reshape(g.n_cells, 4, 2)))
    return gy, gth


# ---------------------------------------------------------------- context

@dataclass
class MaxwellContext:
    """Fixed Eulerian box plus solver settings shared by all energy evaluations."""

    eg: EulerianGrid
    source: str = "deposit"
    method: str = "dst"
    tol: float = 1e-12
    maxiter: int = 10000
    residual_cap: float = 1e-10
    max_residual: float = 0.0  # largest relative residual seen so far
    solves: int = 0

    def __post_init__(self):
        if self.source not in ("deposit", "sample"):
            raise ConfigurationError(f"unknown magnetization source {self.source!r}")
        if self.method not in ("dst", "cg"):
            raise ConfigurationError(f"unknown Maxwell solver {self.method!r}")

    def magnetization(self, state: State) -> np.ndarray:
        if self.source == "deposit":
            return deposit_magnetization(state, self.eg)
        return rasterize_magnetization(state, self.eg).m

    def energy(self, state: State, with_grad: bool = True):
        """(E_mag, gy, gth, solution)."""
        if self.source == "deposit":
            m = deposit_magnetization(state, self.eg)
            ras = None
        else:
            ras = rasterize_magnetization(state, self.eg)
            m = ras.m
        sol = solve_stray_field(m, self.eg, self.method, self.tol, self.maxiter, self.residual_cap)
        self.max_residual = max(self.max_residual, sol.residual)
        self.solves += 1
        if not with_grad:
            return sol.E_mag, None, None, sol
        gy, gth = magnetostatic_gradient(state, sol, self.eg, self.source, ras)
        return sol.E_mag, gy, gth, sol


def magnetostatic_gradient(state: State, sol: StrayFieldSolution, eg: EulerianGrid, source: str = "deposit",
                           ras: Rasterization | None = None):
    """Gradient of E_mag with respect to nodal positions and director angles."""
    gm = magnetization_gradient(sol, eg)
    if source == "deposit":
        return _deposit_chain(state, eg, gm)
    if ras is None:
        ras = rasterize_magnetization(state, eg)
    return _sample_chain(state, ras, gm)
