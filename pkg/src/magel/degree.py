"""Winding-number degree, topological and geometric images, multiplicity.

Degrees are computed on Eulerian cell centers against the closed polyline
obtained by sampling the deformation on the boundary of a reference
subdomain.  Multiplicities count preimages found by inverse bilinear solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from ._backend import polyline_distance, winding_numbers
from .errors import OnBoundaryError, PreconditionError
from .grid import RefGrid, State, evaluate, integrate, shape_values
from .maxwell import EulerianGrid, preimages

BAND_DIAGONALS = 1.5


# ---------------------------------------------------------------- subdomains

@dataclass(frozen=True)
class Ball:
    center: tuple[float, float]
    radius: float

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1]) < self.radius

    def boundary(self, spacing: float, min_points: int = 64) -> np.ndarray:
        n = max(min_points, int(np.ceil(2 * np.pi * self.radius / spacing)))
        t = np.linspace(0.0, 2 * np.pi, n + 1)
        pts = np.stack([self.center[0] + self.radius * np.cos(t), self.center[1] + self.radius * np.sin(t)], axis=1)
        pts[-1] = pts[0]
        return pts

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return (x[:, 0] > self.lo[0]) & (x[:, 0] < self.hi[0]) & (x[:, 1] > self.lo[1]) & (x[:, 1] < self.hi[1])

    def boundary(self, spacing: float, min_points: int = 64) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lo, self.hi
        per = 2 * ((x1 - x0) + (y1 - y0))
        n = max(min_points, int(np.ceil(per / spacing)))
        corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])
        out = []
        for a, b in zip(corners[:-1], corners[1:]):
            k = max(1, int(np.ceil(n * np.linalg.norm(b - a) / per)))
            t = np.linspace(0.0, 1.0, k + 1)[:-1]
            out.append(a[None] + t[:, None] * (b - a)[None])
        out.append(corners[:1])
        return np.concatenate(out)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo, dtype=np.float64), np.asarray(self.hi, dtype=np.float64)


def require_compactly_contained(U, grid: RefGrid) -> None:
    lo, hi = U.bbox()
    glo = np.asarray(grid.origin)
    ghi = glo + np.asarray(grid.extent)
    if np.any(lo <= glo) or np.any(hi >= ghi):
        raise PreconditionError("subdomain U is not compactly contained in the reference domain")


def boundary_polyline(state: State, U, spacing: float | None = None) -> np.ndarray:
    """Closed polyline y(dU), sampled at reference spacing <= h/4."""
    g = state.grid
    if spacing is None:
        spacing = 0.25 * min(g.hx, g.hy)
    xs = U.boundary(spacing)
    return evaluate(g, state.y, xs)


# ---------------------------------------------------------------- winding numbers

def _require_closed(poly: np.ndarray) -> np.ndarray:
    poly = np.asarray(poly, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 4:
        raise PreconditionError("polyline must be an (n, 2) array with at least 3 segments")
    scale = float(np.abs(poly).max()) + 1.0
    if np.max(np.abs(poly[0] - poly[-1])) > 1e-12 * scale:
        raise PreconditionError("polyline is open: first and last point differ")
    poly = poly.copy()
    poly[-1] = poly[0]
    return poly


def winding_degree(poly: np.ndarray, xi, tol_band: float = 0.0) -> int:
    """Integer winding number of the closed polyline around ``xi``."""
    poly = _require_closed(poly)
    xi = np.asarray(xi, dtype=np.float64).reshape(1, 2)
    dist = float(polyline_distance(poly, xi)[0])
    if dist <= tol_band or dist == 0.0:
        raise OnBoundaryError(f"point lies on the boundary image (distance {dist:.3e} <= band {tol_band:.3e})")
    w = float(winding_numbers(poly, xi)[0])
    k = int(np.rint(w))
    if abs(w - k) >= 0.25:
        raise OnBoundaryError(f"winding number {w:.4f} is not close to an integer")
    return k


@dataclass
class DegreeField:
    degree: np.ndarray  # (my, mx) int; 0 inside the band
    band: np.ndarray  # (my, mx) bool, indeterminate cells
    eg: EulerianGrid

    @property
    def mask(self) -> np.ndarray:
        return (self.degree != 0) & ~self.band

    def area(self) -> float:
        return float(np.count_nonzero(self.mask)) * self.eg.cell_area


def degree_field(poly: np.ndarray, eg: EulerianGrid, tol_band: float | None = None) -> DegreeField:
    poly = _require_closed(poly)
    if tol_band is None:
        tol_band = BAND_DIAGONALS * eg.diagonal
    pts = eg.centers()
    lo = poly.min(axis=0) - tol_band
    hi = poly.max(axis=0) + tol_band
    near = np.all((pts >= lo) & (pts <= hi), axis=1)
    deg = np.zeros(len(pts), dtype=np.int64)
    band = np.zeros(len(pts), dtype=bool)
    idx = np.flatnonzero(near)
    if len(idx):
        d = polyline_distance(poly, pts[idx])
        b = d <= tol_band
        band[idx[b]] = True
        off = idx[~b]
        w = winding_numbers(poly, pts[off])
        k = np.rint(w)
        if np.any(np.abs(w - k) >= 0.25):
            raise OnBoundaryError("winding number far from an integer off the boundary band")
        deg[off] = k.astype(np.int64)
    return DegreeField(deg.reshape(eg.shape), band.reshape(eg.shape), eg)


def topological_image(state: State, U, eg: EulerianGrid, tol_band: float | None = None) -> DegreeField:
    """Degree of y on U at every Eulerian cell; the image mask is {degree != 0}."""
    require_compactly_contained(U, state.grid)
    state.require_admissible()
    return degree_field(boundary_polyline(state, U), eg, tol_band)


def flood_fill_consistent(df: DegreeField) -> tuple[bool, int]:
    """Degree must be constant on each connected component off the band."""
    lab, n = ndimage.label(~df.band)
    bad = 0
    for k in range(1, n + 1):
        vals = df.degree[lab == k]
        if vals.min() != vals.max():
            bad += 1
    # the component touching the box edge must carry degree 0
    edge = np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))
    for k in edge[edge > 0]:
        if np.any(df.degree[lab == k] != 0):
            bad += 1
    return bad == 0, bad


# ---------------------------------------------------------------- multiplicity

def _cell_subset(grid: RefGrid, A) -> np.ndarray:
    """Boolean cell mask from None (all cells), a mask, or an index list."""
    if A is None:
        return np.ones(grid.n_cells, dtype=bool)
    A = np.asarray(A)
    if A.dtype == bool:
        if A.shape != (grid.n_cells,):
            raise PreconditionError("cell mask has the wrong length")
        return A
    mask = np.zeros(grid.n_cells, dtype=bool)
    mask[A.astype(np.int64)] = True
    return mask


def multiplicity(state: State, eg: EulerianGrid, A=None, region: Callable | None = None) -> np.ndarray:
    """Number of preimages of each Eulerian center among cells of ``A``.

    ``region`` optionally restricts preimages to reference points ``x`` with
    ``region(x)`` true (used for a ball U that cuts through cells).
    """
    g = state.grid
    cells = _cell_subset(g, A)
    good = cells & np.all(state.jacobians() > 0, axis=1)
    pt, cell, s = preimages(state, eg)
    keep = good[cell]
    if region is not None:
        x = g.cell_origins[cell] + s * np.array([g.hx, g.hy])
        keep &= region(x)
    return np.bincount(pt[keep], minlength=eg.n_cells).reshape(eg.shape)


def geometric_image_and_multiplicity(state: State, A, eg: EulerianGrid) -> tuple[np.ndarray, np.ndarray]:
    mult = multiplicity(state, eg, A)
    return mult >= 1, mult


@dataclass
class DegMultReport:
    discrepancy: int
    compared_cells: int
    max_degree: int
    degree: DegreeField
    multiplicity: np.ndarray


def compare_deg_mult(state: State, U, eg: EulerianGrid, tol_band: float | None = None) -> DegMultReport:
    df = topological_image(state, U, eg, tol_band)
    mult = multiplicity(state, eg, None, U.contains)
    off = ~df.band
    diff = np.abs(df.degree - mult)[off]
    return DegMultReport(int(diff.max()) if diff.size else 0, int(off.sum()), int(np.abs(df.degree).max()), df, mult)


def verify_deg_eq_mult(state: State, U, eg: EulerianGrid, tol_band: float | None = None) -> int:
    """Max |deg - mult| over Eulerian cells off the boundary band."""
    return compare_deg_mult(state, U, eg, tol_band).discrepancy


# ---------------------------------------------------------------- integral identities

def change_of_variable(state: State, A, psi: Callable[[np.ndarray], np.ndarray], eg: EulerianGrid):
    """(lhs, rhs, |lhs - rhs|) for int_A psi(y) det Dy dx against the multiplicity sum."""
    g = state.grid
    cells = _cell_subset(g, A)
    N = shape_values(g.quad[0])
    yq = np.einsum("qa,cai->cqi", N, state.corners())
    J = state.jacobians()
    vals = np.asarray(psi(yq.reshape(-1, 2)), dtype=np.float64).reshape(J.shape) * J
    vals[~cells] = 0.0
    lhs = integrate(g, vals)
    mult = multiplicity(state, eg, cells)
    pv = np.asarray(psi(eg.centers()), dtype=np.float64).reshape(eg.shape)
    rhs = float(np.sum(pv * mult) * eg.cell_area)
    return lhs, rhs, abs(lhs - rhs)


def ciarlet_necas_residual(state: State, eg: EulerianGrid) -> float:
    """int det Dy dx minus the rasterized measure of the geometric image."""
    state.require_admissible()
    total = integrate(state.grid, state.jacobians())
    mask, _ = geometric_image_and_multiplicity(state, None, eg)
    return total - float(np.count_nonzero(mask)) * eg.cell_area


def multiplicity_flags(state: State, eg: EulerianGrid) -> int:
    """Number of Eulerian cells covered more than once."""
    return int(np.count_nonzero(multiplicity(state, eg) > 1))


def nested_image_violations(state: State, balls: Sequence[Ball], eg: EulerianGrid) -> int:
    """Cells of im_T(y, B_k+1) outside im_T(y, B_k) for balls listed inner to outer,
    ignoring each outer ball's boundary band."""
    fields = [topological_image(state, B, eg) for B in balls]
    bad = 0
    for inner, outer in zip(fields[:-1], fields[1:]):
        bad += int(np.count_nonzero(inner.mask & ~outer.mask & ~outer.band))
    return bad
