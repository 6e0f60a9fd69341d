"""Reference grid, Q1 deformations, per-cell directors and quadrature.

Node ``k = j*(nx+1) + i`` sits at ``origin + (i*hx, j*hy)``; cell ``c = j*nx + i``
has corner nodes ordered (s1, s2) = (0,0), (1,0), (0,1), (1,1) in local
coordinates ``s`` in the unit square.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InadmissibleStateError, PreconditionError

_G = 0.5 / np.sqrt(3.0)
QUADRATURE_RULES = {
    "gauss2": (
        np.array([[0.5 - _G, 0.5 - _G], [0.5 + _G, 0.5 - _G], [0.5 - _G, 0.5 + _G], [0.5 + _G, 0.5 + _G]]),
        np.full(4, 0.25),
    ),
    "midpoint": (np.array([[0.5, 0.5]]), np.ones(1)),
}


def shape_values(s: np.ndarray) -> np.ndarray:
    """Q1 shape functions at local points ``s`` (..., 2) -> (..., 4)."""
    s1, s2 = s[..., 0], s[..., 1]
    return np.stack([(1 - s1) * (1 - s2), s1 * (1 - s2), (1 - s1) * s2, s1 * s2], axis=-1)


def shape_derivs(s: np.ndarray) -> np.ndarray:
    """d N_a / d s_k at local points ``s`` (..., 2) -> (..., 4, 2)."""
    s1, s2 = s[..., 0], s[..., 1]
    d1 = np.stack([-(1 - s2), (1 - s2), -s2, s2], axis=-1)
    d2 = np.stack([-(1 - s1), -s1, (1 - s1), s1], axis=-1)
    return np.stack([d1, d2], axis=-1)


@dataclass(frozen=True)
class RefGrid:
    """Rectangular reference domain split into ``nx`` x ``ny`` cells."""

    nx: int
    ny: int
    origin: tuple[float, float] = (0.0, 0.0)
    extent: tuple[float, float] = (1.0, 1.0)
    quadrature: str = "gauss2"

    @property
    def hx(self) -> float:
        return self.extent[0] / self.nx

    @property
    def hy(self) -> float:
        return self.extent[1] / self.ny

    @property
    def h(self) -> float:
        return self.hx

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.cell_area * self.n_cells

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @cached_property
    def nodes(self) -> np.ndarray:
        xs = self.origin[0] + self.hx * np.arange(self.nx + 1)
        ys = self.origin[1] + self.hy * np.arange(self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        n00 = (j * (self.nx + 1) + i).ravel()
        return np.stack([n00, n00 + 1, n00 + self.nx + 1, n00 + self.nx + 2], axis=1)

    @cached_property
    def cell_origins(self) -> np.ndarray:
        return self.nodes[self.cell_nodes[:, 0]]

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.cell_origins + 0.5 * np.array([self.hx, self.hy])

    @cached_property
    def quad(self) -> tuple[np.ndarray, np.ndarray]:
        """Local quadrature points and weights summing to one."""
        return QUADRATURE_RULES[self.quadrature]

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Reference coordinates of every quadrature point, shape (nc, nq, 2)."""
        s, _ = self.quad
        return self.cell_origins[:, None, :] + s[None] * np.array([self.hx, self.hy])

    def grad_basis(self, s: np.ndarray) -> np.ndarray:
        """d N_a / d x_k at local points ``s`` (..., 2) -> (..., 4, 2)."""
        return shape_derivs(s) / np.array([self.hx, self.hy])

    @cached_property
    def quad_grad_basis(self) -> np.ndarray:
        return self.grad_basis(self.quad[0])

    @cached_property
    def center_grad_basis(self) -> np.ndarray:
        return self.grad_basis(np.array([0.5, 0.5]))

    def boundary_edges(self, names) -> np.ndarray:
        """Node pairs (n_edges, 2) along the named sides of the rectangle."""
        nx, ny = self.nx, self.ny
        out = []
        for name in names:
            if name == "bottom":
                a = np.arange(nx)
                out.append(np.stack([a, a + 1], axis=1))
            elif name == "top":
                a = ny * (nx + 1) + np.arange(nx)
                out.append(np.stack([a, a + 1], axis=1))
            elif name == "left":
                a = np.arange(ny) * (nx + 1)
                out.append(np.stack([a, a + nx + 1], axis=1))
            elif name == "right":
                a = np.arange(ny) * (nx + 1) + nx
                out.append(np.stack([a, a + nx + 1], axis=1))
            else:
                raise ConfigurationError(f"unknown boundary side {name!r}")
        if not out:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(out).astype(np.int64)

    def boundary_nodes(self) -> np.ndarray:
        e = self.boundary_edges(("bottom", "right", "top", "left"))
        return np.unique(e)

    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes()] = False
        return np.flatnonzero(mask)

    def locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and local coordinates of reference points ``x`` (n, 2)."""
        x = np.atleast_2d(x)
        r = (x - np.asarray(self.origin)) / np.array([self.hx, self.hy])
        i = np.clip(np.floor(r[:, 0]).astype(np.int64), 0, self.nx - 1)
        j = np.clip(np.floor(r[:, 1]).astype(np.int64), 0, self.ny - 1)
        s = r - np.stack([i, j], axis=1)
        return j * self.nx + i, s

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(x)
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.extent)
        return np.all((x >= lo - tol) & (x <= hi + tol), axis=1)


def build_grid(nx: int, ny: int, origin=(0.0, 0.0), extent=(1.0, 1.0), quadrature: str = "gauss2") -> RefGrid:
    if nx < 2:
        raise ConfigurationError("nx too small (need nx >= 2)")
    if ny < 2:
        raise ConfigurationError("ny too small (need ny >= 2)")
    if extent[0] <= 0 or extent[1] <= 0:
        raise ConfigurationError("extent must be positive")
    if quadrature not in QUADRATURE_RULES:
        raise ConfigurationError(f"unknown quadrature rule {quadrature!r}")
    return RefGrid(int(nx), int(ny), (float(origin[0]), float(origin[1])),
                   (float(extent[0]), float(extent[1])), quadrature)


@dataclass
class State:
    """Nodal deformation ``y`` (n_nodes, 2) and per-cell director angle ``theta``."""

    grid: RefGrid
    y: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.y = np.array(self.y, dtype=np.float64).reshape(self.grid.n_nodes, 2)
        self.theta = np.array(self.theta, dtype=np.float64).reshape(self.grid.n_cells)

    @property
    def z(self) -> np.ndarray:
        return director(self.theta)

    def copy(self) -> "State":
        return State(self.grid, self.y.copy(), self.theta.copy())

    def corners(self) -> np.ndarray:
        """Deformed cell corners (nc, 4, 2)."""
        return self.y[self.grid.cell_nodes]

    def gradients(self) -> np.ndarray:
        """Dy at every quadrature point, shape (nc, nq, 2, 2)."""
        return cell_gradients(self.grid, self.y, self.grid.quad_grad_basis)

    def jacobians(self) -> np.ndarray:
        F = self.gradients()
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]

    def is_admissible(self, floor: float = 0.0) -> bool:
        return bool(np.all(self.jacobians() > floor))

    def require_admissible(self) -> None:
        J = self.jacobians()
        if not np.all(J > 0):
            bad = int(np.count_nonzero(J <= 0))
            raise InadmissibleStateError(f"inadmissible state: det Dy <= 0 at {bad} quadrature points")

    def magnetization_pullback(self) -> np.ndarray:
        """m o y = z / det Dy at every quadrature point, shape (nc, nq, 2)."""
        return self.z[:, None, :] / self.jacobians()[..., None]


def director(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def director_perp(theta: np.ndarray) -> np.ndarray:
    """d z / d theta."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)


def identity_state(grid: RefGrid, theta: float | np.ndarray = 0.0) -> State:
    th = np.broadcast_to(np.asarray(theta, dtype=np.float64), (grid.n_cells,)).copy()
    return State(grid, grid.nodes.copy(), th)


def state_from_map(grid: RefGrid, ymap: Callable[[np.ndarray], np.ndarray], theta=0.0) -> State:
    """Sample a closed-form deformation at the nodes."""
    th = np.broadcast_to(np.asarray(theta, dtype=np.float64), (grid.n_cells,)).copy()
    return State(grid, np.asarray(ymap(grid.nodes.copy()), dtype=np.float64), th)


def cell_gradients(grid: RefGrid, y: np.ndarray, dN: np.ndarray) -> np.ndarray:
    """Dy for every cell at local points with basis gradients ``dN`` (nq, 4, 2) or (4, 2)."""
    Yt = np.swapaxes(y[grid.cell_nodes], 1, 2)  # (nc, 2, 4)
    if dN.ndim == 2:
        return Yt @ dN
    return Yt[:, None] @ dN[None]


def scatter_nodes(grid: RefGrid, per_corner: np.ndarray) -> np.ndarray:
    """Sum per-cell corner contributions (nc, 4, 2) into nodal arrays (n_nodes, 2)."""
    idx = grid.cell_nodes.ravel()
    out = np.empty((grid.n_nodes, 2))
    flat = per_corner.reshape(-1, 2)
    out[:, 0] = np.bincount(idx, weights=flat[:, 0], minlength=grid.n_nodes)
    out[:, 1] = np.bincount(idx, weights=flat[:, 1], minlength=grid.n_nodes)
    return out


def pull_gradient(grid: RefGrid, dE_dF: np.ndarray, dN: np.ndarray) -> np.ndarray:
    """Chain d E / d Dy (nc, nq, 2, 2) or (nc, 2, 2) back to nodal positions."""
    dNt = np.swapaxes(dN, -1, -2)
    if dE_dF.ndim == 3:
        per_corner = dE_dF @ dNt
    else:
        per_corner = (dE_dF @ dNt[None]).sum(axis=1)
    return scatter_nodes(grid, np.swapaxes(per_corner, 1, 2))


def deformation_gradient(grid: RefGrid, y: np.ndarray, cell: int, qp) -> np.ndarray:
    """Dy of the bilinear interpolant in ``cell`` at local point ``qp`` in [0,1]^2."""
    if not 0 <= cell < grid.n_cells:
        raise IndexError(f"cell {cell} out of range")
    dN = grid.grad_basis(np.asarray(qp, dtype=np.float64))
    return np.einsum("ai,ak->ik", np.asarray(y)[grid.cell_nodes[cell]], dN)


def evaluate(grid: RefGrid, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the Q1 interpolant of ``y`` at reference points ``x`` (n, 2)."""
    cell, s = grid.locate(x)
    N = shape_values(s)
    return np.einsum("na,nai->ni", N, np.asarray(y)[grid.cell_nodes[cell]])


def minors(F: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (F, cof F, det F); works on stacks of 2x2 matrices."""
    F = np.asarray(F, dtype=np.float64)
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    cof = np.empty_like(F)
    cof[..., 0, 0] = F[..., 1, 1]
    cof[..., 0, 1] = -F[..., 1, 0]
    cof[..., 1, 0] = -F[..., 0, 1]
    cof[..., 1, 1] = F[..., 0, 0]
    return F, cof, det


def adjugate(F: np.ndarray) -> np.ndarray:
    return np.swapaxes(minors(F)[1], -1, -2)


def integrate(grid: RefGrid, values: np.ndarray) -> float:
    """Quadrature sum of per-(cell, qp) values."""
    _, w = grid.quad
    return float(np.sum(values * w[None, :]) * grid.cell_area)


def check_div_identities(grid: RefGrid, y: np.ndarray, psi, div_psi, phi, grad_phi,
                         boundary_tol: float = 1e-10) -> float:
    """Residual of the divergence identity for the Q1 map ``y``.

    ``psi``/``div_psi`` act on deformed points (n, 2); ``phi``/``grad_phi`` on
    reference points and ``phi`` must vanish on the boundary of the domain.
    """
    t = np.linspace(0.0, 1.0, 8 * max(grid.nx, grid.ny) + 1)
    ox, oy = grid.origin
    ex, ey = grid.extent
    ring = np.concatenate([
        np.stack([ox + ex * t, np.full_like(t, oy)], 1),
        np.stack([ox + ex * t, np.full_like(t, oy + ey)], 1),
        np.stack([np.full_like(t, ox), oy + ey * t], 1),
        np.stack([np.full_like(t, ox + ex), oy + ey * t], 1),
    ])
    if np.max(np.abs(phi(ring))) > boundary_tol:
        raise PreconditionError("test function phi must vanish on the boundary")

    y = np.asarray(y, dtype=np.float64)
    s, _ = grid.quad
    xq = grid.quad_points.reshape(-1, 2)
    N = shape_values(s)
    yq = np.einsum("qa,cai->cqi", N, y[grid.cell_nodes]).reshape(-1, 2)
    F = cell_gradients(grid, y, grid.quad_grad_basis).reshape(-1, 2, 2)
    adj = adjugate(F)
    det = minors(F)[2]
    lhs_int = -np.einsum("nij,nj,ni->n", adj, psi(yq), grad_phi(xq))
    rhs_int = div_psi(yq) * det * phi(xq)
    shape = grid.quad_points.shape[:2]
    return abs(integrate(grid, lhs_int.reshape(shape)) - integrate(grid, rhs_int.reshape(shape)))
