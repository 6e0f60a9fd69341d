"""Energy terms of the magnetoelastic model and their gradients.

All gradient-returning functions give ``(value, gy, gth)`` with ``gy`` of
shape (n_nodes, 2) and ``gth`` of shape (n_cells,).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sps

from . import fields as fl
from .errors import ConfigurationError, InadmissibleStateError
from .grid import RefGrid, State, cell_gradients, director, director_perp, pull_gradient, scatter_nodes, shape_values

EDGES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class MaterialParams:
    alpha: float = 1.0
    beta: float = 1.0
    p: float = 2.0
    a: float = 2.0
    c_phi: float = 1.0
    eps_d: float = 1e-4

    def __post_init__(self):
        errs = []
        if not self.alpha > 0:
            errs.append("alpha must be > 0")
        if not self.beta > 0:
            errs.append("beta must be > 0")
        if not self.p > 1:
            errs.append("p must be > 1")
        if not self.a >= 1:
            errs.append("a must be >= 1")
        if not self.c_phi >= 0:
            errs.append("c_phi must be >= 0")
        if not self.eps_d >= 0:
            errs.append("eps_d must be >= 0")
        if errs:
            raise ConfigurationError("; ".join(errs))

    def l_inverse(self, z: np.ndarray) -> np.ndarray:
        """L(z)^-1 = zz/alpha + (I - zz)/beta for unit vectors (..., 2)."""
        zz = z[..., :, None] * z[..., None, :]
        return zz / self.alpha + (np.eye(2) - zz) / self.beta


@dataclass
class EnergyBreakdown:
    E_el: float
    E_exc: float
    E_mag: float
    L_work: float
    B_pen: float
    F_total: float = field(init=False)

    def __post_init__(self):
        self.F_total = self.E_el + self.E_exc + self.E_mag - self.L_work + self.B_pen

    def as_dict(self) -> dict:
        return {"E_el": self.E_el, "E_exc": self.E_exc, "E_mag": self.E_mag,
                "L": self.L_work, "B": self.B_pen, "F": self.F_total}


# ---------------------------------------------------------------- elastic

def phi_density(Xi: np.ndarray, p: float, a: float) -> np.ndarray:
    """Phi(Xi) = |Xi|^p + (det Xi)^-a, +inf where det Xi <= 0."""
    n2 = np.einsum("...ij,...ij->...", Xi, Xi)
    det = Xi[..., 0, 0] * Xi[..., 1, 1] - Xi[..., 0, 1] * Xi[..., 1, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = n2 ** (0.5 * p) + np.where(det > 0, det, np.nan) ** (-a)
    return np.where(det > 0, val, np.inf)


def stored_energy(F: np.ndarray, z: np.ndarray, params: MaterialParams) -> np.ndarray:
    """W(F, z/det F) = Phi(L(z)^-1 F) for stacks of F and unit z."""
    return phi_density(params.l_inverse(z) @ F, params.p, params.a)


def _check_jacobians(J: np.ndarray) -> None:
    if not np.all(J > 0):
        raise InadmissibleStateError(f"inadmissible state: det Dy <= 0 at {int(np.count_nonzero(~(J > 0)))} quadrature points")


def elastic_energy(state: State, params: MaterialParams, with_grad: bool = True):
    grid = state.grid
    F = state.gradients()  # (nc, nq, 2, 2)
    detF = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    _check_jacobians(detF)
    z = state.z
    Linv = params.l_inverse(z)[:, None]
    Xi = Linv @ F
    n2 = np.einsum("cqij,cqij->cq", Xi, Xi)
    detXi = detF / (params.alpha * params.beta)
    phi = n2 ** (0.5 * params.p) + detXi ** (-params.a)
    wq = grid.quad[1] * grid.cell_area
    E = float(np.sum(phi * wq))
    if not with_grad:
        return E, None, None
    XiInvT = np.empty_like(Xi)
    XiInvT[..., 0, 0] = Xi[..., 1, 1]
    XiInvT[..., 0, 1] = -Xi[..., 1, 0]
    XiInvT[..., 1, 0] = -Xi[..., 0, 1]
    XiInvT[..., 1, 1] = Xi[..., 0, 0]
    XiInvT /= detXi[..., None, None]
    dPhi = (params.p * n2 ** (0.5 * params.p - 1.0))[..., None, None] * Xi \
        - (params.a * detXi ** (-params.a))[..., None, None] * XiInvT
    dPhi *= wq[None, :, None, None]
    dF = Linv @ dPhi  # L^-1 symmetric
    gy = pull_gradient(grid, dF, grid.quad_grad_basis)
    zp = director_perp(state.theta)
    dL = (1.0 / params.alpha - 1.0 / params.beta) * (zp[:, :, None] * z[:, None, :] + z[:, :, None] * zp[:, None, :])
    gth = np.einsum("cij,cij->c", (dPhi @ np.swapaxes(F, -1, -2)).sum(axis=1), dL)
    return E, gy, gth


# ---------------------------------------------------------------- exchange

def _diff_1d(n: int, h: float) -> sps.csr_matrix:
    """Central differences between cell values, one-sided at both ends."""
    rows, cols, vals = [], [], []
    for i in range(n):
        if i == 0:
            rows += [i, i]; cols += [0, 1]; vals += [-1.0 / h, 1.0 / h]
        elif i == n - 1:
            rows += [i, i]; cols += [n - 2, n - 1]; vals += [-1.0 / h, 1.0 / h]
        else:
            rows += [i, i]; cols += [i - 1, i + 1]; vals += [-0.5 / h, 0.5 / h]
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


@lru_cache(maxsize=16)
def cell_difference_operators(nx: int, ny: int, hx: float, hy: float):
    """Sparse d/dx1, d/dx2 acting on per-cell arrays in grid order."""
    Dx = sps.kron(sps.identity(ny), _diff_1d(nx, hx), format="csr")
    Dy = sps.kron(_diff_1d(ny, hy), sps.identity(nx), format="csr")
    return Dx, Dy


def exchange_energy(state: State, with_grad: bool = True):
    """Lagrangian form of the exchange energy, one value per cell."""
    grid = state.grid
    Dx, Dy = cell_difference_operators(grid.nx, grid.ny, grid.hx, grid.hy)
    dN = grid.center_grad_basis
    F = cell_gradients(grid, state.y, dN)  # (nc, 2, 2)
    J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    _check_jacobians(J)
    z = state.z
    M = z / J[:, None]
    G = np.stack([np.stack([Dx @ M[:, i], Dy @ M[:, i]], axis=1) for i in range(2)], axis=1)  # (nc, i, k)
    FinvT = np.empty_like(F)
    FinvT[:, 0, 0] = F[:, 1, 1]
    FinvT[:, 0, 1] = -F[:, 1, 0]
    FinvT[:, 1, 0] = -F[:, 0, 1]
    FinvT[:, 1, 1] = F[:, 0, 0]
    FinvT /= J[:, None, None]
    K = G @ np.swapaxes(FinvT, 1, 2)
    k2 = np.einsum("cij,cij->c", K, K)
    A = grid.cell_area
    E = float(A * np.sum(k2 * J))
    if not with_grad:
        return E, None, None
    dG = 2.0 * A * J[:, None, None] * (K @ FinvT)
    dM = np.stack([Dx.T @ dG[:, i, 0] + Dy.T @ dG[:, i, 1] for i in range(2)], axis=1)
    dJ = A * k2 - np.einsum("ci,ci->c", dM, z) / J**2
    dF = A * J[:, None, None] * (-2.0 * np.swapaxes(K, 1, 2) @ K @ FinvT) + (dJ * J)[:, None, None] * FinvT
    gy = pull_gradient(grid, dF, dN)
    gth = np.einsum("ci,ci->c", dM, director_perp(state.theta)) / J
    return E, gy, gth


# ---------------------------------------------------------------- loads

_GL = 0.5 / np.sqrt(3.0)
EDGE_TAU = np.array([0.5 - _GL, 0.5 + _GL])


@dataclass(frozen=True)
class EdgeSet:
    nodes: np.ndarray  # (ne, 2)
    points: np.ndarray  # (ne, 2 qp, 2) reference coordinates
    weights: np.ndarray  # (ne, 2)
    length: float


def edge_set(grid: RefGrid, sides: Sequence[str]) -> EdgeSet:
    e = grid.boundary_edges(tuple(sides))
    xa, xb = grid.nodes[e[:, 0]], grid.nodes[e[:, 1]]
    pts = xa[:, None] * (1 - EDGE_TAU)[None, :, None] + xb[:, None] * EDGE_TAU[None, :, None]
    ln = np.linalg.norm(xb - xa, axis=1)
    w = 0.5 * ln[:, None] * np.ones((1, 2))
    return EdgeSet(e, pts, w, float(ln.sum()))


def edge_values(es: EdgeSet, y: np.ndarray) -> np.ndarray:
    ya, yb = y[es.nodes[:, 0]], y[es.nodes[:, 1]]
    return ya[:, None] * (1 - EDGE_TAU)[None, :, None] + yb[:, None] * EDGE_TAU[None, :, None]


def edge_scatter(es: EdgeSet, n_nodes: int, g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`edge_values` for per-edge-qp vectors ``g`` (ne, 2, 2)."""
    ga = np.einsum("eqi,q->ei", g, 1 - EDGE_TAU)
    gb = np.einsum("eqi,q->ei", g, EDGE_TAU)
    out = np.zeros((n_nodes, 2))
    for k in range(2):
        out[:, k] = np.bincount(es.nodes[:, 0], ga[:, k], n_nodes) + np.bincount(es.nodes[:, 1], gb[:, k], n_nodes)
    return out


def _side_tuple(sides) -> tuple[str, ...]:
    sides = tuple(sides)
    for s in sides:
        if s not in EDGES:
            raise ConfigurationError(f"unknown boundary side {s!r}; expected a subset of {EDGES}")
    if len(set(sides)) != len(sides):
        raise ConfigurationError("boundary sides listed twice")
    return sides


class LoadSchedule:
    """Loads sampled at knots ``times`` and interpolated linearly in time.

    ``f``, ``g``, ``d`` are fields of the reference point, ``h`` of the
    deformed point.  Each is a list of :class:`fields.VectorField`, one per knot.
    """

    def __init__(self, times, f, g, h, d, gamma=("left",), sigma=()):
        self.times = np.asarray(times, dtype=np.float64)
        if self.times.ndim != 1 or len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("load knots must be strictly increasing with at least two entries")
        if self.times[0] != 0.0:
            raise ConfigurationError("load knots must start at t = 0")
        for name, v in (("f", f), ("g", g), ("h", h), ("d", d)):
            if len(v) != len(self.times):
                raise ConfigurationError(f"load {name} needs one field per knot")
        self.f, self.g, self.h, self.d = list(f), list(g), list(h), list(d)
        self.gamma = _side_tuple(gamma)
        self.sigma = _side_tuple(sigma)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @classmethod
    def from_expressions(cls, times, f=("0", "0"), g=("0", "0"), h=("0", "0"), d=("x1", "x2"),
                         gamma=("left",), sigma=()):
        times = np.asarray(times, dtype=np.float64)
        per = {}
        for name, comp in (("f", f), ("g", g), ("h", h), ("d", d)):
            if fl.expression_depends_on_time(comp):
                per[name] = [fl.vector_expression(comp, float(t)) for t in times]
            else:
                v = fl.vector_expression(comp)
                per[name] = [v] * len(times)
        return cls(times, gamma=gamma, sigma=sigma, **per)

    @classmethod
    def constant(cls, T=1.0, **kw):
        return cls.from_expressions([0.0, T], **kw)

    def locate(self, t: float, side: str = "right") -> tuple[int, float, bool]:
        """Interval index k, fraction lam in [0,1] and knot flag for time ``t``.

        At an interior knot ``side`` picks the interval to its right or left.
        """
        if not (-1e-12 <= t <= self.T + 1e-12):
            raise ConfigurationError(f"time {t} outside [0, {self.T}]")
        t = min(max(t, 0.0), self.T)
        hit = np.flatnonzero(np.abs(self.times - t) <= 1e-12 * max(1.0, self.T))
        at_knot = bool(hit.size)
        if at_knot:
            t = float(self.times[hit[0]])
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        if side == "left" and at_knot and k > 0:
            k -= 1
        k = min(k, len(self.times) - 2)
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, lam, at_knot

    def field_at(self, name: str, t: float) -> fl.VectorField:
        k, lam, _ = self.locate(t)
        v = getattr(self, name)
        if lam == 0.0:
            return v[k]
        if lam == 1.0:
            return v[k + 1]
        return v[k].combine(v[k + 1], 1.0 - lam, lam)

    def rate_at(self, name: str, t: float, side: str = "right") -> fl.VectorField:
        """Time derivative of the interpolated field (one-sided at knots)."""
        k, _, _ = self.locate(t, side)
        v = getattr(self, name)
        if v[k] is v[k + 1]:
            return fl.ZERO
        dt = self.times[k + 1] - self.times[k]
        return v[k + 1].combine(v[k], 1.0 / dt, -1.0 / dt)

    def breakpoints(self, a: float, b: float) -> np.ndarray:
        inner = self.times[(self.times > a) & (self.times < b)]
        return np.concatenate([[a], inner, [b]])


def _quad_y(state: State) -> np.ndarray:
    """Deformed positions of the quadrature points (nc, nq, 2)."""
    N = shape_values(state.grid.quad[0])
    return N @ state.y[state.grid.cell_nodes]


def load_work(state: State, loads: LoadSchedule, t: float, with_grad: bool = True):
    grid = state.grid
    nc, nq = grid.n_cells, len(grid.quad[1])
    wq = grid.quad[1] * grid.cell_area
    N = shape_values(grid.quad[0])
    gy = np.zeros((grid.n_nodes, 2))
    gth = np.zeros(grid.n_cells)
    L = 0.0

    f = loads.field_at("f", t)
    yq = _quad_y(state)
    if not f.is_zero:
        fv = f(grid.quad_points.reshape(-1, 2)).reshape(nc, nq, 2) * wq[None, :, None]
        L += float(np.sum(fv * yq))
        if with_grad:
            gy += scatter_nodes(grid, np.einsum("cqi,qa->cai", fv, N))

    g = loads.field_at("g", t)
    if loads.sigma and not g.is_zero:
        es = edge_set(grid, loads.sigma)
        gv = g(es.points.reshape(-1, 2)).reshape(es.points.shape) * es.weights[..., None]
        L += float(np.sum(gv * edge_values(es, state.y)))
        if with_grad:
            gy += edge_scatter(es, grid.n_nodes, gv)

    h = loads.field_at("h", t)
    if not h.is_zero:
        z = state.z
        flat = yq.reshape(-1, 2)
        hv = h(flat).reshape(nc, nq, 2)
        L += float(np.sum(np.einsum("cqi,ci->cq", hv, z) * wq))
        if with_grad:
            Dh = h.jacobian(flat).reshape(nc, nq, 2, 2)
            gq = np.einsum("cqij,ci->cqj", Dh, z) * wq[None, :, None]
            gy += scatter_nodes(grid, np.einsum("cqi,qa->cai", gq, N))
            gth += np.einsum("cqi,ci,q->c", hv, director_perp(state.theta), wq)
    return L, gy, gth


def boundary_penalty(state: State, loads: LoadSchedule, t: float, params: MaterialParams, with_grad: bool = True):
    grid = state.grid
    gy = np.zeros((grid.n_nodes, 2))
    gth = np.zeros(grid.n_cells)
    if not loads.gamma:
        return 0.0, gy, gth
    es = edge_set(grid, loads.gamma)
    d = loads.field_at("d", t)(es.points.reshape(-1, 2)).reshape(es.points.shape)
    r = d - edge_values(es, state.y)
    nr = np.linalg.norm(r, axis=-1)
    B = float(np.sum(es.weights * nr**params.p))
    if with_grad:
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(nr > 0, params.p * nr ** (params.p - 2.0), 0.0) * es.weights
        gy = -edge_scatter(es, grid.n_nodes, fac[..., None] * r)
    return B, gy, gth


def total_energy(state: State, loads: LoadSchedule, t: float, params: MaterialParams,
                 maxwell_ctx=None, with_grad: bool = False):
    """F(t, q) = E_el + E_exc + E_mag - L + B as an :class:`EnergyBreakdown`.

    With ``with_grad`` returns ``(breakdown, gy, gth)``.  ``maxwell_ctx=None``
    switches the magnetostatic term off.
    """
    e1, gy1, gt1 = elastic_energy(state, params, with_grad)
    e2, gy2, gt2 = exchange_energy(state, with_grad)
    if maxwell_ctx is not None:
        e3, gy3, gt3 = maxwell_ctx.energy(state, with_grad=with_grad)[:3]
    else:
        e3, gy3, gt3 = 0.0, None, None
    e4, gy4, gt4 = load_work(state, loads, t, with_grad)
    e5, gy5, gt5 = boundary_penalty(state, loads, t, params, with_grad)
    br = EnergyBreakdown(e1, e2, e3, e4, e5)
    if not with_grad:
        return br
    gy = gy1 + gy2 - gy4 + gy5
    gth = gt1 + gt2 - gt4 + gt5
    if gy3 is not None:
        gy = gy + gy3
        gth = gth + gt3
    return br, gy, gth


def time_derivative(state: State, loads: LoadSchedule, t: float, params: MaterialParams,
                    side: str = "right") -> tuple[float, bool]:
    """Partial time derivative of F at fixed state, and whether ``t`` is a knot.

    At a knot the one-sided derivative on ``side`` is returned.
    """
    grid = state.grid
    _, _, at_knot = loads.locate(t, side)
    nc, nq = grid.n_cells, len(grid.quad[1])
    wq = grid.quad[1] * grid.cell_area
    out = 0.0
    fr = loads.rate_at("f", t, side)
    yq = _quad_y(state)
    if not fr.is_zero:
        out -= float(np.sum(fr(grid.quad_points.reshape(-1, 2)).reshape(nc, nq, 2) * yq * wq[None, :, None]))
    gr = loads.rate_at("g", t, side)
    if loads.sigma and not gr.is_zero:
        es = edge_set(grid, loads.sigma)
        gv = gr(es.points.reshape(-1, 2)).reshape(es.points.shape)
        out -= float(np.sum(gv * edge_values(es, state.y) * es.weights[..., None]))
    hr = loads.rate_at("h", t, side)
    if not hr.is_zero:
        hv = hr(yq.reshape(-1, 2)).reshape(nc, nq, 2)
        out -= float(np.sum(np.einsum("cqi,ci->cq", hv, state.z) * wq))
    dr = loads.rate_at("d", t, side)
    if loads.gamma and not dr.is_zero:
        es = edge_set(grid, loads.gamma)
        pts = es.points.reshape(-1, 2)
        r = loads.field_at("d", t)(pts).reshape(es.points.shape) - edge_values(es, state.y)
        nr = np.linalg.norm(r, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(nr > 0, nr ** (params.p - 2.0), 0.0)
        dv = dr(pts).reshape(es.points.shape)
        out += params.p * float(np.sum(es.weights * fac * np.einsum("eqi,eqi->eq", r, dv)))
    return out, at_knot


# ---------------------------------------------------------------- coercivity

def coercivity_constants(params: MaterialParams) -> tuple[float, float]:
    """(C', c1) with W(F, z/det F) >= C'|F|^p + c1 (det F)^-a.

    |L^-1 F| >= |F| / max(alpha, beta) and det(L^-1 F) = det F / (alpha beta).
    """
    return params.c_phi * max(params.alpha, params.beta) ** (-params.p), (params.alpha * params.beta) ** params.a


def coercivity_check(F, z, params: MaterialParams) -> tuple[bool, float]:
    """Check the two-constant lower bound; returns (holds, W - bound)."""
    F = np.asarray(F, dtype=np.float64)
    detF = np.linalg.det(F)
    if not detF > 0:
        raise InadmissibleStateError("coercivity check needs det F > 0")
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z)
    W = float(stored_energy(F, z, params))
    C1, c1 = coercivity_constants(params)
    bound = C1 * float(np.sum(F * F)) ** (0.5 * params.p) + c1 * detF ** (-params.a)
    margin = W - bound
    return bool(margin >= -1e-12 * max(1.0, abs(W))), margin


__all__ = [
    "MaterialParams", "EnergyBreakdown", "LoadSchedule", "EdgeSet", "edge_set",
    "phi_density", "stored_energy", "elastic_energy", "exchange_energy", "load_work",
    "boundary_penalty", "total_energy", "time_derivative", "coercivity_constants",
    "coercivity_check", "cell_difference_operators", "director",
]
