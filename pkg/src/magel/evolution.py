"""Rate-independent evolution by incremental minimization, plus its diagnostics.

Each step minimizes ``q -> F(t_i, q) + D(q_{i-1}, q)``.  The dissipation is
nonsmooth where a director does not move, so a step runs in two phases:

1. L-BFGS on the smoothed objective (``|v|`` replaced by
   ``sqrt(|v|^2 + eps^2) - eps``);
2. an active-set loop with the exact dissipation: cells whose director
   barely moved are pinned to their previous angle, the rest are optimized
   with the exact ``|z - z_prev|`` term, and pinned cells whose torque
   exceeds the dissipation threshold are released.

A final guard compares exact objectives, so an accepted step never does
worse than staying put.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import degree as dg
from .energy import (EnergyBreakdown, LoadSchedule, MaterialParams, cell_difference_operators, edge_set,
                     time_derivative, total_energy)
from .errors import ConfigurationError, InadmissibleStateError, PaddingTooSmallError, PreconditionError, StepFailure
from .grid import State, director_perp
from .maxwell import EulerianGrid, build_eulerian_grid
from .optimize import lbfgs, safe_eval


# ---------------------------------------------------------------- dissipation

def dissipation(q1: State, q2: State, eps: float = 0.0) -> tuple[float, float]:
    """(exact, smoothed) dissipation distance between two states on one grid."""
    if q1.grid != q2.grid:
        raise PreconditionError("dissipation needs both states on the same grid")
    dz = q2.z - q1.z
    n = np.sqrt(np.einsum("ci,ci->c", dz, dz))
    A = q1.grid.cell_area
    exact = float(A * np.sum(n))
    smooth = float(A * np.sum(np.sqrt(n * n + eps * eps) - eps)) if eps > 0 else exact
    return exact, smooth


@dataclass(frozen=True)
class Partition:
    times: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or len(t) < 2:
            raise ConfigurationError("partition needs at least two times")
        if t[0] != 0.0:
            raise ConfigurationError("partition must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ConfigurationError("partition times must be strictly increasing")
        object.__setattr__(self, "times", tuple(float(v) for v in t))

    @classmethod
    def uniform(cls, T: float, steps: int) -> "Partition":
        if steps < 1:
            raise ConfigurationError("partition needs at least one step")
        return cls(tuple(np.linspace(0.0, T, steps + 1)))

    @property
    def T(self) -> float:
        return self.times[-1]

    @property
    def fineness(self) -> float:
        return float(np.max(np.diff(self.times)))


# ---------------------------------------------------------------- objective

@dataclass
class StepOptions:
    grad_tol: float = 1e-7
    maxiter: int = 4000
    det_floor: float = 1e-8
    pin_tol: float = 1e-4
    repin_tol: float = 1e-9
    kick: float = 1e-3
    max_rounds: int = 16
    round_maxiter: int = 500
    stall_pin_tol: float = 1e-5
    memory: int = 12
    max_step: float = 0.05
    max_bisections: int = 4
    precondition: bool = True
    descent_tol: float = 1e-12


_PRECOND_CACHE: dict = {}


def _q1_stiffness(grid) -> sps.csr_matrix:
    """Scalar Q1 Laplacian stiffness on the reference nodes."""
    dN = grid.quad_grad_basis  # (nq, 4, 2)
    w = grid.quad[1] * grid.cell_area
    Kloc = np.einsum("q,qak,qbk->ab", w, dN, dN)
    cn = grid.cell_nodes
    rows = np.repeat(cn, 4, axis=1).ravel()
    cols = np.tile(cn, (1, 4)).ravel()
    vals = np.tile(Kloc.ravel(), grid.n_cells)
    return sps.csr_matrix((vals, (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))


def _q1_lumped_mass(grid) -> np.ndarray:
    return np.bincount(grid.cell_nodes.ravel(), np.full(4 * grid.n_cells, 0.25 * grid.cell_area), grid.n_nodes)


def preconditioner(grid, params: MaterialParams, gamma: tuple, free: np.ndarray):
    """Solve with a block-diagonal SPD model of the energy Hessian.

    The deformation block is a Q1 Laplacian scaled by the elastic stiffness
    plus the Dirichlet-penalty edge mass; the angle block is the exchange
    cell Laplacian plus a cell-area mass for the local terms.
    """
    key = (grid, params, tuple(gamma), free.tobytes())
    solve = _PRECOND_CACHE.get(key)
    if solve is not None:
        return solve
    k_el = params.c_phi * params.p / min(params.alpha, params.beta) ** 2 + params.a
    Ky = k_el * _q1_stiffness(grid)
    mass = 1e-2 * _q1_lumped_mass(grid)
    if gamma:
        es = edge_set(grid, gamma)
        ln = es.weights.sum(axis=1)
        mass = mass + params.p * (np.bincount(es.nodes[:, 0], 0.5 * ln, grid.n_nodes)
                                  + np.bincount(es.nodes[:, 1], 0.5 * ln, grid.n_nodes))
    Ky = Ky + sps.diags(mass)
    Ky2 = sps.kron(Ky, sps.identity(2))  # interleaved (y1, y2) per node
    Dx, Dy = cell_difference_operators(grid.nx, grid.ny, grid.hx, grid.hy)
    A = grid.cell_area
    Kt = 2.0 * A * (Dx.T @ Dx + Dy.T @ Dy) + A * sps.identity(grid.n_cells)
    Kt = Kt[free][:, free]
    lu = spla.splu(sps.block_diag([Ky2, Kt], format="csc"))
    solve = lu.solve
    if len(_PRECOND_CACHE) > 32:
        _PRECOND_CACHE.clear()
    _PRECOND_CACHE[key] = solve
    return solve


class Problem:
    """Objective over (y, free angles) at fixed time and previous state."""

    def __init__(self, loads: LoadSchedule, params: MaterialParams, ctx, t: float, q_prev: Optional[State],
                 mode: str, free: Optional[np.ndarray], base: State, opts: StepOptions):
        self.loads, self.params, self.ctx, self.t = loads, params, ctx, t
        self.q_prev, self.mode, self.opts = q_prev, mode, opts
        self.grid = base.grid
        self.theta0 = base.theta.copy()
        self.free = np.ones(self.grid.n_cells, dtype=bool) if free is None else free.copy()
        self.ny = 2 * self.grid.n_nodes
        self.zprev = q_prev.z if q_prev is not None else None
        self.precond = preconditioner(self.grid, params, loads.gamma, self.free) if opts.precondition else None

    def pack(self, q: State) -> np.ndarray:
        return np.concatenate([q.y.ravel(), q.theta[self.free]])

    def unpack(self, x: np.ndarray) -> State:
        th = self.theta0.copy()
        th[self.free] = x[self.ny:]
        return State(self.grid, x[: self.ny].reshape(-1, 2), th)

    def evaluate(self, q: State):
        """Objective value and raw gradients (gy, gth) for state ``q``."""
        if not np.all(q.jacobians() > self.opts.det_floor):
            raise InadmissibleStateError("below det floor")
        br, gy, gth = total_energy(q, self.loads, self.t, self.params, self.ctx, with_grad=True)
        f = br.F_total
        if self.mode != "static":
            A = self.grid.cell_area
            dz = q.z - self.zprev
            n = np.sqrt(np.einsum("ci,ci->c", dz, dz))
            proj = np.einsum("ci,ci->c", dz, director_perp(q.theta))
            if self.mode == "smooth":
                eps = self.params.eps_d
                r = np.sqrt(n * n + eps * eps)
                f += A * float(np.sum(r - eps))
                gth = gth + A * proj / r
            else:
                m = self.free
                f += A * float(np.sum(n[m]))
                safe = np.where(n > 0, n, 1.0)
                gth = gth + np.where(m & (n > 0), A * proj / safe, 0.0)
        return f, gy, gth

    def fun(self, x: np.ndarray):
        f, gy, gth = self.evaluate(self.unpack(x))
        return f, np.concatenate([gy.ravel(), gth[self.free]])

    def norm(self, g: np.ndarray) -> float:
        gy = np.max(np.abs(g[: self.ny])) if self.ny else 0.0
        gt = np.max(np.abs(g[self.ny:])) if g.size > self.ny else 0.0
        return float(max(gy, gt))


def objective(q: State, q_prev: State, t: float, loads, params, ctx) -> float:
    """Exact incremental objective F(t, q) + D(q_prev, q)."""
    return total_energy(q, loads, t, params, ctx).F_total + dissipation(q_prev, q)[0]


def kkt_residual(q: State, q_prev: State, t: float, loads, params, ctx, pin_tol: float = 0.0) -> float:
    """First-order residual of the exact incremental problem.

    For cells with ``|z - z_prev| <= pin_tol`` the dissipation subdifferential
    allows any torque up to the cell area.
    """
    _, gy, gth = total_energy(q, loads, t, params, ctx, with_grad=True)
    A = q.grid.cell_area
    dz = q.z - q_prev.z
    n = np.sqrt(np.einsum("ci,ci->c", dz, dz))
    pinned = n <= pin_tol
    proj = np.einsum("ci,ci->c", dz, director_perp(q.theta))
    r_free = np.abs(gth + A * proj / np.where(pinned, 1.0, n))
    r = np.where(pinned, np.maximum(np.abs(gth) - A, 0.0), r_free)
    return float(max(np.max(np.abs(gy)), np.max(r) if r.size else 0.0))


@dataclass
class StepReport:
    t: float
    status: str
    iterations: int = 0
    evaluations: int = 0
    kkt_residual: float = float("nan")
    objective_prev: float = float("nan")
    objective_new: float = float("nan")
    moved_cells: int = 0
    rounds: int = 0
    notes: list = field(default_factory=list)


def static_minimize(q0: State, t: float, loads, params, ctx, opts: StepOptions | None = None):
    """Minimize F(t, .) without dissipation; returns (state, OptimizeResult)."""
    opts = opts or StepOptions()
    q0.require_admissible()
    prob = Problem(loads, params, ctx, t, None, "static", None, q0, opts)
    res = lbfgs(prob.fun, prob.pack(q0), opts.grad_tol, opts.maxiter, opts.memory, opts.max_step, prob.norm,
                precond=prob.precond)
    return prob.unpack(res.x), res


def _minimize_exact(q_start: State, q_prev: State, free: np.ndarray, t, loads, params, ctx, opts, maxiter=None):
    prob = Problem(loads, params, ctx, t, q_prev, "exact", free, q_start, opts)
    res = lbfgs(prob.fun, prob.pack(q_start), opts.grad_tol, maxiter or opts.maxiter, opts.memory, opts.max_step,
                prob.norm, precond=prob.precond)
    return prob.unpack(res.x), res


def _active_set(q: State, q_prev: State, t, loads, params, ctx, opts, report: StepReport) -> State:
    """Pin/release loop on the exact problem.

    A round that does not converge usually has cells creeping onto the kink
    of ``|z - z_prev|``; those within ``stall_pin_tol`` are pinned and the
    release test decides afterwards whether they really have to move.
    """
    A = q.grid.cell_area
    pinned = np.linalg.norm(q.z - q_prev.z, axis=1) <= opts.pin_tol
    th = q.theta.copy()
    th[pinned] = q_prev.theta[pinned]
    q = State(q.grid, q.y, th)
    for rnd in range(opts.max_rounds):
        report.rounds += 1
        last = rnd == opts.max_rounds - 1
        q, res = _minimize_exact(q, q_prev, ~pinned, t, loads, params, ctx, opts,
                                 None if last else min(opts.maxiter, opts.round_maxiter))
        report.iterations += res.iterations
        report.evaluations += res.evaluations
        _, _, gth = total_energy(q, loads, t, params, ctx, with_grad=True)
        n = np.linalg.norm(q.z - q_prev.z, axis=1)
        release = pinned & (np.abs(gth) - A > opts.grad_tol)
        tol = opts.repin_tol if res.success else opts.stall_pin_tol
        repin = ~pinned & (n <= tol)
        if not release.any() and not repin.any() and res.success:
            break
        th = q.theta.copy()
        th[release] = q_prev.theta[release] - np.sign(gth[release]) * opts.kick
        th[repin] = q_prev.theta[repin]
        pinned = (pinned & ~release) | repin
        q = State(q.grid, q.y, th)
    return q


def incremental_step(q_prev: State, t: float, loads: LoadSchedule, params: MaterialParams, ctx=None,
                     opts: StepOptions | None = None) -> tuple[State, StepReport]:
    """One step of the incremental scheme from ``q_prev`` at time ``t``."""
    opts = opts or StepOptions()
    q_prev.require_admissible()
    report = StepReport(t, "unchanged")
    f_prev = objective(q_prev, q_prev, t, loads, params, ctx)
    report.objective_prev = f_prev
    r0 = kkt_residual(q_prev, q_prev, t, loads, params, ctx)
    if r0 <= opts.grad_tol:
        report.kkt_residual = r0
        report.objective_new = f_prev
        return q_prev.copy(), report

    # phase A: smoothed dissipation
    prob = Problem(loads, params, ctx, t, q_prev, "smooth", None, q_prev, opts)
    res = lbfgs(prob.fun, prob.pack(q_prev), opts.grad_tol, opts.maxiter, opts.memory, opts.max_step, prob.norm,
                precond=prob.precond)
    report.iterations += res.iterations
    report.evaluations += res.evaluations
    q = prob.unpack(res.x)
    if objective(q, q_prev, t, loads, params, ctx) > f_prev:
        report.notes.append("smoothed phase worse than previous state; restarting from it")
        q = q_prev.copy()

    # phase B: exact dissipation with an active set
    q = _active_set(q, q_prev, t, loads, params, ctx, opts, report)
    f_new = objective(q, q_prev, t, loads, params, ctx)
    if f_new > f_prev + opts.descent_tol:
        report.notes.append("active-set result worse than previous state; retrying with all cells pinned")
        q = _active_set(q_prev.copy(), q_prev, t, loads, params, ctx, opts, report)
        f_new = objective(q, q_prev, t, loads, params, ctx)
    if f_new > f_prev + opts.descent_tol:
        report.notes.append("guard: returning previous state")
        q, f_new = q_prev.copy(), f_prev
        report.status = "guarded"
    moved = np.linalg.norm(q.z - q_prev.z, axis=1) > 0
    report.moved_cells = int(moved.sum())
    report.kkt_residual = kkt_residual(q, q_prev, t, loads, params, ctx)
    report.objective_new = f_new
    if report.status != "guarded":
        report.status = "converged" if report.kkt_residual <= opts.grad_tol else "stalled"
    if report.kkt_residual > opts.grad_tol:
        raise StepFailure(f"step to t={t:.6g} stalled with residual {report.kkt_residual:.3e}", report)
    return q, report


# ---------------------------------------------------------------- trace

TRACE_COLUMNS = ["i", "t", "E_el", "E_exc", "E_mag", "L", "B", "F", "D_inc", "Var_cum", "balance_residual",
                 "apriori_slack", "cn_residual", "mult_flags", "grad_norm", "optimizer_iters"]


@dataclass
class StepRecord:
    i: int
    t: float
    state: State
    energy: EnergyBreakdown
    D_inc: float
    D_inc_smooth: float
    Var_cum: float
    report: Optional[StepReport]
    cn_residual: float = float("nan")
    mult_flags: int = 0
    balance_residual: float = float("nan")
    work: float = float("nan")
    apriori_slack: float = float("nan")
    F_prev_recorded: float = float("nan")

    def row(self) -> list:
        rep = self.report
        return [self.i, self.t, self.energy.E_el, self.energy.E_exc, self.energy.E_mag, self.energy.L_work,
                self.energy.B_pen, self.energy.F_total, self.D_inc, self.Var_cum, self.balance_residual,
                self.apriori_slack, self.cn_residual, self.mult_flags,
                rep.kkt_residual if rep is not None else 0.0, rep.iterations if rep is not None else 0]


@dataclass
class EvolutionTrace:
    records: list
    loads: LoadSchedule
    params: MaterialParams
    ctx: object = None
    valid: bool = True
    failure: Optional[str] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    @property
    def states(self) -> list:
        return [r.state for r in self.records]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(v) for v in r.row()])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {k: float(v) for k, v in r.items()}
        d["i"] = int(d["i"])
        out.append(d)
    return out


def variation(trace: EvolutionTrace, a: float, b: float) -> float:
    """Dissipation variation of the piecewise-constant interpolant on [a, b]."""
    if not a < b:
        raise PreconditionError("variation needs a < b")
    t = trace.times
    if a < t[0] - 1e-12 or b > t[-1] + 1e-12:
        raise PreconditionError("interval outside the trace")
    return float(sum(r.D_inc for r in trace.records if a < r.t <= b))


def work_integral(q: State, a: float, b: float, loads: LoadSchedule, params: MaterialParams, panels: int = 2) -> float:
    """int_a^b dF/dt(tau, q) dtau by composite Simpson, split at load knots."""
    total = 0.0
    pts = loads.breakpoints(a, b)
    for lo, hi in zip(pts[:-1], pts[1:]):
        n = 2 * panels
        taus = np.linspace(lo, hi, n + 1)
        vals = np.empty(n + 1)
        for k, tau in enumerate(taus):
            side = "left" if k == n else "right"
            vals[k] = time_derivative(q, loads, float(tau), params, side)[0]
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        total += float((hi - lo) / (3.0 * n) * np.sum(w * vals))
    return total


def _diagnose(rec: StepRecord, eg) -> None:
    if eg is None:
        return
    rec.cn_residual = dg.ciarlet_necas_residual(rec.state, eg)
    rec.mult_flags = dg.multiplicity_flags(rec.state, eg)


def diagnostic_grid(q0: State, ctx) -> EulerianGrid:
    """Eulerian grid for image diagnostics: the Maxwell box, or a padded box around q0."""
    return ctx.eg if ctx is not None else build_eulerian_grid(q0, 1.0)


def initial_record(q0: State, loads, params, ctx, diag_eg=None) -> StepRecord:
    q0.require_admissible()
    br = total_energy(q0, loads, 0.0, params, ctx)
    rec = StepRecord(0, 0.0, q0.copy(), br, 0.0, 0.0, 0.0, None, balance_residual=0.0, work=0.0)
    _diagnose(rec, diag_eg)
    return rec


def run_evolution(q0: State, partition: Partition, loads: LoadSchedule, params: MaterialParams, ctx=None,
                  opts: StepOptions | None = None, prefix: Optional[list] = None,
                  on_record: Optional[Callable[[StepRecord], None]] = None, diag_eg=None) -> EvolutionTrace:
    """Sequential incremental minimization over ``partition``.

    ``prefix`` resumes from already computed records (the last one is the
    current state); partition times up to its time are skipped.  Image
    diagnostics use ``diag_eg`` (default :func:`diagnostic_grid`).
    """
    opts = opts or StepOptions()
    if diag_eg is None:
        diag_eg = diagnostic_grid(prefix[0].state if prefix else q0, ctx)
    if partition.T > loads.T + 1e-12:
        raise ConfigurationError("partition extends beyond the load schedule")
    if prefix:
        records = list(prefix)
    else:
        records = [initial_record(q0, loads, params, ctx, diag_eg)]
        if on_record:
            on_record(records[0])
    trace = EvolutionTrace(records, loads, params, ctx)

    def advance(t_target: float, depth: int) -> None:
        last = records[-1]
        try:
            q, rep = incremental_step(last.state, t_target, loads, params, ctx, opts)
        except StepFailure:
            if depth >= opts.max_bisections:
                raise
            mid = 0.5 * (last.t + t_target)
            advance(mid, depth + 1)
            advance(t_target, depth + 1)
            return
        br = total_energy(q, loads, t_target, params, ctx)
        d_exact, d_smooth = dissipation(last.state, q, params.eps_d)
        work = work_integral(last.state, last.t, t_target, loads, params)
        rec = StepRecord(len(records), t_target, q, br, d_exact, d_smooth, last.Var_cum + d_exact, rep,
                         work=work, F_prev_recorded=last.energy.F_total)
        rec.balance_residual = br.F_total - last.energy.F_total + d_exact - work
        try:
            _diagnose(rec, diag_eg)
        except PaddingTooSmallError:
            rec.cn_residual, rec.mult_flags = float("nan"), -1
        records.append(rec)
        if on_record:
            on_record(rec)

    t_done = records[-1].t
    try:
        for t_next in partition.times[1:]:
            if t_next <= t_done + 1e-12:
                continue
            advance(float(t_next), 0)
    except StepFailure as exc:
        trace.valid = False
        trace.failure = str(exc)
    return trace


# ---------------------------------------------------------------- diagnostics

@dataclass
class BalanceReport:
    residuals: np.ndarray
    tol: float
    defect: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def energy_scale(trace: EvolutionTrace) -> float:
    return max(1.0, abs(trace.records[0].energy.F_total))


def check_energy_balance(trace: EvolutionTrace, rel_tol: float = 1e-6) -> BalanceReport:
    """Upper energy-dissipation residuals per step, recomputed from stored states."""
    res = []
    for prev, rec in zip(trace.records[:-1], trace.records[1:]):
        work = work_integral(prev.state, prev.t, rec.t, trace.loads, trace.params)
        d = dissipation(prev.state, rec.state)[0]
        f_prev = rec.F_prev_recorded if np.isfinite(rec.F_prev_recorded) else prev.energy.F_total
        res.append(rec.energy.F_total - f_prev + d - work)
    r = np.array(res)
    return BalanceReport(r, rel_tol * energy_scale(trace), float(abs(r.sum())) if r.size else 0.0)


def rate_norms(loads: LoadSchedule, t: float, grid, eg, side: str = "right") -> float:
    """||f'||_{L2(Omega)} + ||g'||_{L2(Sigma)} + ||h'||_{sup, box} + ||d'||_{L2(Gamma)} at time ``t``."""
    total = 0.0
    w = grid.quad[1] * grid.cell_area
    fr = loads.rate_at("f", t, side)
    if not fr.is_zero:
        v = fr(grid.quad_points.reshape(-1, 2)).reshape(grid.n_cells, -1, 2)
        total += float(np.sqrt(np.sum(np.einsum("cqi,cqi->cq", v, v) * w)))
    for name, sides in (("g", loads.sigma), ("d", loads.gamma)):
        r = loads.rate_at(name, t, side)
        if sides and not r.is_zero:
            es = edge_set(grid, sides)
            v = r(es.points.reshape(-1, 2)).reshape(es.points.shape)
            total += float(np.sqrt(np.sum(np.einsum("eqi,eqi->eq", v, v) * es.weights)))
    hr = loads.rate_at("h", t, side)
    if not hr.is_zero:
        pts = eg.centers() if eg is not None else grid.nodes
        v = hr(pts)
        total += float(np.max(np.linalg.norm(v, axis=1)))
    return total


@dataclass
class AprioriReport:
    slacks: np.ndarray
    C: float
    L: float
    H: np.ndarray
    samples: int

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slacks >= 0))

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slacks)) if self.slacks.size else 0.0


def check_apriori_bound(trace: EvolutionTrace, margin: float = 1.0, samples_per_interval: int = 10,
                        eta_factor: float = 1.0) -> AprioriReport:
    """Grownwall-type bound F_i + L + sum D <= (F_0 + L) exp(H(t_i)) with calibrated eta.

    eta(t) = C * rate_norms(t); C is the smallest constant with
    |dF/dt(tau, q)| <= eta(tau) (F(tau, q) + L) over the sampled pairs, where
    tau runs over ``samples_per_interval`` times of each step interval and q is
    the state held on that interval.  ``eta_factor`` scales eta afterwards
    (values < 1 give the under-calibrated negative control).
    """
    loads, params = trace.loads, trace.params
    ctx = trace.ctx
    eg = ctx.eg if ctx is not None else None
    grid = trace.records[0].state.grid
    samples = []
    for prev, rec in zip(trace.records[:-1], trace.records[1:]):
        taus = np.linspace(prev.t, rec.t, samples_per_interval)
        for k, tau in enumerate(taus):
            side = "left" if k == len(taus) - 1 else "right"
            dF = time_derivative(prev.state, loads, float(tau), params, side)[0]
            F = total_energy(prev.state, loads, float(tau), params, ctx).F_total
            samples.append((dF, F, rate_norms(loads, float(tau), grid, eg, side)))
    Fs = [r.energy.F_total for r in trace.records] + [s[1] for s in samples]
    L = max(0.0, -min(Fs)) + margin
    C = 0.0
    for dF, F, nrm in samples:
        if nrm > 0:
            C = max(C, abs(dF) / ((F + L) * nrm))
        elif abs(dF) > 1e-12:
            C = np.inf
    C *= eta_factor
    # H(t_i) = int_0^{t_i} eta: rates are constant between knots
    H = [0.0]
    for prev, rec in zip(trace.records[:-1], trace.records[1:]):
        h = 0.0
        pts = loads.breakpoints(prev.t, rec.t)
        for lo, hi in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (lo + hi)
            h += (hi - lo) * rate_norms(loads, float(mid), grid, eg)
        H.append(H[-1] + C * h if C > 0 else H[-1])
    H = np.array(H)
    F0 = trace.records[0].energy.F_total
    cum = np.cumsum([r.D_inc for r in trace.records])
    lhs = np.array([r.energy.F_total for r in trace.records]) + L + cum
    with np.errstate(over="ignore"):
        rhs = (F0 + L) * np.exp(H)
    slacks = rhs - lhs
    for r, s in zip(trace.records, slacks):
        r.apriori_slack = float(s)
    return AprioriReport(slacks, float(C), float(L), H, len(samples))


@dataclass
class StabilityReport:
    t_index: int
    margins: np.ndarray
    kinds: list

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else 0.0


def stability_margin(q: State, competitor: State, t: float, loads, params, ctx, F_q: float | None = None) -> float:
    if F_q is None:
        F_q = total_energy(q, loads, t, params, ctx).F_total
    try:
        F_hat = total_energy(competitor, loads, t, params, ctx).F_total
    except InadmissibleStateError:
        return np.inf
    return F_hat + dissipation(q, competitor)[0] - F_q


def _random_admissible(q: State, rng, amp: float) -> State:
    h = min(q.grid.hx, q.grid.hy)
    for _ in range(30):
        y = q.y + amp * h * rng.standard_normal(q.y.shape)
        th = q.theta + amp * rng.standard_normal(q.theta.shape)
        c = State(q.grid, y, th)
        if c.is_admissible():
            return c
        amp *= 0.5
    return q.copy()


def check_stability(trace: EvolutionTrace, t_index: int, n_competitors: int = 50, seed: int = 0,
                    amplitudes=(1e-3, 1e-2, 1e-1), n_restarts: int = 2, n_other: int = 6,
                    restart_maxiter: int = 150, opts: StepOptions | None = None, workers: int = 1) -> StabilityReport:
    """Margins F(t, q_hat) + D(q(t), q_hat) - F(t, q(t)) over a competitor family.

    Competitors are stored states at other times, the state with its
    deformation re-minimized, re-minimized random restarts and random
    admissible perturbations.  They are all drawn before
    any is evaluated, so the result does not depend on ``workers``.
    """
    opts = opts or StepOptions()
    rec = trace.records[t_index]
    q, t = rec.state, rec.t
    loads, params, ctx = trace.loads, trace.params, trace.ctx
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(t_index)]))
    F_q = total_energy(q, loads, t, params, ctx).F_total

    jobs = []  # (kind, payload)
    others = [k for k in range(len(trace.records)) if k != t_index]
    if len(others) > n_other:
        others = [others[int(j)] for j in np.linspace(0, len(others) - 1, n_other)]
    for k in others[:n_competitors]:
        jobs.append((f"stored:{k}", trace.records[k].state))
    if n_restarts > 0 and len(jobs) < n_competitors:
        jobs.append(("relax", q))
    for _ in range(min(n_restarts, n_competitors - len(jobs))):
        jobs.append(("restart", State(q.grid, q.y.copy(), q.theta + rng.uniform(-np.pi, np.pi, q.grid.n_cells))))
    k = 0
    while len(jobs) < n_competitors:
        amp = amplitudes[k % len(amplitudes)]
        jobs.append((f"perturb:{amp:g}", _random_admissible(q, rng, amp)))
        k += 1

    ropts = StepOptions(**{**opts.__dict__, "maxiter": restart_maxiter})

    def margin(job) -> float:
        kind, cand = job
        if kind == "relax":
            # deformation re-minimized with every director pinned
            cand = _minimize_exact(q, q, np.zeros(q.grid.n_cells, dtype=bool), t, loads, params, ctx, ropts)[0]
        elif kind == "restart":
            prob = Problem(loads, params, ctx, t, q, "smooth", None, cand, ropts)
            res = lbfgs(prob.fun, prob.pack(cand), ropts.grad_tol, ropts.maxiter, ropts.memory, ropts.max_step,
                        prob.norm, precond=prob.precond)
            cand = prob.unpack(res.x)
        return stability_margin(q, cand, t, loads, params, ctx, F_q)

    if workers > 1 and ctx is None:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            margins = list(pool.map(margin, jobs))
    else:
        # the Maxwell context tracks solver statistics, so it is not shared across threads
        margins = [margin(j) for j in jobs]
    return StabilityReport(t_index, np.array(margins), [j[0] for j in jobs])


def saturation_defect(state: State) -> float:
    """max | |m o y| det Dy - 1 | over quadrature points."""
    m = state.magnetization_pullback()
    J = state.jacobians()
    return float(np.max(np.abs(np.linalg.norm(m, axis=-1) * J - 1.0)))
