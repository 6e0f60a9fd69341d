"""Command-line driver: ``magel --mode evolve --config run.toml --output-dir out/``.

Exit codes: 0 all enabled diagnostics pass, 1 a diagnostic failed,
2 configuration error, 3 numerical failure.  Every run writes
``summary.txt`` with one ``name status residual tolerance`` line per
diagnostic; disabled diagnostics appear as SKIPPED.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import degree as dg
from . import evolution as ev
from . import verify as vf
from .config import MODES, RunConfig, load_config, parse_config, validate
from .energy import EnergyBreakdown, total_energy
from .errors import ConfigurationError, MagelError, PreconditionError
from .io import read_snapshot, write_snapshot
from .scenarios import reverse_ramp
from .maxwell import MaxwellContext, build_eulerian_grid, solve_stray_field

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class Diagnostic:
    name: str
    status: str  # PASS, FAIL, SKIPPED
    residual: float = float("nan")
    tolerance: float = float("nan")

    def line(self) -> str:
        return f"{self.name} {self.status} {self.residual:.6e} {self.tolerance:.6e}"


def _check(name: str, residual: float, tol: float, enabled: bool = True) -> Diagnostic:
    """PASS iff residual <= tol (NaN residuals fail)."""
    if not enabled:
        return Diagnostic(name, "SKIPPED")
    ok = bool(np.isfinite(residual) and residual <= tol)
    return Diagnostic(name, "PASS" if ok else "FAIL", float(residual), float(tol))


class Summary:
    def __init__(self, path: Path):
        self.path = path
        self.items: list[Diagnostic] = []

    def add(self, d: Diagnostic) -> None:
        self.items.append(d)
        self.flush()

    def flush(self) -> None:
        self.path.write_text("".join(d.line() + "\n" for d in self.items))

    @property
    def passed(self) -> bool:
        return all(d.status != "FAIL" for d in self.items)


def _maxwell_context(cfg: RunConfig, q0) -> Optional[MaxwellContext]:
    mx = cfg.maxwell
    if not mx.enabled:
        return None
    eg = build_eulerian_grid(q0, mx.padding, tuple(mx.cell_size) if mx.cell_size else None)
    return MaxwellContext(eg, mx.source, mx.method, mx.tol, mx.maxiter, mx.residual_tol)


def _maxwell_diag(ctx, cfg: RunConfig) -> Diagnostic:
    if ctx is None:
        return Diagnostic("maxwell_residual", "SKIPPED")
    return _check("maxwell_residual", ctx.max_residual, cfg.maxwell.residual_tol)


def _cn_tolerance(state, eg, cfg: RunConfig) -> float:
    return cfg.diagnostics.cn_factor * max(eg.hx, eg.hy) * vf.image_perimeter(state)


# ---------------------------------------------------------------- static

def run_static(cfg: RunConfig, out: Path, summary: Summary) -> None:
    grid = cfg.build_grid()
    q0 = cfg.initial_state(grid)
    loads = cfg.load_schedule()
    ctx = _maxwell_context(cfg, q0)
    q, res = ev.static_minimize(q0, 0.0, loads, cfg.material, ctx, cfg.optimizer)
    write_snapshot(out / "static.snap", q)
    br = total_energy(q, loads, 0.0, cfg.material, ctx)
    (out / "energy.csv").write_text(
        "term,value\n" + "".join(f"{k},{v!r}\n" for k, v in br.as_dict().items()))
    d = cfg.diagnostics
    summary.add(_check("stationarity", res.grad_norm, cfg.optimizer.grad_tol, d.stationarity))
    summary.add(_check("saturation", ev.saturation_defect(q), d.saturation_tol, d.saturation))
    eg = ev.diagnostic_grid(q, ctx)
    summary.add(_check("ciarlet_necas", dg.ciarlet_necas_residual(q, eg), _cn_tolerance(q, eg, cfg), d.ciarlet_necas))
    summary.add(_check("multiplicity_flags", dg.multiplicity_flags(q, eg), 0, d.multiplicity))
    summary.add(_maxwell_diag(ctx, cfg))


# ---------------------------------------------------------------- evolve

def _snap_name(i: int) -> str:
    return f"step_{i:04d}.snap"


def _resume_prefix(cfg: RunConfig, grid, loads, ctx):
    """Records 0..step rebuilt from a previous output directory, plus the consistency residual.

    Energies are recomputed from the stored snapshots rather than copied from
    the trace, so a corrupted snapshot also shows up in the balance check.
    """
    src = Path(cfg.resume.dir)
    try:
        rows = ev.read_trace_csv(src / cfg.output.trace)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigurationError(f"cannot read resume trace: {exc}") from None
    k = cfg.resume.step
    if k >= len(rows):
        raise ConfigurationError(f"resume step {k} beyond the stored trace ({len(rows)} rows)")
    records, worst = [], 0.0
    for row in rows[: k + 1]:
        try:
            state = read_snapshot(src / _snap_name(row["i"]), grid.quadrature, grid)
        except OSError as exc:
            raise ConfigurationError(f"cannot read resume snapshot: {exc}") from None
        br = total_energy(state, loads, row["t"], cfg.material, ctx)
        d_inc = ev.dissipation(records[-1].state, state)[0] if records else 0.0
        rep = ev.StepReport(row["t"], "resumed", iterations=int(row["optimizer_iters"]),
                            kkt_residual=row["grad_norm"])
        rec = ev.StepRecord(row["i"], row["t"], state, br, d_inc, float("nan"),
                            (records[-1].Var_cum if records else 0.0) + d_inc,
                            rep if row["i"] > 0 else None, cn_residual=row["cn_residual"],
                            mult_flags=int(row["mult_flags"]), balance_residual=row["balance_residual"],
                            F_prev_recorded=records[-1].energy.F_total if records else float("nan"))
        records.append(rec)
        worst = max(worst, abs(br.F_total - row["F"]) / max(1.0, abs(row["F"])))
    return records, worst


def _evolution_diagnostics(cfg: RunConfig, trace: ev.EvolutionTrace, summary: Summary, ctx,
                           resume_residual: Optional[float]) -> None:
    d = cfg.diagnostics
    recs = trace.records
    descent = max([r.report.objective_new - r.report.objective_prev for r in recs[1:]
                   if r.report is not None and np.isfinite(r.report.objective_prev)] or [0.0])
    summary.add(_check("descent", descent, d.descent_tol, d.descent))
    summary.add(_check("saturation", max(ev.saturation_defect(r.state) for r in recs), d.saturation_tol, d.saturation))
    if d.balance:
        b = ev.check_energy_balance(trace, d.balance_tol)
        summary.add(_check("energy_balance", b.max_residual, b.tol))
    else:
        summary.add(Diagnostic("energy_balance", "SKIPPED"))
    if d.apriori:
        a = ev.check_apriori_bound(trace, d.apriori_margin, d.apriori_samples, d.eta_factor)
        summary.add(_check("apriori_bound", max(0.0, -a.min_slack), 0.0))
    else:
        summary.add(Diagnostic("apriori_bound", "SKIPPED"))
    if d.stability:
        idx = sorted(set(range(d.stability_every, len(recs), d.stability_every)) | {len(recs) - 1})
        worst = -math.inf
        for k in idx:
            if k == 0:
                continue
            rep = ev.check_stability(trace, k, d.stability_competitors, cfg.seed,
                                     n_restarts=d.stability_restarts, opts=cfg.optimizer, workers=cfg.workers)
            worst = max(worst, -rep.min_margin)
        summary.add(_check("stability", max(worst, 0.0) if np.isfinite(worst) else 0.0, d.stability_tol))
    else:
        summary.add(Diagnostic("stability", "SKIPPED"))
    cn = [r.cn_residual for r in recs]
    eg = ev.diagnostic_grid(recs[0].state, ctx)
    tol = min(_cn_tolerance(r.state, eg, cfg) for r in recs)
    summary.add(_check("ciarlet_necas", max(cn) if not np.any(np.isnan(cn)) else np.nan, tol, d.ciarlet_necas))
    summary.add(_check("multiplicity_flags", max(abs(r.mult_flags) for r in recs), 0, d.multiplicity))
    summary.add(_maxwell_diag(ctx, cfg))
    if resume_residual is None:
        summary.add(Diagnostic("resume_consistency", "SKIPPED"))
    else:
        summary.add(_check("resume_consistency", resume_residual, d.resume_tol, d.resume_consistency))


def run_evolve(cfg: RunConfig, out: Path, summary: Summary) -> int:
    grid = cfg.build_grid()
    loads = cfg.load_schedule()
    prefix, resume_residual = None, None
    if cfg.resume.dir is not None:
        q_ref = read_snapshot(Path(cfg.resume.dir) / _snap_name(0), grid.quadrature, grid)
        ctx = _maxwell_context(cfg, q_ref)
        prefix, resume_residual = _resume_prefix(cfg, grid, loads, ctx)
        q0 = prefix[0].state
    else:
        q0 = cfg.initial_state(grid)
        ctx = _maxwell_context(cfg, q0)

    def on_record(rec):
        if cfg.output.snapshots:
            write_snapshot(out / _snap_name(rec.i), rec.state)

    if prefix and cfg.output.snapshots:
        for rec in prefix:
            on_record(rec)
    trace = ev.run_evolution(q0, cfg.partition_obj(), loads, cfg.material, ctx, cfg.optimizer, prefix, on_record)
    try:
        _evolution_diagnostics(cfg, trace, summary, ctx, resume_residual)
    finally:
        trace.write_csv(out / cfg.output.trace)
    if not trace.valid:
        summary.add(Diagnostic("trace_valid", "FAIL", 1.0, 0.0))
        print(f"evolution aborted: {trace.failure}", file=sys.stderr)
        return EXIT_NUMERIC
    summary.add(Diagnostic("trace_valid", "PASS", 0.0, 0.0))
    return EXIT_PASS


# ---------------------------------------------------------------- verify modes

def run_verify_degree(cfg: RunConfig, out: Path, summary: Summary) -> None:
    d = cfg.diagnostics
    s = vf.degree_suite(cfg.build_grid(), d.degree_maps, cfg.seed)
    summary.add(_check("deg_eq_mult", s.max_discrepancy, 0))
    summary.add(_check("degree_doubling_max", abs(s.doubling_max_degree - 2), 0))
    summary.add(_check("degree_flood_fill", s.flood_fill_bad, 0))
    summary.add(_check("nested_ball_images", s.nested_violations, 0))
    summary.add(_check("change_of_variables_affine", s.affine_cov_residual, s.affine_cov_bound))
    _, slopes = vf.change_of_variables_slopes(3, cfg.seed)
    summary.add(_check("change_of_variables_order", max(0.0, 0.9 - float(slopes.min())), 0.0))
    summary.add(_check("ciarlet_necas_injective", s.cn_injective_ratio, 1.0, d.ciarlet_necas))
    summary.add(_check("ciarlet_necas_doubling", max(0.0, 0.5 - s.cn_doubling_ratio), 0.0, d.ciarlet_necas))


def run_verify_energy(cfg: RunConfig, out: Path, summary: Summary) -> None:
    d = cfg.diagnostics
    g = vf.gradient_suite(cfg.build_grid(), d.energy_states, cfg.seed, cfg.material,
                          with_maxwell=cfg.maxwell.enabled)
    for k in ("E_el", "E_exc", "L", "B"):
        summary.add(_check(f"gradient_{k}", g.errors[k], d.fd_tol))
    if cfg.maxwell.enabled:
        summary.add(_check("gradient_E_mag", g.errors["E_mag"], d.fd_tol_mag))
    else:
        summary.add(Diagnostic("gradient_E_mag", "SKIPPED"))
    _, orders = vf.div_identity_orders(cfg.seed)
    summary.add(_check("div_identities_order", max(0.0, 1.9 - float(orders.min())), 0.0))
    q0 = cfg.initial_state()
    summary.add(_check("saturation", ev.saturation_defect(q0), d.saturation_tol, d.saturation))
    if cfg.maxwell.enabled:
        ctx = _maxwell_context(cfg, q0)
        sol = ctx.energy(q0, with_grad=False)[3]
        e0 = solve_stray_field(np.zeros(ctx.eg.shape + (2,)), ctx.eg).E_mag
        summary.add(_check("stray_field_zero", abs(e0), 0.0))
        summary.add(_check("maxwell_residual", sol.residual, cfg.maxwell.residual_tol))
    else:
        summary.add(Diagnostic("stray_field_zero", "SKIPPED"))
        summary.add(Diagnostic("maxwell_residual", "SKIPPED"))


def run_verify_balance(cfg: RunConfig, out: Path, summary: Summary) -> int:
    """Configured evolution with its balance diagnostics, plus the built-in negative controls."""
    code = run_evolve(cfg, out, summary)
    sc = reverse_ramp()
    tr = ev.run_evolution(sc.q0, ev.Partition.uniform(sc.T, sc.steps), sc.loads, sc.params, sc.ctx)
    a = ev.check_apriori_bound(tr, eta_factor=0.5)
    summary.add(_check("apriori_negative_control", max(0.0, a.min_slack), 0.0))
    # corrupt one stored state: the balance check must flag it
    bad = tr.records[2].state.copy()
    bad.theta = bad.theta + 2.0
    tr.records[2] = replace(tr.records[2], state=bad)
    b = ev.check_energy_balance(tr)
    summary.add(_check("balance_negative_control", 0.0 if b.max_residual > b.tol else 1.0, 0.0))
    return code


# ---------------------------------------------------------------- entry point

def run_command(mode: str, cfg: RunConfig, out: Path) -> int:
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    out.mkdir(parents=True, exist_ok=True)
    summary = Summary(out / cfg.output.summary)
    summary.flush()
    try:
        if mode == "static":
            code = run_static(cfg, out, summary) or EXIT_PASS
        elif mode == "evolve":
            code = run_evolve(cfg, out, summary)
        elif mode == "verify-degree":
            code = run_verify_degree(cfg, out, summary) or EXIT_PASS
        elif mode == "verify-energy":
            code = run_verify_energy(cfg, out, summary) or EXIT_PASS
        else:
            code = run_verify_balance(cfg, out, summary)
    except (ConfigurationError, PreconditionError):
        raise
    except MagelError as exc:
        summary.add(Diagnostic("numerical_failure", "FAIL", getattr(exc, "residual", float("nan")), 0.0))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if code != EXIT_PASS:
        return code
    return EXIT_PASS if summary.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magel", description="2D magnetoelastic energies, evolution and checks.")
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--config", help="TOML run configuration (defaults apply when omitted)")
    p.add_argument("--output-dir", help="override output.dir")
    p.add_argument("--seed", type=int, help="override seed")
    p.add_argument("--workers", type=int, help="override workers")
    p.add_argument("--maxwell-padding", type=float, help="override maxwell.padding")
    p.add_argument("--maxwell-tol", type=float, help="override maxwell.tol")
    p.add_argument("--maxwell-maxiter", type=int, help="override maxwell.maxiter")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.output_dir is not None:
        cfg.output = replace(cfg.output, dir=args.output_dir)
    mx = {}
    if args.maxwell_padding is not None:
        mx["padding"] = args.maxwell_padding
    if args.maxwell_tol is not None:
        mx["tol"] = args.maxwell_tol
    if args.maxwell_maxiter is not None:
        mx["maxiter"] = args.maxwell_maxiter
    if mx:
        cfg.maxwell = replace(cfg.maxwell, **mx)
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        cfg = _apply_overrides(cfg, args)
        return run_command(args.mode, cfg, Path(cfg.output.dir))
    except (ConfigurationError, PreconditionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
