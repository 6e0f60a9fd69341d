"""Acceptance criteria: one PASS/FAIL line per criterion.

The lines are printed as each test finishes and repeated in the pytest
terminal summary.  Criteria 1, 7, 8 and 10 share one 32x32 field-ramp run.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from magel import degree as dg
from magel import evolution as ev
from magel.grid import build_grid
from magel.maxwell import EulerianGrid, build_eulerian_grid, solve_stray_field
from magel.scenarios import doubled_annulus, field_ramp, random_admissible_state, trivial_equilibrium
from magel.verify import (change_of_variables_slopes, degree_suite, disc_oracle, div_identity_orders, gradient_suite,
                          image_perimeter)

SEED = 2024


def report(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _ramp():
    sc = field_ramp(n=32, steps=20)
    t0 = time.perf_counter()
    tr = ev.run_evolution(sc.q0, ev.Partition.uniform(sc.T, sc.steps), sc.loads, sc.params, sc.ctx)
    return tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ramp():
    tr, elapsed = _ramp()
    # the checks below annotate the records, so keep the trace as first written
    return tr, elapsed, tr.csv_text()


@pytest.mark.slow
def test_c01_saturation(ramp):
    tr, elapsed, _ = ramp
    defect = max(ev.saturation_defect(r.state) for r in tr.records)
    ok = tr.valid and len(tr.records) == 21 and defect <= 1e-12 and elapsed <= 600
    report(1, "saturation exactness", ok, f"max defect {defect:.2e} over {len(tr.records)} states, {elapsed:.0f} s")


def test_c02_degree_equals_multiplicity():
    t0 = time.perf_counter()
    s = degree_suite(build_grid(16, 16), 100, SEED)
    elapsed = time.perf_counter() - t0
    ok = s.max_discrepancy == 0 and s.doubling_max_degree == 2 and elapsed <= 120
    report(2, "degree = multiplicity", ok,
           f"max |deg - mult| {s.max_discrepancy} over {s.maps} maps + angle doubling "
           f"(max degree {s.doubling_max_degree}), {elapsed:.1f} s")


def test_c03_change_of_variables():
    levels = (16, 32, 64)
    res, slopes = change_of_variables_slopes(10, SEED, levels)
    h = 1.0 / np.asarray(levels, dtype=float)
    C = float(np.max(res / h[None]))
    g = build_grid(16, 16)
    A = np.array([[1.3, 0.2], [-0.1, 0.8]])
    from magel.grid import state_from_map

    s = state_from_map(g, lambda x: x @ A.T + 0.1)
    eg = build_eulerian_grid(s, 1.0)
    _, _, r_aff = dg.change_of_variable(s, None, lambda p: np.ones(len(p)), eg)
    bound = 1e-12 + image_perimeter(s) * eg.diagonal
    ok = slopes.min() >= 0.9 and r_aff <= bound
    report(3, "change of variables", ok,
           f"min slope {slopes.min():.2f} (C = {C:.3g}), affine residual {r_aff:.2e} <= {bound:.2e}")


def test_c04_divergence_identities():
    # 8x8 is pre-asymptotic for some maps (signed error near a sign change)
    res, orders = div_identity_orders(SEED, levels=(16, 32, 64))
    report(4, "divergence identities", orders.min() >= 1.9,
           f"orders {', '.join(f'{o:.2f}' for o in orders)}, residuals {res[0]:.2e} -> {res[-1]:.2e}")


def test_c05_ciarlet_necas():
    rng = np.random.default_rng(np.random.SeedSequence([SEED, 5]))
    g = build_grid(16, 16)
    worst = 0.0
    for _ in range(50):
        s = random_admissible_state(g, rng, 0.02)
        eg = build_eulerian_grid(s, 1.0)
        worst = max(worst, abs(dg.ciarlet_necas_residual(s, eg)) / (2 * max(eg.hx, eg.hy) * image_perimeter(s)))
    ann, eg2, doubled = doubled_annulus()
    ratio = dg.ciarlet_necas_residual(ann, eg2) / doubled
    ok = worst <= 1.0 and ratio >= 0.5
    report(5, "Ciarlet-Necas", ok,
           f"injective max residual / (2 h perimeter) {worst:.3f}, doubled annulus residual / area {ratio:.3f}")


def test_c06_gradient_consistency():
    r = gradient_suite(build_grid(8, 8), 50, SEED)
    e = r.errors
    ok = all(e[k] <= 1e-5 for k in ("E_el", "E_exc", "L", "B")) and e["E_mag"] <= 5e-4
    report(6, "gradient consistency", ok, ", ".join(f"{k} {v:.1e}" for k, v in e.items()) + f" over {r.states} states")


@pytest.mark.slow
def test_c07_stray_field(ramp):
    eg = EulerianGrid((0.0, 0.0), 0.1, 0.1, 30, 30, 1.0)
    e0 = solve_stray_field(np.zeros(eg.shape + (2,)), eg).E_mag
    d = disc_oracle()
    tr, _, _ = ramp
    worst_res = tr.ctx.max_residual
    ok = e0 == 0.0 and d.rel_error <= 0.02 and worst_res <= 1e-10 and tr.ctx.solves > 0
    report(7, "stray-field physics", ok,
           f"E_mag(m=0) = {e0}, disc {d.base:.5f} vs oracle {d.oracle:.5f} ({100 * d.rel_error:.2f}%, "
           f"pi R^2/4 = {d.exact:.5f}), max residual {worst_res:.1e} over {tr.ctx.solves} solves")


@pytest.mark.slow
def test_c08_incremental_scheme(ramp):
    tr, elapsed, _ = ramp
    t0 = time.perf_counter()
    descent = max(r.report.objective_new - r.report.objective_prev for r in tr.records[1:])
    bal = ev.check_energy_balance(tr, 1e-6)
    checked = [5, 10, 15, 20]
    margins = [ev.check_stability(tr, k, 50, SEED).min_margin for k in checked]
    apr = ev.check_apriori_bound(tr)
    total = elapsed + time.perf_counter() - t0
    var = tr.records[-1].Var_cum
    ok = (tr.valid and descent <= 1e-12 and bal.max_residual <= bal.tol and min(margins) >= -1e-8
          and apr.min_slack >= 0 and var > 0 and total <= 600)
    report(8, "incremental scheme", ok,
           f"max descent {descent:.1e}, max balance residual {bal.max_residual:.1e} (tol {bal.tol:.1e}), "
           f"min stability margin {min(margins):.1e} at steps {checked}, min a-priori slack {apr.min_slack:.1e}, "
           f"Var_D {var:.3f}, {total:.0f} s")


def test_c09_trivial_equilibrium():
    sc = trivial_equilibrium(n=8, steps=10)
    tr = ev.run_evolution(sc.q0, ev.Partition.uniform(sc.T, sc.steps), sc.loads, sc.params, sc.ctx)
    F = np.array([r.energy.F_total for r in tr.records])
    spread = float(F.max() - F.min())
    var = tr.records[-1].Var_cum
    ok = tr.valid and len(tr.records) == 11 and spread <= 1e-10 and var == 0.0
    report(9, "trivial equilibrium", ok, f"F spread {spread:.1e}, total dissipation {var}")


@pytest.mark.slow
def test_c10_determinism(ramp):
    _, _, first = ramp
    again, _ = _ramp()
    same = again.csv_text() == first
    report(10, "determinism", same, "trace CSVs " + ("bit-identical" if same else "differ"))
