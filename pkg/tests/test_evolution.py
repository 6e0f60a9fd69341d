from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magel import evolution as ev
from magel.energy import EnergyBreakdown, LoadSchedule, MaterialParams, total_energy
from magel.errors import ConfigurationError, PreconditionError
from magel.grid import State, build_grid, identity_state, state_from_map
from magel.optimize import lbfgs
from magel.scenarios import field_ramp, reverse_ramp, trivial_equilibrium


@pytest.fixture(scope="module")
def ramp_trace():
    sc = field_ramp(n=8, steps=4, amplitude="3*t", maxwell=False)
    return ev.run_evolution(sc.q0, ev.Partition.uniform(1.0, 4), sc.loads, sc.params, sc.ctx)


@pytest.fixture(scope="module")
def still_trace():
    sc = trivial_equilibrium(n=6, steps=4)
    return ev.run_evolution(sc.q0, ev.Partition.uniform(1.0, 4), sc.loads, sc.params, sc.ctx)


# ---------------------------------------------------------------- dissipation

def test_dissipation_examples():
    g = build_grid(6, 6)
    e1 = identity_state(g, 0.0)
    assert ev.dissipation(e1, e1)[0] == 0.0
    assert ev.dissipation(e1, identity_state(g, np.pi))[0] == pytest.approx(2.0, abs=1e-14)
    assert ev.dissipation(e1, identity_state(g, np.pi / 2))[0] == pytest.approx(np.sqrt(2.0), abs=1e-14)
    with pytest.raises(PreconditionError):
        ev.dissipation(e1, identity_state(build_grid(4, 4)))


angles = st.lists(st.floats(-10, 10), min_size=16, max_size=16)


@given(angles, angles, angles)
def test_dissipation_pseudo_distance(a, b, c):
    g = build_grid(4, 4)
    q1, q2, q3 = (identity_state(g, np.array(v)) for v in (a, b, c))
    d12, d21 = ev.dissipation(q1, q2)[0], ev.dissipation(q2, q1)[0]
    assert d12 == d21 >= 0.0
    assert ev.dissipation(q1, q1)[0] == 0.0
    assert ev.dissipation(q1, q3)[0] <= d12 + ev.dissipation(q2, q3)[0] + 1e-12
    # translations do not dissipate
    moved = State(g, q1.y + 0.3, q1.theta)
    assert ev.dissipation(q1, moved)[0] == 0.0


@given(angles, angles, st.floats(1e-6, 1e-1))
def test_smoothed_dissipation_below_exact(a, b, eps):
    g = build_grid(4, 4)
    exact, smooth = ev.dissipation(identity_state(g, np.array(a)), identity_state(g, np.array(b)), eps)
    assert smooth <= exact + 1e-15
    assert exact - smooth <= eps * g.area + 1e-12


# ---------------------------------------------------------------- partition and variation

def test_partition_validation():
    assert ev.Partition.uniform(2.0, 4).times == (0.0, 0.5, 1.0, 1.5, 2.0)
    with pytest.raises(ConfigurationError):
        ev.Partition((0.0, 0.5, 0.5))
    with pytest.raises(ConfigurationError):
        ev.Partition((0.1, 0.5))


def _manual_trace(thetas, times):
    g = build_grid(4, 4)
    recs, var = [], 0.0
    loads = LoadSchedule.constant(times[-1])
    for i, (th, t) in enumerate(zip(thetas, times)):
        q = identity_state(g, th)
        d = ev.dissipation(recs[-1].state, q)[0] if recs else 0.0
        var += d
        recs.append(ev.StepRecord(i, t, q, EnergyBreakdown(0, 0, 0, 0, 0), d, d, var, None))
    return ev.EvolutionTrace(recs, loads, MaterialParams())


def test_variation_examples():
    tr = _manual_trace([0.0, np.pi], [0.0, 1.0])
    assert ev.variation(tr, 0.0, 1.0) == pytest.approx(2.0)
    tr = _manual_trace([0.0, 0.0, np.pi / 2, np.pi / 2, np.pi], [0.0, 0.25, 0.5, 0.75, 1.0])
    assert ev.variation(tr, 0.5, 0.75) == 0.0
    whole = ev.variation(tr, 0.0, 1.0)
    assert whole == pytest.approx(sum(r.D_inc for r in tr.records))
    for t in tr.times[1:-1]:
        assert ev.variation(tr, 0.0, t) + ev.variation(tr, t, 1.0) == pytest.approx(whole, rel=1e-14)
    with pytest.raises(PreconditionError):
        ev.variation(tr, 0.5, 0.5)


# ---------------------------------------------------------------- incremental step

def test_equilibrium_step_is_fixed_point():
    sc = trivial_equilibrium(n=6)
    q, rep = ev.incremental_step(sc.q0, 0.1, sc.loads, sc.params)
    assert np.array_equal(q.y, sc.q0.y) and np.array_equal(q.theta, sc.q0.theta)
    assert rep.objective_new - rep.objective_prev <= 1e-12


def test_ramp_rotates_director(ramp_trace):
    assert ramp_trace.valid
    z0 = ramp_trace.records[0].state.z
    z1 = ramp_trace.records[-1].state.z
    assert np.mean(z1[:, 0]) > np.mean(z0[:, 0]) + 0.1
    assert ramp_trace.records[-1].Var_cum > 0
    for r in ramp_trace.records[1:]:
        assert r.report.objective_new <= r.report.objective_prev + 1e-12


def test_stretch_keeps_saturation():
    g = build_grid(6, 6)
    loads = LoadSchedule.from_expressions([0.0, 1.0], d=("x1 * (1 + 0.2*t)", "x2"), gamma=("left", "right"))
    q, _ = ev.incremental_step(identity_state(g, 0.3), 1.0, loads, MaterialParams())
    J = q.jacobians()
    assert J.max() > 1.0 + 1e-3
    m_norm = 1.0 / J  # |m o y| = |z| / det Dy
    assert m_norm.min() < 1.0
    assert ev.saturation_defect(q) <= 1e-12


def test_kkt_residual_small_after_step(ramp_trace):
    last = ramp_trace.records[-1]
    prev = ramp_trace.records[-2]
    r = ev.kkt_residual(last.state, prev.state, last.t, ramp_trace.loads, ramp_trace.params, None)
    assert r <= ev.StepOptions().grad_tol


# ---------------------------------------------------------------- evolution and checks

def test_constant_loads_trace(still_trace):
    F = [r.energy.F_total for r in still_trace.records]
    assert max(F) - min(F) <= 1e-10
    assert still_trace.records[-1].Var_cum == 0.0
    assert np.all(np.abs(ev.check_energy_balance(still_trace).residuals) <= 1e-10)
    assert ev.check_apriori_bound(still_trace).passed


def test_stability_checks(still_trace, ramp_trace):
    rec = ramp_trace.records[-1]
    assert ev.stability_margin(rec.state, rec.state, rec.t, ramp_trace.loads, ramp_trace.params, None) == 0.0
    rep = ev.check_stability(still_trace, 2, 12, seed=1)
    assert rep.min_margin >= -1e-8
    rep = ev.check_stability(ramp_trace, 4, 12, seed=1)
    assert rep.min_margin >= -1e-8


def test_stability_workers_deterministic(ramp_trace):
    a = ev.check_stability(ramp_trace, 2, 10, seed=3, workers=1)
    b = ev.check_stability(ramp_trace, 2, 10, seed=3, workers=3)
    assert np.array_equal(a.margins, b.margins) and a.kinds == b.kinds


def _corrupt(trace, k, theta_shift=0.0, y_shift=0.0):
    recs = list(trace.records)
    bad = recs[k].state.copy()
    bad.theta = bad.theta + theta_shift
    bad.y = bad.y + y_shift * np.sin(7 * bad.y[:, ::-1])
    br = total_energy(bad, trace.loads, recs[k].t, trace.params, trace.ctx)
    recs[k] = replace(recs[k], state=bad, energy=br)
    return ev.EvolutionTrace(recs, trace.loads, trace.params, trace.ctx)


def test_corrupted_trace_detected(ramp_trace):
    bad = _corrupt(ramp_trace, 2, y_shift=0.02)
    rep = ev.check_stability(bad, 2, 6, seed=0)
    assert rep.min_margin < -1e-8 and rep.kinds[int(np.argmin(rep.margins))] == "relax"
    # the upper balance estimate has slack, so the corruption must exceed it
    bal = ev.check_energy_balance(_corrupt(ramp_trace, 2, theta_shift=1.0))
    assert bal.residuals[1] > bal.tol


def test_apriori_negative_control():
    sc = reverse_ramp()
    tr = ev.run_evolution(sc.q0, ev.Partition.uniform(sc.T, sc.steps), sc.loads, sc.params, sc.ctx)
    assert ev.check_apriori_bound(tr).passed
    assert not ev.check_apriori_bound(tr, eta_factor=0.5).passed


def test_balance_holds_on_ramp(ramp_trace):
    bal = ev.check_energy_balance(ramp_trace)
    assert bal.passed
    assert np.all([r.balance_residual <= bal.tol for r in ramp_trace.records])


def test_refinement_drift_reported(ramp_trace):
    sc = field_ramp(n=8, steps=8, amplitude="3*t", maxwell=False)
    fine = ev.run_evolution(sc.q0, ev.Partition.uniform(1.0, 8), sc.loads, sc.params, None)
    drift = abs(fine.records[-1].Var_cum - ramp_trace.records[-1].Var_cum)
    assert np.isfinite(drift)


def test_resume_prefix_reproduces_run(ramp_trace):
    sc = field_ramp(n=8, steps=4, amplitude="3*t", maxwell=False)
    resumed = ev.run_evolution(sc.q0, ev.Partition.uniform(1.0, 4), sc.loads, sc.params, None,
                               prefix=ramp_trace.records[:3])
    assert resumed.csv_text() == ramp_trace.csv_text()


def test_trace_csv_roundtrip(tmp_path, ramp_trace):
    p = tmp_path / "trace.csv"
    ramp_trace.write_csv(p)
    rows = ev.read_trace_csv(p)
    assert len(rows) == len(ramp_trace.records)
    for row, rec in zip(rows, ramp_trace.records):
        assert row["F"] == rec.energy.F_total and row["i"] == rec.i and row["Var_cum"] == rec.Var_cum


def test_saturation_everywhere(ramp_trace):
    assert max(ev.saturation_defect(r.state) for r in ramp_trace.records) <= 1e-12


def test_static_minimize_equilibrium():
    sc = trivial_equilibrium(n=6)
    q, res = ev.static_minimize(sc.q0, 0.0, sc.loads, sc.params, None)
    assert res.grad_norm <= 1e-7
    assert np.max(np.abs(q.y - sc.q0.y)) < 1e-6


def test_lbfgs_quadratic_with_preconditioner():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(20, 20))
    A = M @ M.T + 20 * np.eye(20)
    b = rng.normal(size=20)

    def fun(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b

    d = np.diag(A)
    res = lbfgs(fun, np.zeros(20), gtol=1e-10, maxiter=500, precond=lambda v: v / d)
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


def test_lbfgs_rejects_barrier():
    # +inf outside x > 0: the line search must stay feasible
    def fun(x):
        if np.any(x <= 0):
            return np.inf, np.full_like(x, np.nan)
        return float(np.sum(x - np.log(x))), 1.0 - 1.0 / x

    res = lbfgs(fun, np.full(3, 5.0), gtol=1e-10, maxiter=200)
    assert np.allclose(res.x, 1.0, atol=1e-8)
