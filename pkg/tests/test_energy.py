from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magel.energy import (LoadSchedule, MaterialParams, boundary_penalty, coercivity_check, elastic_energy,
                          exchange_energy, load_work, phi_density, time_derivative, total_energy)
from magel.errors import ConfigurationError, InadmissibleStateError
from magel.grid import build_grid, identity_state, state_from_map, State
from magel.maxwell import MaxwellContext, build_eulerian_grid
from magel.verify import gradient_suite

P1 = MaterialParams(alpha=1.0, beta=1.0, p=2.0, a=1.0)


def test_elastic_hand_values():
    g = build_grid(4, 4)
    assert elastic_energy(identity_state(g), P1, False)[0] == pytest.approx(3.0, abs=1e-13)
    p4 = MaterialParams(alpha=4.0, beta=1.0, p=2.0, a=1.0)
    assert elastic_energy(identity_state(g, 0.0), p4, False)[0] == pytest.approx(81 / 16, abs=1e-13)
    s = state_from_map(g, lambda x: 2 * x)
    # Xi = 2I at every point and the reference area is 1
    assert float(phi_density(2 * np.eye(2), 2.0, 1.0)) == pytest.approx(8.25)
    assert elastic_energy(s, P1, False)[0] == pytest.approx(8.25, abs=1e-12)


def test_elastic_rejects_folds():
    g = build_grid(3, 3)
    s = state_from_map(g, lambda x: np.stack([-x[:, 0], x[:, 1]], axis=1))
    with pytest.raises(InadmissibleStateError):
        elastic_energy(s, P1)


@given(st.floats(0, 2 * np.pi), st.floats(-np.pi, np.pi))
def test_elastic_frame_indifference(phi, th):
    rng = np.random.default_rng(0)
    g = build_grid(4, 4)
    base = state_from_map(g, lambda x: x + 0.05 * np.sin(3 * x[:, ::-1]), rng.uniform(-3, 3, g.n_cells))
    R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    rot = State(g, base.y @ R.T, base.theta + phi)
    params = MaterialParams(alpha=1.3, beta=0.8)
    assert elastic_energy(rot, params, False)[0] == pytest.approx(elastic_energy(base, params, False)[0], rel=1e-12)


def test_exchange_examples():
    g = build_grid(8, 8)
    assert exchange_energy(identity_state(g, 0.7), False)[0] == pytest.approx(0.0, abs=1e-14)
    k = 2.0
    errs = []
    for n in (16, 32, 64):
        g = build_grid(n, n)
        s = identity_state(g, k * g.cell_centers[:, 0])
        errs.append(abs(exchange_energy(s, False)[0] - k * k))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 1.8
    g = build_grid(8, 8)
    th = np.random.default_rng(1).uniform(-3, 3, g.n_cells)
    a = exchange_energy(identity_state(g, th), False)[0]
    b = exchange_energy(state_from_map(g, lambda x: x + np.array([0.3, -2.0]), th), False)[0]
    assert a == pytest.approx(b, rel=1e-13)


def test_load_work_examples():
    g = build_grid(8, 8)
    zero = LoadSchedule.constant(1.0)
    assert load_work(identity_state(g), zero, 0.3, False)[0] == 0.0
    h = LoadSchedule.constant(1.0, h=("1", "0"))
    s = state_from_map(g, lambda x: x + 0.03 * np.sin(4 * x), 0.0)
    assert load_work(s, h, 0.5, False)[0] == pytest.approx(1.0, abs=1e-13)
    f = LoadSchedule.constant(1.0, f=("0", "1"))
    assert load_work(identity_state(g), f, 0.0, False)[0] == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_boundary_penalty_shift(p):
    g = build_grid(8, 8)
    params = MaterialParams(p=p)
    s = identity_state(g)
    exact = LoadSchedule.constant(1.0, gamma=("left", "bottom"))
    assert boundary_penalty(s, exact, 0.0, params, False)[0] == 0.0
    delta = 0.1
    shifted = LoadSchedule.constant(1.0, d=(f"x1 + {delta}", "x2"), gamma=("left", "bottom"))
    assert boundary_penalty(s, shifted, 0.0, params, False)[0] == pytest.approx(delta ** p * 2.0, rel=1e-12)


def test_total_energy_composition():
    g = build_grid(8, 8)
    s = identity_state(g, 0.0)
    ctx = MaxwellContext(build_eulerian_grid(s, 1.0))
    loads = LoadSchedule.constant(1.0)
    br = total_energy(s, loads, 0.0, P1, ctx)
    assert br.E_el == pytest.approx(3.0) and br.E_exc == 0.0 and br.L_work == 0.0 and br.B_pen == 0.0
    assert br.F_total == pytest.approx(3.0 + ctx.energy(s, False)[0], rel=1e-14)
    h = LoadSchedule.constant(1.0, h=("0.5", "0.25"))
    br2 = total_energy(s, h, 0.0, P1, ctx)
    assert br2.F_total == pytest.approx(br.F_total - br2.L_work, rel=1e-14)
    sh = LoadSchedule.constant(1.0, d=("x1 + 0.2", "x2"), gamma=("left",))
    br3 = total_energy(s, sh, 0.0, P1, ctx)
    assert br3.F_total - br.F_total == pytest.approx(0.2 ** 2 * 1.0, rel=1e-12)


def test_time_derivative_examples():
    g = build_grid(8, 8)
    s = identity_state(g, 0.0)
    const = LoadSchedule.constant(1.0, h=("1", "0"), f=("1", "2"))
    assert time_derivative(s, const, 0.5, P1)[0] == 0.0
    ramp_d = LoadSchedule.from_expressions(np.linspace(0, 1, 5), d=("x1 + 0.3*t", "x2"), gamma=("left",))
    moved = State(g, s.y + np.array([0.3 * 0.5, 0.0]), s.theta)
    assert time_derivative(moved, ramp_d, 0.5, P1)[0] == pytest.approx(0.0, abs=1e-14)
    ramp_h = LoadSchedule.from_expressions(np.linspace(0, 1, 5), h=("t", "0"))
    assert time_derivative(s, ramp_h, 0.3, P1)[0] == pytest.approx(-1.0, abs=1e-13)


def test_time_derivative_matches_fd():
    g = build_grid(6, 6)
    s = state_from_map(g, lambda x: x + 0.02 * np.sin(5 * x[:, ::-1]), np.linspace(-1, 1, g.n_cells))
    loads = LoadSchedule.from_expressions(np.linspace(0, 1, 11), f=("t*x2", "0.3*t"), g=("sin(t)", "t*x1"),
                                          h=("t", "0.5*t*t"), d=("x1 + 0.1*t", "x2"),
                                          gamma=("left",), sigma=("right",))
    t, e = 0.35, 1e-6
    fd = (total_energy(s, loads, t + e, P1).F_total - total_energy(s, loads, t - e, P1).F_total) / (2 * e)
    assert time_derivative(s, loads, t, P1)[0] == pytest.approx(fd, rel=1e-5)


def test_coercivity_examples():
    params = MaterialParams()
    ok, margin = coercivity_check(np.eye(2), (1.0, 0.0), params)
    assert ok and margin >= 0
    rng = np.random.default_rng(5)
    for _ in range(1000):
        F = np.eye(2) + rng.normal(size=(2, 2)) * 0.5
        if np.linalg.det(F) <= 0:
            F[:, 0] *= -1
        th = rng.uniform(-np.pi, np.pi)
        assert coercivity_check(F, (np.cos(th), np.sin(th)), MaterialParams(alpha=1.7, beta=0.6))[0]
    for s in (1e-1, 1e-3, 1e-6):
        assert coercivity_check(np.diag([s, 1.0]), (1.0, 0.0), params)[0]
    with pytest.raises(InadmissibleStateError):
        coercivity_check(np.diag([-1.0, 1.0]), (1.0, 0.0), params)


def test_material_validation():
    with pytest.raises(ConfigurationError, match="alpha"):
        MaterialParams(alpha=-1.0)
    with pytest.raises(ConfigurationError, match="a must"):
        MaterialParams(a=0.5)


def test_gradient_suite_small():
    r = gradient_suite(build_grid(6, 6), 4, seed=2)
    for k in ("E_el", "E_exc", "L", "B"):
        assert r.errors[k] <= 1e-5, k
    assert r.errors["E_mag"] <= 5e-4
