from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magel.errors import ConfigurationError
from magel.grid import (build_grid, deformation_gradient, identity_state, integrate, minors, state_from_map,
                        check_div_identities)
from magel.verify import div_identity_orders


def test_build_grid_examples():
    g = build_grid(2, 2, (0, 0), (1, 1))
    assert g.n_cells == 4 and g.h == 0.5 and g.area == pytest.approx(1.0)
    g = build_grid(3, 2, (0, 0), (3, 2))
    assert g.n_cells == 6 and g.hx == 1.0 and g.hy == 1.0
    with pytest.raises(ConfigurationError, match="nx too small"):
        build_grid(1, 4)


def test_identity_gradient():
    g = build_grid(4, 3)
    s = identity_state(g)
    F = s.gradients()
    assert np.allclose(F, np.eye(2), atol=1e-14)


@given(st.lists(st.floats(-0.4, 0.4), min_size=6, max_size=6))
def test_affine_gradient_exact(v):
    A = np.eye(2) + np.array(v[:4]).reshape(2, 2)
    c = np.array(v[4:])
    g = build_grid(5, 4, (0.2, -0.1), (1.3, 0.7))
    s = state_from_map(g, lambda x: x @ A.T + c)
    assert np.max(np.abs(s.gradients() - A)) < 1e-12


def test_quadratic_gradient_at_center():
    # y = (x1^2, x2) on a cell spanning [0.25, 0.75]: bilinear interpolant has slope 1 at 0.5
    g = build_grid(2, 2, (0.25, 0.25), (1.0, 1.0))
    s = state_from_map(g, lambda x: np.stack([x[:, 0] ** 2, x[:, 1]], axis=1))
    F = deformation_gradient(g, s.y, 0, (0.5, 0.5))
    assert np.allclose(F, [[2 * 0.5, 0.0], [0.0, 1.0]], atol=1e-14)


def test_minors_examples():
    F, cof, det = minors(np.eye(2))
    assert det == 1.0 and np.allclose(cof, np.eye(2))
    F, cof, det = minors(np.diag([2.0, 3.0]))
    assert det == pytest.approx(6.0) and np.allclose(cof, np.diag([3.0, 2.0]))
    assert np.allclose(F @ cof.T, det * np.eye(2))
    phi = 0.7
    R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    assert minors(R)[2] == pytest.approx(1.0)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_cofactor_identity(v):
    F = np.array(v).reshape(2, 2)
    _, cof, det = minors(F)
    assert np.allclose(F @ cof.T, det * np.eye(2), atol=1e-12)


def test_integrate_area_and_moment():
    g = build_grid(6, 6)
    s = identity_state(g)
    assert integrate(g, s.jacobians()) == pytest.approx(1.0, abs=1e-14)


def test_div_identity_zero_psi():
    g = build_grid(6, 6)
    s = identity_state(g)
    zero = lambda p: np.zeros_like(p)
    r = check_div_identities(g, s.y, zero, lambda p: np.zeros(len(p)),
                             lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]), zero)
    assert r == 0.0


def test_div_identity_order_gauss():
    res, orders = div_identity_orders(seed=3)
    assert np.all(res[1:] < res[:-1])
    assert orders.min() >= 1.9
