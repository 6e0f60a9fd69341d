from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magel import _backend, _kernels_py
from magel.grid import build_grid, state_from_map
from magel.maxwell import build_eulerian_grid
from magel.scenarios import perturbed_identity_map

core = pytest.importorskip("magel._core")


def _setup(seed, n):
    rng = np.random.default_rng(seed)
    g = build_grid(n, n)
    s = state_from_map(g, perturbed_identity_map(rng, 0.03), rng.uniform(-3, 3, g.n_cells))
    eg = build_eulerian_grid(s, 0.5)
    return rng, s, eg, (eg.origin[0], eg.origin[1], eg.hx, eg.hy, eg.mx, eg.my)


def test_compiled_backend_selected_by_default():
    assert _backend.BACKEND == "compiled"


def test_env_forces_python_fallback():
    env = dict(os.environ, MAGEL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from magel import _backend; print(_backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@given(st.integers(0, 10_000), st.integers(3, 9))
def test_locate_preimages_agree(seed, n):
    _, s, eg, box = _setup(seed, n)
    a = _kernels_py.locate_preimages(s.corners(), *box)
    b = core.locate_preimages(np.ascontiguousarray(s.corners()), *box)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.allclose(a[2], b[2], atol=1e-12)


@given(st.integers(0, 10_000), st.integers(8, 80))
def test_polyline_kernels_agree(seed, npts):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 2 * np.pi, npts))
    r = 1 + 0.3 * rng.uniform(-1, 1, npts)
    poly = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    poly = np.concatenate([poly, poly[:1]])
    pts = rng.uniform(-2, 2, (50, 2))
    assert np.allclose(_kernels_py.winding_numbers(poly, pts), core.winding_numbers(poly, pts), atol=1e-12)
    assert np.allclose(_kernels_py.polyline_distance(poly, pts), core.polyline_distance(poly, pts), atol=1e-13)


@given(st.integers(0, 10_000), st.integers(2, 20), st.integers(2, 20), st.floats(0.1, 3), st.floats(0.1, 3))
def test_laplacian_agree(seed, mx, my, hx, hy):
    u = np.random.default_rng(seed).normal(size=(my, mx))
    assert np.allclose(_kernels_py.laplacian_apply(u, hx, hy), core.laplacian_apply(u, hx, hy), atol=1e-12)


@given(st.integers(0, 10_000), st.integers(3, 8))
def test_deposit_agree(seed, n):
    rng, s, eg, box = _setup(seed, n)
    pts = np.ascontiguousarray(rng.uniform(0.1, 0.9, (40, 2)))
    vals = rng.normal(size=(40, 2))
    a = _kernels_py.bspline_deposit(pts, vals, *box)
    b = core.bspline_deposit(pts, vals, *box)
    assert np.allclose(a, b, atol=1e-13)
    gm = rng.normal(size=(eg.mx * eg.my, 2))
    zp = rng.normal(size=(40, 2))
    da, ga = _kernels_py.bspline_deposit_adjoint(pts, vals, zp, gm, *box)
    db, gb = core.bspline_deposit_adjoint(pts, vals, zp, gm, *box)
    assert np.allclose(da, db, atol=1e-12) and np.allclose(ga, gb, atol=1e-12)


@given(st.integers(0, 10_000))
def test_deposit_adjoint_identity(seed):
    # <deposit(vals), gm> = <vals, adjoint(gm)> for the value part
    rng, s, eg, box = _setup(seed, 4)
    pts = np.ascontiguousarray(rng.uniform(0.1, 0.9, (30, 2)))
    vals = rng.normal(size=(30, 2))
    gm = rng.normal(size=(eg.mx * eg.my, 2))
    lhs = float(np.sum(core.bspline_deposit(pts, vals, *box) * gm))
    # the adjoint's second output is the derivative along zp, so use zp = vals
    _, g = core.bspline_deposit_adjoint(pts, vals, vals, gm, *box)
    assert np.sum(g) == pytest.approx(lhs, rel=1e-10, abs=1e-12)
