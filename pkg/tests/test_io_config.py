from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magel import fields as fl
from magel.config import RunConfig, load_config, parse_config
from magel.errors import ConfigurationError
from magel.grid import State, build_grid
from magel.io import format_snapshot, parse_snapshot, read_snapshot, write_snapshot

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.integers(2, 5), st.integers(2, 5), st.floats(0.1, 3), st.floats(0.1, 3), finite, finite, st.data())
def test_snapshot_roundtrip_bit_exact(nx, ny, ex, ey, ox, oy, data):
    g = build_grid(nx, ny, (ox, oy), (ex, ey))
    y = np.array(data.draw(st.lists(finite, min_size=2 * g.n_nodes, max_size=2 * g.n_nodes))).reshape(-1, 2)
    th = np.array(data.draw(st.lists(finite, min_size=g.n_cells, max_size=g.n_cells)))
    s = State(g, y, th)
    back = parse_snapshot(format_snapshot(s), grid=g)
    assert np.array_equal(back.y, s.y) and np.array_equal(back.theta, s.theta)
    fresh = parse_snapshot(format_snapshot(s))
    assert fresh.grid.nx == nx and fresh.grid.ny == ny
    assert np.array_equal(fresh.y, s.y)


def test_snapshot_header_and_files(tmp_path):
    g = build_grid(2, 2)
    s = State(g, g.nodes.copy(), np.zeros(4))
    text = format_snapshot(s)
    assert text.splitlines()[0] == "2 2 0.5 0 0"
    write_snapshot(tmp_path / "a.snap", s)
    assert np.array_equal(read_snapshot(tmp_path / "a.snap").y, s.y)
    g2 = build_grid(2, 2, (0, 0), (1.0, 2.0))
    assert len(format_snapshot(State(g2, g2.nodes.copy(), np.zeros(4))).splitlines()[0].split()) == 6


@pytest.mark.parametrize("text, msg", [
    ("", "empty"),
    ("2 2 0.5 0\n", "header"),
    ("2 2 0.5 0 0\n0 0\n", "rows"),
    ("2 2 0.5 0 0\n" + "0 x\n" * 9 + "0\n" * 4, "bad snapshot value"),
])
def test_snapshot_errors(text, msg):
    with pytest.raises(ConfigurationError, match=msg):
        parse_snapshot(text)


def test_snapshot_grid_mismatch():
    g = build_grid(2, 2)
    s = State(g, g.nodes.copy(), np.zeros(4))
    with pytest.raises(ConfigurationError, match="does not match"):
        parse_snapshot(format_snapshot(s), grid=build_grid(2, 2, (0.1, 0), (1, 1)))


def test_minimal_config_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.grid.nx == 16 and cfg.maxwell.padding == 1.0 and cfg.partition.steps == 20
    assert cfg.diagnostics.balance_tol == 1e-6 and cfg.diagnostics.stability_competitors == 50


def test_unknown_key_named():
    with pytest.raises(ConfigurationError, match="unknown key material.gamma_exponent"):
        parse_config("[material]\ngamma_exponent = 2\n")
    with pytest.raises(ConfigurationError, match="unknown key bogus"):
        parse_config("bogus = 1\n")


def test_all_violations_reported():
    with pytest.raises(ConfigurationError) as exc:
        parse_config("[diagnostics]\nbalance_tol = -1.0\nfd_tol = -2.0\n[maxwell]\npadding = 0\n")
    msg = str(exc.value)
    assert "diagnostics.balance_tol" in msg and "diagnostics.fd_tol" in msg and "maxwell.padding" in msg


def test_type_and_syntax_errors():
    with pytest.raises(ConfigurationError, match="expected an integer"):
        parse_config("[grid]\nnx = 'eight'\n")
    with pytest.raises(ConfigurationError, match="line 1"):
        parse_config("[grid\n")
    with pytest.raises(ConfigurationError, match="unknown identifier"):
        parse_config("[loads]\nh = ['y', '0']\n")
    with pytest.raises(ConfigurationError, match="must not overlap"):
        parse_config("[loads]\ngamma = ['left']\nsigma = ['left']\n")


def test_config_builds_objects(tmp_path):
    text = """
seed = 4
[grid]
nx = 4
ny = 3
extent = [2.0, 1.5]
[initial]
deformation = ["x1 + 0.1*x2", "x2"]
theta = "pi/4"
[loads]
T = 2.0
h = ["t", "0"]
gamma = ["left", "bottom"]
[partition]
steps = 4
"""
    p = tmp_path / "run.toml"
    p.write_text(text)
    cfg = load_config(p)
    g = cfg.build_grid()
    assert (g.nx, g.ny, g.hx) == (4, 3, 0.5)
    q = cfg.initial_state(g)
    assert np.allclose(q.theta, np.pi / 4) and np.allclose(q.y[:, 0], g.nodes[:, 0] + 0.1 * g.nodes[:, 1])
    assert cfg.partition_obj().times == (0.0, 0.5, 1.0, 1.5, 2.0)
    loads = cfg.load_schedule()
    assert np.allclose(loads.field_at("h", 1.5)(np.zeros((1, 2))), [[1.5, 0.0]])


def test_load_tables():
    cfg = parse_config("[loads]\nh_table = [[0.0, 0.0, 0.0], [0.5, 1.0, 0.0], [1.0, 1.0, 2.0]]\n")
    loads = cfg.load_schedule()
    pt = np.zeros((1, 2))
    assert np.allclose(loads.field_at("h", 0.25)(pt), [[0.5, 0.0]])
    assert np.allclose(loads.field_at("h", 0.75)(pt), [[1.0, 1.0]])
    with pytest.raises(ConfigurationError, match="h_table"):
        parse_config("[loads]\nh_table = [[0.0, 0.0, 0.0], [0.5, 1.0, 0.0]]\n")


def test_with_overrides():
    cfg = parse_config("")
    assert cfg.with_overrides(seed=9).seed == 9 and cfg.seed == 0


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_expression_grammar(a, b):
    f = fl.vector_expression(("sin(x1)*x2^2 + 3", "exp(-x1) - cos(2*x2)/2"))
    p = np.array([[a, b]])
    expect = [np.sin(a) * b * b + 3, np.exp(-a) - np.cos(2 * b) / 2]
    assert np.allclose(f(p), [expect], rtol=1e-13, atol=1e-13)
    J = f.jacobian(p)
    assert np.allclose(J[0], [[np.cos(a) * b * b, 2 * np.sin(a) * b], [-np.exp(-a), np.sin(2 * b)]], atol=1e-6)


def test_expression_rejects_code():
    for bad in ("__import__('os')", "x1.real", "lambda: 0", "[x1]"):
        with pytest.raises(ConfigurationError):
            fl.parse_expression(bad)
    assert fl.expression_depends_on_time(("t", "0")) and not fl.expression_depends_on_time(("x1", "0"))
