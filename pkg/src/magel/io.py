"""Plain-text state snapshots.

Header ``nx ny h origin_x origin_y`` (a sixth token ``hy`` is added when the
cells are not square), then one ``y1 y2`` row per node in grid order and one
``theta`` row per cell.  Values are printed with 17 significant digits, so a
round trip is bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid import State, build_grid

_FMT = "%.17g"


def format_snapshot(state: State) -> str:
    g = state.grid
    head = [str(g.nx), str(g.ny), _FMT % g.hx, _FMT % g.origin[0], _FMT % g.origin[1]]
    if g.hy != g.hx:
        head.append(_FMT % g.hy)
    lines = [" ".join(head)]
    lines += [f"{_FMT % a} {_FMT % b}" for a, b in state.y]
    lines += [_FMT % v for v in state.theta]
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str, quadrature: str = "gauss2", grid=None) -> State:
    """State from snapshot text; with ``grid`` the header must match it and that grid is reused."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise ConfigurationError("snapshot is empty")
    head = rows[0]
    if len(head) not in (5, 6):
        raise ConfigurationError("snapshot header must read 'nx ny h origin_x origin_y [hy]'")
    try:
        nx, ny = int(head[0]), int(head[1])
        hx, ox, oy = float(head[2]), float(head[3]), float(head[4])
        hy = float(head[5]) if len(head) == 6 else hx
    except ValueError as exc:
        raise ConfigurationError(f"bad snapshot header: {exc}") from None
    if grid is None:
        grid = build_grid(nx, ny, (ox, oy), (nx * hx, ny * hy), quadrature)
    elif (nx, ny, hx, hy, ox, oy) != (grid.nx, grid.ny, grid.hx, grid.hy, grid.origin[0], grid.origin[1]):
        raise ConfigurationError("snapshot grid does not match the configured grid")
    body = rows[1:]
    if len(body) != grid.n_nodes + grid.n_cells:
        raise ConfigurationError(
            f"snapshot has {len(body)} rows, expected {grid.n_nodes} nodes + {grid.n_cells} cells")
    try:
        y = np.array([[float(a) for a in r] for r in body[: grid.n_nodes]])
        th = np.array([float(r[0]) for r in body[grid.n_nodes:]])
    except ValueError as exc:
        raise ConfigurationError(f"bad snapshot value: {exc}") from None
    if y.shape != (grid.n_nodes, 2) or any(len(r) != 1 for r in body[grid.n_nodes:]):
        raise ConfigurationError("snapshot rows have the wrong number of columns")
    return State(grid, y, th)


def write_snapshot(path, state: State) -> None:
    Path(path).write_text(format_snapshot(state))


def read_snapshot(path, quadrature: str = "gauss2", grid=None) -> State:
    return parse_snapshot(Path(path).read_text(), quadrature, grid)
