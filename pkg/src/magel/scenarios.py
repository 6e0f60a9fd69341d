"""Bundled test maps and standard evolution scenarios."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .degree import Rect
from .energy import LoadSchedule, MaterialParams
from .grid import RefGrid, State, build_grid, identity_state, state_from_map
from .maxwell import EulerianGrid, MaxwellContext, build_eulerian_grid


def perturbed_identity_map(rng: np.random.Generator, amp: float = 0.02, modes: int = 3,
                           linear: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """x -> A x + sum of smooth sine modes with random amplitudes ~ ``amp``."""
    a = rng.normal(size=(2, modes, modes)) * amp
    A = np.eye(2) + rng.normal(size=(2, 2)) * linear
    ph = rng.uniform(0.0, 2 * np.pi, size=(2, modes, modes))

    def ymap(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = x @ A.T
        for i in range(2):
            for p in range(modes):
                for q in range(modes):
                    out[:, i] += a[i, p, q] * np.sin(np.pi * (p + 1) * x[:, 0] + ph[i, p, q]) \
                        * np.sin(np.pi * (q + 1) * x[:, 1] + ph[i, q, p])
        return out

    return ymap


def random_admissible_state(grid: RefGrid, rng: np.random.Generator, amp: float = 0.02) -> State:
    """Perturbed identity with random angles; amplitude halves until admissible."""
    for _ in range(20):
        s = state_from_map(grid, perturbed_identity_map(rng, amp), rng.uniform(-np.pi, np.pi, grid.n_cells))
        if s.is_admissible(1e-3):
            return s
        amp *= 0.5
    return identity_state(grid, rng.uniform(-np.pi, np.pi, grid.n_cells))


def polar_map(k: int = 2) -> Callable[[np.ndarray], np.ndarray]:
    """(r, phi) -> r (cos k phi, sin k phi); covers each point k times per 2 pi / k."""
    def ymap(x):
        x = np.atleast_2d(x)
        return np.stack([x[:, 0] * np.cos(k * x[:, 1]), x[:, 0] * np.sin(k * x[:, 1])], axis=1)

    return ymap


@dataclass
class DoublingCase:
    state: State
    U: Rect
    eg: EulerianGrid


def angle_doubling_case(nr: int = 24, nphi: int = 160, cell: float = 0.02) -> DoublingCase:
    """Polar map on [1, 2] x [-1/2, 4 pi + 1/2]: U = (1.2, 1.8) x (0, 4 pi) wraps twice."""
    g = build_grid(nr, nphi, (1.0, -0.5), (1.0, 4 * np.pi + 1.0))
    s = state_from_map(g, polar_map(1))
    eg = build_eulerian_grid(s, 0.3, cell_size=(cell, cell))
    return DoublingCase(s, Rect((1.2, 0.0), (1.8, 4 * np.pi)), eg)


def doubled_annulus(nr: int = 24, nphi: int = 120, cell: float = 0.02) -> tuple[State, EulerianGrid, float]:
    """Annulus 1 < r < 2 covered twice; returns (state, grid, doubled area 3 pi)."""
    g = build_grid(nr, nphi, (1.0, 0.0), (1.0, 2 * np.pi))
    s = state_from_map(g, polar_map(2))
    return s, build_eulerian_grid(s, 0.3, cell_size=(cell, cell)), 3 * np.pi


# ---------------------------------------------------------------- evolution scenarios

@dataclass
class Scenario:
    q0: State
    loads: LoadSchedule
    params: MaterialParams
    ctx: MaxwellContext | None
    steps: int
    T: float = 1.0


def field_ramp(n: int = 32, steps: int = 20, amplitude: str = "t", maxwell: bool = True,
               alpha: float = 1.1) -> Scenario:
    """Applied field h = amplitude * e1, director starting along e2, left edge held."""
    g = build_grid(n, n)
    q0 = identity_state(g, np.pi / 2)
    loads = LoadSchedule.from_expressions(np.linspace(0.0, 1.0, steps + 1), h=(amplitude, "0"), gamma=("left",))
    ctx = MaxwellContext(build_eulerian_grid(q0, 1.0)) if maxwell else None
    return Scenario(q0, loads, MaterialParams(alpha=alpha, beta=1.0), ctx, steps)


def reverse_ramp(n: int = 8, steps: int = 5, maxwell: bool = False) -> Scenario:
    """Field h = -t e1 against a director along e1: energy grows like t, used as a negative control."""
    g = build_grid(n, n)
    q0 = identity_state(g, 0.0)
    loads = LoadSchedule.from_expressions(np.linspace(0.0, 1.0, steps + 1), h=("-t", "0"), gamma=("left",))
    ctx = MaxwellContext(build_eulerian_grid(q0, 1.0)) if maxwell else None
    return Scenario(q0, loads, MaterialParams(), ctx, steps)


def trivial_equilibrium(n: int = 8, steps: int = 10, maxwell: bool = False) -> Scenario:
    """Zero loads, identity boundary datum on all edges, uniform director."""
    g = build_grid(n, n)
    q0 = identity_state(g, 0.0)
    loads = LoadSchedule.constant(1.0, gamma=("left", "right", "bottom", "top"))
    ctx = MaxwellContext(build_eulerian_grid(q0, 1.0)) if maxwell else None
    return Scenario(q0, loads, MaterialParams(), ctx, steps)
