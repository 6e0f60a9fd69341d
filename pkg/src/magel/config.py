"""Run configuration: a TOML document with strict keys and full validation.

Every section and key below is optional; omitted ones take the listed
defaults.  Unknown keys are errors, and validation reports every violation
at once.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import fields as fl
from .energy import EDGES, LoadSchedule, MaterialParams
from .errors import ConfigurationError
from .evolution import Partition, StepOptions
from .grid import QUADRATURE_RULES, RefGrid, State, build_grid, state_from_map

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

MODES = ("static", "evolve", "verify-degree", "verify-energy", "verify-balance")


@dataclass
class GridSpec:
    nx: int = 16
    ny: int = 16
    origin: tuple = (0.0, 0.0)
    extent: tuple = (1.0, 1.0)
    quadrature: str = "gauss2"


@dataclass
class InitialSpec:
    deformation: tuple = ("x1", "x2")
    theta: Any = "0"  # expression in x1, x2 evaluated at cell centers
    snapshot: Optional[str] = None


@dataclass
class MaxwellSpec:
    enabled: bool = True
    padding: float = 1.0
    cell_size: Optional[tuple] = None
    method: str = "dst"
    source: str = "deposit"
    tol: float = 1e-12
    maxiter: int = 10000
    residual_tol: float = 1e-10


@dataclass
class LoadSpec:
    T: float = 1.0
    knots: Optional[int] = None
    times: Optional[tuple] = None
    f: tuple = ("0", "0")
    g: tuple = ("0", "0")
    h: tuple = ("0", "0")
    d: tuple = ("x1", "x2")
    f_table: Optional[tuple] = None
    g_table: Optional[tuple] = None
    h_table: Optional[tuple] = None
    gamma: tuple = ("left",)
    sigma: tuple = ()


@dataclass
class PartitionSpec:
    steps: int = 20
    times: Optional[tuple] = None
    T: Optional[float] = None


@dataclass
class DiagnosticSpec:
    saturation: bool = True
    saturation_tol: float = 1e-12
    descent: bool = True
    descent_tol: float = 1e-12
    balance: bool = True
    balance_tol: float = 1e-6  # relative to max(1, |F(0, q0)|)
    apriori: bool = True
    apriori_margin: float = 1.0
    apriori_samples: int = 10
    eta_factor: float = 1.0
    stability: bool = True
    stability_every: int = 5
    stability_competitors: int = 50
    stability_restarts: int = 2
    stability_tol: float = 1e-8
    ciarlet_necas: bool = True
    cn_factor: float = 2.0  # tolerance = cn_factor * Eulerian h * image perimeter
    multiplicity: bool = True
    stationarity: bool = True
    resume_consistency: bool = True
    resume_tol: float = 1e-12
    degree_maps: int = 100
    energy_states: int = 10
    fd_tol: float = 1e-5
    fd_tol_mag: float = 5e-4


@dataclass
class OutputSpec:
    dir: str = "out"
    snapshots: bool = True
    trace: str = "trace.csv"
    summary: str = "summary.txt"


@dataclass
class ResumeSpec:
    dir: Optional[str] = None
    step: Optional[int] = None


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    grid: GridSpec = field(default_factory=GridSpec)
    material: MaterialParams = field(default_factory=MaterialParams)
    initial: InitialSpec = field(default_factory=InitialSpec)
    maxwell: MaxwellSpec = field(default_factory=MaxwellSpec)
    loads: LoadSpec = field(default_factory=LoadSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    optimizer: StepOptions = field(default_factory=StepOptions)
    diagnostics: DiagnosticSpec = field(default_factory=DiagnosticSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    resume: ResumeSpec = field(default_factory=ResumeSpec)

    # -------------------------------------------------------------- builders

    def build_grid(self) -> RefGrid:
        g = self.grid
        return build_grid(g.nx, g.ny, g.origin, g.extent, g.quadrature)

    def initial_state(self, grid: RefGrid | None = None) -> State:
        grid = grid or self.build_grid()
        if self.initial.snapshot is not None:
            from .io import read_snapshot

            return read_snapshot(self.initial.snapshot, grid.quadrature, grid)
        ymap = fl.vector_expression(self.initial.deformation)
        th = fl.vector_expression((self.initial.theta, "0"))(grid.cell_centers)[:, 0]
        return state_from_map(grid, ymap, th)

    def partition_obj(self) -> Partition:
        p = self.partition
        if p.times is not None:
            return Partition(tuple(p.times))
        return Partition.uniform(p.T if p.T is not None else self.loads.T, p.steps)

    def load_schedule(self) -> LoadSchedule:
        ls = self.loads
        if ls.times is not None:
            knots = list(ls.times)
        elif ls.knots is not None:
            knots = list(np.linspace(0.0, ls.T, ls.knots + 1))
        else:
            knots = [0.0, ls.T]
            if any(fl.expression_depends_on_time(c) for c in (ls.f, ls.g, ls.h, ls.d)):
                knots = list(self.partition_obj().times)
        tables = {k: np.asarray(getattr(ls, f"{k}_table"), dtype=np.float64)
                  for k in ("f", "g", "h") if getattr(ls, f"{k}_table") is not None}
        for tab in tables.values():
            knots += list(tab[:, 0])
        knots = np.unique(np.asarray(knots, dtype=np.float64))
        sched = LoadSchedule.from_expressions(knots, f=ls.f, g=ls.g, h=ls.h, d=ls.d, gamma=ls.gamma, sigma=ls.sigma)
        for k, tab in tables.items():
            vals = np.stack([np.interp(knots, tab[:, 0], tab[:, 1]), np.interp(knots, tab[:, 0], tab[:, 2])], axis=1)
            setattr(sched, k, [fl.constant(v) for v in vals])
        return sched

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------- parsing

_SECTIONS = {
    "grid": GridSpec,
    "material": MaterialParams,
    "initial": InitialSpec,
    "maxwell": MaxwellSpec,
    "loads": LoadSpec,
    "partition": PartitionSpec,
    "optimizer": StepOptions,
    "diagnostics": DiagnosticSpec,
    "output": OutputSpec,
    "resume": ResumeSpec,
}
_TOP = {"seed": int, "workers": int}


def _kind(default, name: str, cls) -> str:
    hints = {f.name: f.type for f in fields(cls)}
    t = str(hints.get(name, ""))
    if isinstance(default, bool) or t == "bool":
        return "bool"
    if isinstance(default, int) or t in ("int", "Optional[int]"):
        return "int"
    if isinstance(default, float) or t in ("float", "Optional[float]"):
        return "float"
    if isinstance(default, tuple) or "tuple" in t:
        return "list"
    if isinstance(default, str) or t in ("str", "Optional[str]"):
        return "str"
    return "any"


def _coerce(value, kind: str, path: str, errs: list):
    if kind == "bool":
        if not isinstance(value, bool):
            errs.append(f"{path}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            errs.append(f"{path}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errs.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if kind == "list":
        if not isinstance(value, list):
            errs.append(f"{path}: expected a list, got {value!r}")
            return value
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if kind == "str":
        if not isinstance(value, str):
            errs.append(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _section(cls, table: dict, name: str, errs: list):
    if not isinstance(table, dict):
        errs.append(f"[{name}] must be a table")
        return cls()
    defaults = {f.name: f for f in fields(cls)}
    kw = {}
    for key, value in table.items():
        if key not in defaults:
            errs.append(f"unknown key {name}.{key}")
            continue
        f = defaults[key]
        default = f.default if f.default is not f.default_factory else None
        kw[key] = _coerce(value, _kind(default, key, cls), f"{name}.{key}", errs)
    return kw


def _validate(cfg: RunConfig, errs: list) -> None:
    g = cfg.grid
    if g.nx < 2 or g.ny < 2:
        errs.append("grid.nx and grid.ny must be >= 2")
    if len(g.origin) != 2 or len(g.extent) != 2:
        errs.append("grid.origin and grid.extent need two entries")
    elif min(g.extent) <= 0:
        errs.append("grid.extent must be positive")
    if g.quadrature not in QUADRATURE_RULES:
        errs.append(f"grid.quadrature must be one of {sorted(QUADRATURE_RULES)}")
    if cfg.workers < 1:
        errs.append("workers must be >= 1")

    mx = cfg.maxwell
    if not mx.padding > 0:
        errs.append("maxwell.padding must be > 0")
    if mx.method not in ("dst", "cg"):
        errs.append("maxwell.method must be 'dst' or 'cg'")
    if mx.source not in ("deposit", "sample"):
        errs.append("maxwell.source must be 'deposit' or 'sample'")
    for k in ("tol", "residual_tol"):
        if not getattr(mx, k) > 0:
            errs.append(f"maxwell.{k} must be > 0")
    if mx.maxiter < 1:
        errs.append("maxwell.maxiter must be >= 1")
    if mx.cell_size is not None and (len(mx.cell_size) != 2 or min(mx.cell_size) <= 0):
        errs.append("maxwell.cell_size must be two positive numbers")

    ls = cfg.loads
    if not ls.T > 0:
        errs.append("loads.T must be > 0")
    if ls.knots is not None and ls.knots < 1:
        errs.append("loads.knots must be >= 1")
    if ls.times is not None:
        t = np.asarray(ls.times, dtype=float)
        if len(t) < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0) or abs(t[-1] - ls.T) > 1e-12:
            errs.append("loads.times must increase strictly from 0 to loads.T")
    for side_key in ("gamma", "sigma"):
        sides = getattr(ls, side_key)
        bad = [s for s in sides if s not in EDGES]
        if bad:
            errs.append(f"loads.{side_key}: unknown boundary sides {bad}; use a subset of {list(EDGES)}")
        if len(set(sides)) != len(sides):
            errs.append(f"loads.{side_key} lists a side twice")
    if set(ls.gamma) & set(ls.sigma):
        errs.append("loads.gamma and loads.sigma must not overlap")
    for k in ("f", "g", "h", "d"):
        comp = getattr(ls, k)
        if len(comp) != 2:
            errs.append(f"loads.{k} needs two components")
            continue
        try:
            fl.vector_expression(comp, 0.0)
        except ConfigurationError as exc:
            errs.append(f"loads.{k}: {exc}")
    for k in ("f", "g", "h"):
        tab = getattr(ls, f"{k}_table")
        if tab is None:
            continue
        if getattr(ls, k) != ("0", "0"):
            errs.append(f"loads.{k} and loads.{k}_table are exclusive")
        arr = np.asarray(tab, dtype=float) if all(len(r) == 3 for r in tab) else None
        if arr is None or len(arr) < 2 or np.any(np.diff(arr[:, 0]) <= 0) or arr[0, 0] != 0.0 \
                or abs(arr[-1, 0] - ls.T) > 1e-12:
            errs.append(f"loads.{k}_table must be rows [t, v1, v2] with t increasing from 0 to loads.T")

    p = cfg.partition
    if p.times is None and p.steps < 1:
        errs.append("partition.steps must be >= 1")
    try:
        part = cfg.partition_obj()
        if part.T > ls.T + 1e-12:
            errs.append("partition extends beyond loads.T")
    except ConfigurationError as exc:
        errs.append(f"partition: {exc}")

    o = cfg.optimizer
    for k in ("grad_tol", "det_floor", "pin_tol", "repin_tol", "kick", "max_step", "descent_tol", "stall_pin_tol"):
        if not getattr(o, k) > 0:
            errs.append(f"optimizer.{k} must be > 0")
    for k in ("maxiter", "max_rounds", "round_maxiter", "memory"):
        if getattr(o, k) < 1:
            errs.append(f"optimizer.{k} must be >= 1")
    if o.max_bisections < 0:
        errs.append("optimizer.max_bisections must be >= 0")

    d = cfg.diagnostics
    for f in fields(DiagnosticSpec):
        v = getattr(d, f.name)
        if f.name.endswith("_tol") or f.name in ("cn_factor", "eta_factor"):
            if not v > 0:
                errs.append(f"diagnostics.{f.name} must be > 0")
    if d.apriori_margin < 0:
        errs.append("diagnostics.apriori_margin must be >= 0")
    for k in ("apriori_samples", "stability_every", "stability_competitors", "degree_maps", "energy_states"):
        if getattr(d, k) < 1:
            errs.append(f"diagnostics.{k} must be >= 1")
    if d.stability_restarts < 0:
        errs.append("diagnostics.stability_restarts must be >= 0")

    r = cfg.resume
    if (r.dir is None) != (r.step is None):
        errs.append("resume.dir and resume.step must be given together")
    if r.step is not None and r.step < 0:
        errs.append("resume.step must be >= 0")


def validate(cfg: RunConfig) -> None:
    """Raise one error listing every violation in ``cfg``."""
    errs: list[str] = []
    _validate(cfg, errs)
    if errs:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errs))


def parse_config(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config parse error: {exc}") from None
    errs: list[str] = []
    kw: dict = {}
    for key, value in doc.items():
        if key in _TOP:
            kw[key] = _coerce(value, "int", key, errs)
        elif key in _SECTIONS:
            kw[key] = _section(_SECTIONS[key], value, key, errs)
        else:
            errs.append(f"unknown key {key}")
    if errs:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errs))
    cfg = RunConfig(**{k: v for k, v in kw.items() if k in _TOP})
    for name, cls in _SECTIONS.items():
        if name in kw:
            try:
                setattr(cfg, name, cls(**kw[name]))
            except (ConfigurationError, TypeError, ValueError) as exc:
                errs.append(f"[{name}]: {exc}")
    if not errs:
        _validate(cfg, errs)
    if errs:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
