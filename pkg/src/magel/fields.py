"""Closed-form space/time fields and the load-expression grammar.

Expressions use the operands ``x1``, ``x2``, ``t``, numeric literals, the
operators ``+ - * / ^`` and the functions ``sin``, ``cos``, ``exp``.  They are
parsed with :mod:`ast` against that whitelist, converted to sympy for exact
spatial derivatives and compiled to numpy callables.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .errors import ConfigurationError

X1, X2, T = sp.symbols("x1 x2 t", real=True)
_SYMBOLS = {"x1": X1, "x2": X2, "t": T, "pi": sp.pi}
_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def _convert(node):
    if isinstance(node, ast.Expression):
        return _convert(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return sp.nsimplify(node.value) if isinstance(node.value, int) else sp.Float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in _SYMBOLS:
            raise ConfigurationError(f"unknown identifier {node.id!r} in expression")
        return _SYMBOLS[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_convert(node.left), _convert(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _convert(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in _FUNCS:
            raise ConfigurationError(f"unknown function {node.func.id!r} in expression")
        if len(node.args) != 1:
            raise ConfigurationError(f"{node.func.id} takes one argument")
        return _FUNCS[node.func.id](_convert(node.args[0]))
    raise ConfigurationError(f"unsupported syntax in expression: {ast.dump(node)[:60]}")


def parse_expression(text: str | float | int) -> sp.Expr:
    """Parse one scalar expression of the load grammar."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sp.Float(text)
    if not isinstance(text, str):
        raise ConfigurationError(f"expression must be a string or number, got {type(text).__name__}")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return _convert(tree)


def _compile(expr: sp.Expr) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    f = sp.lambdify((X1, X2), expr, modules="numpy")

    def call(a, b):
        return np.broadcast_to(np.asarray(f(a, b), dtype=np.float64), np.shape(a)).copy()

    return call


@dataclass(frozen=True)
class VectorField:
    """Vector field on points (n, 2) with optional Jacobian (n, 2, 2)."""

    func: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    is_zero: bool = False

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.atleast_2d(pts)), dtype=np.float64)

    def jacobian(self, pts: np.ndarray, step: float = 1e-6) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.jac is not None:
            return np.asarray(self.jac(pts), dtype=np.float64)
        out = np.empty((len(pts), 2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            out[:, :, k] = (self(pts + e) - self(pts - e)) / (2 * step)
        return out

    def combine(self, other: "VectorField", a: float, b: float) -> "VectorField":
        """Pointwise ``a*self + b*other``."""
        if (self.is_zero or a == 0.0) and (other.is_zero or b == 0.0):
            return ZERO
        jac = None
        if self.jac is not None and other.jac is not None:
            jac = lambda p: a * self.jacobian(p) + b * other.jacobian(p)  # noqa: E731
        elif self.is_zero and other.jac is not None:
            jac = lambda p: b * other.jacobian(p)  # noqa: E731
        elif other.is_zero and self.jac is not None:
            jac = lambda p: a * self.jacobian(p)  # noqa: E731
        return VectorField(lambda p: a * self(p) + b * other(p), jac)


ZERO = VectorField(lambda p: np.zeros((len(p), 2)), lambda p: np.zeros((len(p), 2, 2)), is_zero=True)


def constant(v: Sequence[float]) -> VectorField:
    v = np.asarray(v, dtype=np.float64)
    if not np.any(v):
        return ZERO
    return VectorField(lambda p: np.broadcast_to(v, (len(p), 2)).copy(), lambda p: np.zeros((len(p), 2, 2)))


def identity_field() -> VectorField:
    eye = np.eye(2)
    return VectorField(lambda p: np.array(p, dtype=np.float64), lambda p: np.broadcast_to(eye, (len(p), 2, 2)).copy())


def vector_from_sympy(components: Sequence[sp.Expr]) -> VectorField:
    comps = [sp.sympify(c) for c in components]
    if len(comps) != 2:
        raise ConfigurationError("vector expressions need exactly two components")
    if any(c.has(T) for c in comps):
        raise ConfigurationError("spatial field still depends on t; substitute a time first")
    if all(c == 0 for c in comps):
        return ZERO
    f = [_compile(c) for c in comps]
    d = [[_compile(sp.diff(c, v)) for v in (X1, X2)] for c in comps]

    def func(p):
        return np.stack([f[0](p[:, 0], p[:, 1]), f[1](p[:, 0], p[:, 1])], axis=1)

    def jac(p):
        a, b = p[:, 0], p[:, 1]
        return np.stack([np.stack([d[i][0](a, b), d[i][1](a, b)], axis=1) for i in range(2)], axis=1)

    return VectorField(func, jac)


def vector_expression(components: Sequence[str | float], t: float | None = None) -> VectorField:
    """Compile a two-component expression; ``t`` is substituted when given."""
    exprs = [parse_expression(c) for c in components]
    if t is not None:
        exprs = [e.subs(T, t) for e in exprs]
    return vector_from_sympy(exprs)


def expression_depends_on_time(components: Sequence[str | float]) -> bool:
    return any(parse_expression(c).has(T) for c in components)
