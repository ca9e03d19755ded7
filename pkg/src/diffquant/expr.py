"""Coefficient expressions for custom diffusion specs.

Grammar (parsed with :mod:`ast`, then checked against a whitelist)::

    expr   := number | name | expr op expr | -expr | +expr | func(expr, ...)
    op     := + - * / **
    name   := x1 .. xd | x (same as x1) | t | pi | e
    func   := sin cos exp abs sqrt min max

``min`` and ``max`` are elementwise over their arguments. Evaluation is
vectorised over paths: ``x`` has shape ``(P, d)`` and ``t`` is a scalar.
"""

from __future__ import annotations

import ast
import math
import re

import numpy as np

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "min": lambda *a: np.minimum.reduce(np.broadcast_arrays(*a)),
    "max": lambda *a: np.maximum.reduce(np.broadcast_arrays(*a)),
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}
_VAR = re.compile(r"^x(\d+)$")


class ExpressionError(ValueError):
    """An expression uses syntax or names outside the grammar."""


class Expression:
    """A parsed coefficient expression in ``d`` state variables."""

    def __init__(self, source: str, d: int = 1):
        self.source = source
        self.d = int(d)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"{self.source!r}: only numeric constants are allowed")
        elif isinstance(node, ast.Name):
            self._var_index(node.id)
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"{self.source!r}: operator {type(node.op).__name__} not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"{self.source!r}: unary {type(node.op).__name__} not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"{self.source!r}: unknown function")
            if node.keywords or not node.args:
                raise ExpressionError(f"{self.source!r}: {node.func.id} takes positional arguments")
            if node.func.id not in ("min", "max") and len(node.args) != 1:
                raise ExpressionError(f"{self.source!r}: {node.func.id} takes one argument")
            for a in node.args:
                self._check(a)
        else:
            raise ExpressionError(f"{self.source!r}: {type(node).__name__} is not part of the grammar")

    def _var_index(self, name: str):
        if name in _CONSTS or name == "t":
            return None
        if name == "x":
            return 0
        m = _VAR.match(name)
        if m and 1 <= int(m.group(1)) <= self.d:
            return int(m.group(1)) - 1
        raise ExpressionError(f"{self.source!r}: unknown name {name!r} (state dimension {self.d})")

    def __call__(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, x, float(t))
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()

    def _eval(self, node, x, t):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            if node.id == "t":
                return t
            return x[:, self._var_index(node.id)]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, x, t), self._eval(node.right, x, t))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, x, t)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](*[self._eval(a, x, t) for a in node.args])

    def __repr__(self):
        return f"Expression({self.source!r}, d={self.d})"


def drift_from_strings(sources, d: int):
    """Vector drift ``b(x, t)`` of shape ``(P, d)`` from one expression per component."""
    if isinstance(sources, str):
        sources = [s.strip() for s in sources.split(";")]
    if len(sources) != d:
        raise ExpressionError(f"need {d} drift components, got {len(sources)}")
    exprs = [Expression(s, d) for s in sources]

    def b(x, t):
        return np.stack([e(x, t) for e in exprs], axis=1)

    return b
