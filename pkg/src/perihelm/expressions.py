"""Tiny safe evaluator for coefficient expressions over x and y.

Config files describe materials with strings like ``1 + 0.8*cos(x)*cos(y)``.
Only arithmetic, cos/sin, the two cell variables and numeric constants are
admitted; everything else is rejected at parse time.
"""

from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

_ALLOWED_CALLS = {"cos": np.cos, "sin": np.sin}
_ALLOWED_NAMES = {"x", "y", "pi", "e"}
_CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARYOPS = (ast.USub, ast.UAdd)


def _check(node: ast.AST) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _check(node.left)
        _check(node.right)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARYOPS):
        _check(node.operand)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_CALLS):
            raise ValueError(f"call to {ast.dump(node.func)} not allowed")
        if node.keywords or len(node.args) != 1:
            raise ValueError("coefficient functions take one positional argument")
        _check(node.args[0])
    elif isinstance(node, ast.Name):
        if node.id not in _ALLOWED_NAMES:
            raise ValueError(f"unknown name {node.id!r} in expression")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ValueError("only numeric constants allowed")
    else:
        raise ValueError(f"disallowed syntax: {type(node).__name__}")


def compile_expression(text: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Parse ``text`` and return a vectorized function of (x, y)."""
    tree = ast.parse(text, mode="eval")
    _check(tree)
    code = compile(tree, "<coefficient>", "eval")

    def func(x, y):
        env = {"x": x, "y": y, **_CONSTANTS, **_ALLOWED_CALLS}
        out = eval(code, {"__builtins__": {}}, env)  # noqa: S307 - AST whitelisted above
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

    func.source = text  # type: ignore[attr-defined]
    return func
