"""Inline numpy expressions for configs.

An expression is a Python arithmetic expression in the variables ``t`` and
``x`` (or ``t`` alone for curves) over a fixed whitelist of numpy
functions.  Attribute access, subscripts, lambdas and comprehensions are
rejected before compilation.
"""

from __future__ import annotations

import ast

import numpy as np

from ..bv2d import Surface2D
from ..itoformula import FunctionSpec
from ..pathsim import Curve

FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "cbrt": np.cbrt, "abs": np.abs, "sign": np.sign, "floor": np.floor,
    "ceil": np.ceil, "maximum": np.maximum, "minimum": np.minimum, "where": np.where,
    "tanh": np.tanh, "arctan": np.arctan,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare, ast.Call,
            ast.Name, ast.Load, ast.Constant, ast.IfExp, ast.operator, ast.unaryop,
            ast.boolop, ast.cmpop)


class ExpressionError(ValueError):
    pass


def _validate(src: str, variables: tuple[str, ...]) -> ast.Expression:
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {src!r}: {exc.msg}") from None
    names = set(FUNCTIONS) | set(CONSTANTS) | set(variables)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ExpressionError(f"{type(node).__name__} not allowed in {src!r}")
        if isinstance(node, ast.Name) and node.id not in names:
            raise ExpressionError(f"unknown name {node.id!r} in {src!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                               and node.func.id in FUNCTIONS):
            raise ExpressionError(f"only whitelisted functions may be called in {src!r}")
    return tree


class Expression:
    """Vectorized callable built from an expression string; pickles as its source."""

    def __init__(self, src: str, variables: tuple[str, ...] = ("t", "x")):
        self.src = str(src)
        self.variables = tuple(variables)
        _validate(self.src, self.variables)
        self._code = None

    def __getstate__(self):
        return {"src": self.src, "variables": self.variables}

    def __setstate__(self, state):
        self.__init__(state["src"], state["variables"])

    def __repr__(self):
        return f"Expression({self.src!r})"

    def __call__(self, *args):
        if len(args) != len(self.variables):
            raise TypeError(f"{self!r} takes {len(self.variables)} arguments")
        if self._code is None:
            self._code = compile(_validate(self.src, self.variables), "<expr>", "eval")
        env = {"__builtins__": {}, **FUNCTIONS, **CONSTANTS}
        arrays = [np.asarray(a, dtype=float) for a in args]
        env.update(zip(self.variables, arrays))
        out = eval(self._code, env)  # noqa: S307 - AST whitelisted above
        shape = np.broadcast(*arrays).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()


def inline_spec(d: dict) -> FunctionSpec:
    """FunctionSpec from a dict of expression strings.

    Keys: ``f``, ``dt_left``, ``grad_left`` (required); ``f_h``, ``grad_h``,
    ``lap_left_h``, ``f_v``, ``grad_left_v``, ``lap_left``, ``curve``,
    ``jump`` (optional); ``jumps_s``/``jumps_x`` lists for ``grad_left_v``;
    ``box`` and ``name``.
    """
    missing = [k for k in ("f", "dt_left", "grad_left") if k not in d]
    if missing:
        raise ExpressionError(f"inline function is missing {', '.join(missing)}")
    E = Expression
    kw = {}
    for key in ("f_h", "grad_h", "lap_left_h", "f_v", "lap_left"):
        if key in d:
            kw[key] = E(d[key])
    if "grad_left_v" in d:
        kw["grad_left_v"] = Surface2D(E(d["grad_left_v"]), left_continuous=True,
                                      jumps_s=d.get("jumps_s", ()), jumps_x=d.get("jumps_x", ()),
                                      name=d["grad_left_v"])
    if "curve" in d:
        c = E(d["curve"], ("t",))
        kw["curve"] = Curve(c, name=d["curve"])
    if "jump" in d:
        kw["jump"] = E(d["jump"], ("t",))
    if "box" in d:
        kw["box"] = tuple(float(v) for v in d["box"])
    variants = ["semimartingale", "ito_process"] + (["curve"] if "curve" in d else [])
    return FunctionSpec(d.get("name", "inline"), E(d["f"]), E(d["dt_left"]), E(d["grad_left"]),
                        variants=tuple(variants), **kw)
