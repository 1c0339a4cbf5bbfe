"""Small arithmetic grammar for scalar fields H0 with exact gradients.

Grammar: numbers, ``pi``, ``e``, coordinates ``x, y, z`` (or ``x1 .. xn``),
time ``t``, the operators ``+ - * / **`` (numeric exponents only) and the
functions ``sin cos tan exp log sqrt tanh``.  Gradients are propagated in
forward mode with dual numbers, so they are exact up to rounding.
"""

from __future__ import annotations

import ast
import math

import numpy as np

from .operators import ScalarField, TimeDependentField

Array = np.ndarray

_FUNCS = {
    "sin": (np.sin, np.cos),
    "cos": (np.cos, lambda v: -np.sin(v)),
    "tan": (np.tan, lambda v: 1.0 / np.cos(v) ** 2),
    "exp": (np.exp, np.exp),
    "log": (np.log, lambda v: 1.0 / v),
    "sqrt": (np.sqrt, lambda v: 0.5 / np.sqrt(v)),
    "tanh": (np.tanh, lambda v: 1.0 / np.cosh(v) ** 2),
}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_AXIS_NAMES = {"x": 0, "y": 1, "z": 2}


class ExpressionError(ValueError):
    pass


class _Dual:
    """Value with derivatives along each coordinate (last slot: time)."""

    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v, self.d = v, d

    def __add__(self, o):
        return _Dual(self.v + o.v, [a + b for a, b in zip(self.d, o.d)])

    def __sub__(self, o):
        return _Dual(self.v - o.v, [a - b for a, b in zip(self.d, o.d)])

    def __mul__(self, o):
        return _Dual(self.v * o.v, [a * o.v + self.v * b for a, b in zip(self.d, o.d)])

    def __truediv__(self, o):
        inv = 1.0 / o.v
        return _Dual(self.v * inv, [(a - self.v * inv * b) * inv for a, b in zip(self.d, o.d)])

    def __neg__(self):
        return _Dual(-self.v, [-a for a in self.d])

    def power(self, p: float):
        return _Dual(self.v ** p, [p * self.v ** (p - 1) * a for a in self.d])

    def apply(self, fn, dfn):
        s = dfn(self.v)
        return _Dual(fn(self.v), [s * a for a in self.d])


def _axis_of(name: str, dimension: int):
    if name in _AXIS_NAMES and dimension <= 3:
        return _AXIS_NAMES[name]
    if name.startswith("x") and name[1:].isdigit():
        k = int(name[1:]) - 1
        if 0 <= k < dimension:
            return k
    return None


def _validate(node, dimension: int) -> set:
    """Check the tree against the grammar; returns the set of free names used."""
    used = set()
    callees = {id(c.func) for c in ast.walk(node) if isinstance(c, ast.Call)}
    for sub in ast.walk(node):
        if isinstance(sub, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            if isinstance(sub, ast.operator) and not isinstance(sub, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise ExpressionError(f"operator {type(sub).__name__} is not allowed")
            if isinstance(sub, ast.unaryop) and not isinstance(sub, (ast.UAdd, ast.USub)):
                raise ExpressionError(f"operator {type(sub).__name__} is not allowed")
            continue
        if isinstance(sub, (ast.BinOp, ast.UnaryOp)):
            if isinstance(sub, ast.BinOp) and isinstance(sub.op, ast.Pow) and not _is_number(sub.right):
                raise ExpressionError("exponents must be numeric constants")
            continue
        if isinstance(sub, ast.Constant):
            if not isinstance(sub.value, (int, float)) or isinstance(sub.value, bool):
                raise ExpressionError(f"constant {sub.value!r} is not a number")
            continue
        if isinstance(sub, ast.Call):
            if not isinstance(sub.func, ast.Name) or sub.func.id not in _FUNCS or len(sub.args) != 1 or sub.keywords:
                raise ExpressionError(f"unsupported call {ast.unparse(sub)!r}")
            continue
        if isinstance(sub, ast.Name):
            name = sub.id
            if name in _FUNCS and id(sub) in callees:
                continue
            if name in _CONSTANTS or name == "t" or _axis_of(name, dimension) is not None:
                used.add(name)
                continue
            raise ExpressionError(f"unknown name {name!r}")
        raise ExpressionError(f"syntax element {type(sub).__name__} is not allowed")
    return used


def _is_number(node) -> bool:
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        return _is_number(node.operand)
    return isinstance(node, ast.Constant) and isinstance(node.value, (int, float))


def _number(node) -> float:
    if isinstance(node, ast.UnaryOp):
        v = _number(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    return float(node.value)


def _evaluate(node, x: Array, t: float, dimension: int) -> _Dual:
    shape = x.shape[:-1]
    nslots = dimension + 1

    def const(c):
        return _Dual(np.full(shape, float(c)), [np.zeros(shape) for _ in range(nslots)])

    def walk(n):
        if isinstance(n, ast.Expression):
            return walk(n.body)
        if isinstance(n, ast.Constant):
            return const(n.value)
        if isinstance(n, ast.Name):
            if n.id in _CONSTANTS:
                return const(_CONSTANTS[n.id])
            if n.id == "t":
                d = [np.zeros(shape) for _ in range(nslots)]
                d[dimension] = np.ones(shape)
                return _Dual(np.full(shape, float(t)), d)
            k = _axis_of(n.id, dimension)
            d = [np.zeros(shape) for _ in range(nslots)]
            d[k] = np.ones(shape)
            return _Dual(x[..., k].copy(), d)
        if isinstance(n, ast.UnaryOp):
            v = walk(n.operand)
            return -v if isinstance(n.op, ast.USub) else v
        if isinstance(n, ast.BinOp):
            a = walk(n.left)
            if isinstance(n.op, ast.Pow):
                return a.power(_number(n.right))
            b = walk(n.right)
            return {ast.Add: a.__add__, ast.Sub: a.__sub__, ast.Mult: a.__mul__, ast.Div: a.__truediv__}[type(n.op)](b)
        if isinstance(n, ast.Call):
            fn, dfn = _FUNCS[n.func.id]
            return walk(n.args[0]).apply(fn, dfn)
        raise ExpressionError(f"cannot evaluate {type(n).__name__}")

    with np.errstate(all="ignore"):
        return walk(node)


def parse_expression(text: str, dimension: int = 3):
    """Compile ``text`` into a ScalarField, or a TimeDependentField if it uses ``t``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    used = _validate(tree, dimension)
    name = text.strip()

    def value(x, t=0.0):
        return _evaluate(tree, np.asarray(x, float), t, dimension).v

    def grad(x, t=0.0):
        d = _evaluate(tree, np.asarray(x, float), t, dimension).d
        return np.stack(d[:dimension], axis=-1)

    if "t" in used:
        def rate(x, t):
            return _evaluate(tree, np.asarray(x, float), t, dimension).d[dimension]

        return TimeDependentField(dimension, value, grad, rate, name)
    return ScalarField(dimension, value, grad, name)


def preset(name: str, dimension: int = 3):
    """Named H0 presets: ``zero`` and ``cos-x``."""
    if name == "zero":
        return ScalarField.constant(0.0, dimension, "zero")
    if name == "cos-x":
        return parse_expression("cos(x1)", dimension)
    raise ExpressionError(f"unknown H0 preset {name!r}")


def resolve_h0(spec: str, dimension: int = 3):
    """A preset name or an expression."""
    spec = spec.strip()
    if spec in ("zero", "cos-x"):
        return preset(spec, dimension)
    return parse_expression(spec, dimension)
