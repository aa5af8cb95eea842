"""Safe arithmetic expressions of a single variable.

Grammar: numeric constants, ``pi``, ``e``, the variable (``t`` or ``xi``),
binary ``+ - * /``, unary minus, ``pow(a, b)`` (``a**b`` is accepted too) and
the functions ``sin``, ``cos``, ``exp``, ``log``. Anything else is rejected
before evaluation.

Expressions are converted to sympy so exact derivatives are available.
"""
import ast
from functools import lru_cache

import numpy as np
import sympy as sp

FUNCTIONS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "log": sp.log}
CONSTANTS = {"pi": sp.pi, "e": sp.E}
VARIABLES = ("t", "xi")


class ExpressionError(ValueError):
    pass


def _convert(node, var):
    if isinstance(node, ast.Expression):
        return _convert(node.body, var)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return sp.Float(node.value) if isinstance(node.value, float) else sp.Integer(node.value)
    if isinstance(node, ast.Name):
        if node.id == var:
            return sp.Symbol(var, real=True)
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        raise ExpressionError(f"unknown name {node.id!r} (variable must be {var!r})")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        arg = _convert(node.operand, var)
        return -arg if isinstance(node.op, ast.USub) else arg
    if isinstance(node, ast.BinOp):
        a = _convert(node.left, var)
        b = _convert(node.right, var)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            return a / b
        if isinstance(node.op, ast.Pow):
            return a**b
        raise ExpressionError(f"operator {type(node.op).__name__} not allowed")
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        name = node.func.id
        args = [_convert(a, var) for a in node.args]
        if name == "pow":
            if len(args) != 2:
                raise ExpressionError("pow takes two arguments")
            return args[0] ** args[1]
        if name in FUNCTIONS:
            if len(args) != 1:
                raise ExpressionError(f"{name} takes one argument")
            return FUNCTIONS[name](args[0])
        raise ExpressionError(f"function {name!r} not allowed")
    raise ExpressionError(f"syntax element {type(node).__name__} not allowed")


class Expression:
    """A parsed expression with numpy evaluation of itself and its derivatives."""

    def __init__(self, text, var="t"):
        if var not in VARIABLES:
            raise ExpressionError(f"variable must be one of {VARIABLES}")
        self.text = str(text)
        self.var = var
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self.sym = _convert(tree, var)
        self._symbol = sp.Symbol(var, real=True)

    def __repr__(self):
        return f"Expression({self.text!r}, var={self.var!r})"

    @lru_cache(maxsize=None)
    def _compiled(self, order):
        e = sp.diff(self.sym, self._symbol, order) if order else self.sym
        return sp.lambdify(self._symbol, e, modules="numpy")

    def __call__(self, x, order=0):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            v = self._compiled(order)(x)
        return np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy()

    def is_constant(self):
        return self._symbol not in self.sym.free_symbols
