"""Small arithmetic expression language in two variables ``u1`` and ``u2``.

Expressions are parsed into immutable trees which can be evaluated on plain
floats / numpy arrays or on :class:`Jet2` numbers, which carry exact first and
second partial derivatives with respect to ``(u1, u2)`` (forward mode).

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := number | name | name '(' expr ')' | '(' expr ')'

so ``-u1^2 == -(u1^2)`` and ``2^-1 == 0.5``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

UNARY_FUNCS = ("sin", "cos", "tan", "sinh", "cosh", "tanh", "exp", "log", "sqrt", "abs")
BINARY_OPS = ("+", "-", "*", "/", "^")
CONSTANTS = {"pi": math.pi, "e": math.e}
VARIABLES = ("u1", "u2")


class ExpressionError(ValueError):
    """Raised for malformed expressions. ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class EvaluationError(ArithmeticError):
    """Raised when an expression has no finite real value at a point."""


# ---------------------------------------------------------------------------
# tree


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Unary, Binary]


def to_text(node: Node) -> str:
    """Fully parenthesised source text; ``parse(to_text(t))`` rebuilds ``t``."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    return f"({to_text(node.left)}{node.op}{to_text(node.right)})"


def is_constant(node: Node) -> bool:
    if isinstance(node, Const):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, Unary):
        return is_constant(node.arg)
    return is_constant(node.left) and is_constant(node.right)


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str, base: int = 0) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {text[bad]!r}", _byte_offset(text, bad) + base)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(text, start) + base))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(text, len(text)) + base))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            found = tok[1] or "end of input"
            raise ExpressionError(f"expected {value!r}, found {found!r}", tok[2])
        return tok

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Node:
        kind, value, offset = self.take()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if self.peek()[1] == "(":
                if value not in UNARY_FUNCS:
                    raise ExpressionError(f"unknown function {value!r}", offset)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Unary(value, arg)
            if value in VARIABLES:
                return Var(value)
            if value in CONSTANTS:
                return Const(CONSTANTS[value])
            raise ExpressionError(f"unknown identifier {value!r}", offset)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of expression", offset)
        raise ExpressionError(f"unexpected token {value!r}", offset)


def parse_expression(text: str, offset: int = 0) -> Node:
    """Parse a single expression. ``offset`` shifts reported byte offsets."""
    tokens = _tokenize(text, offset)
    if tokens[0][0] == "end":
        raise ExpressionError("empty expression", offset)
    parser = _Parser(tokens)
    node = parser.expr()
    kind, value, where = parser.peek()
    if kind != "end":
        raise ExpressionError(f"unexpected token {value!r}", where)
    return node


# ---------------------------------------------------------------------------
# second-order forward mode


class Jet2:
    """Value with exact partials ``d/du1, d/du2`` and the Hessian entries.

    All components are numpy arrays of a common shape.
    """

    __slots__ = ("v", "d1", "d2", "d11", "d12", "d22")

    def __init__(self, v, d1=0.0, d2=0.0, d11=0.0, d12=0.0, d22=0.0):
        self.v = v
        self.d1 = d1
        self.d2 = d2
        self.d11 = d11
        self.d12 = d12
        self.d22 = d22

    @classmethod
    def variable(cls, value, which: int) -> "Jet2":
        value = np.asarray(value, dtype=float)
        one, zero = np.ones_like(value), np.zeros_like(value)
        if which == 1:
            return cls(value, one, zero, zero, zero, zero)
        return cls(value, zero, one, zero, zero, zero)

    @classmethod
    def constant(cls, value, like) -> "Jet2":
        zero = np.zeros_like(like)
        return cls(zero + value, zero, zero, zero, zero, zero)

    def chain(self, f0, f1, f2) -> "Jet2":
        """Apply a scalar function with value f0, derivative f1, second derivative f2."""
        return Jet2(
            f0,
            f1 * self.d1,
            f1 * self.d2,
            f2 * self.d1 * self.d1 + f1 * self.d11,
            f2 * self.d1 * self.d2 + f1 * self.d12,
            f2 * self.d2 * self.d2 + f1 * self.d22,
        )

    def __add__(self, o: "Jet2") -> "Jet2":
        return Jet2(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2,
                    self.d11 + o.d11, self.d12 + o.d12, self.d22 + o.d22)

    def __sub__(self, o: "Jet2") -> "Jet2":
        return Jet2(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2,
                    self.d11 - o.d11, self.d12 - o.d12, self.d22 - o.d22)

    def __neg__(self) -> "Jet2":
        return Jet2(-self.v, -self.d1, -self.d2, -self.d11, -self.d12, -self.d22)

    def __mul__(self, o: "Jet2") -> "Jet2":
        a, b = self, o
        return Jet2(
            a.v * b.v,
            a.d1 * b.v + a.v * b.d1,
            a.d2 * b.v + a.v * b.d2,
            a.d11 * b.v + 2 * a.d1 * b.d1 + a.v * b.d11,
            a.d12 * b.v + a.d1 * b.d2 + a.d2 * b.d1 + a.v * b.d12,
            a.d22 * b.v + 2 * a.d2 * b.d2 + a.v * b.d22,
        )

    def reciprocal(self) -> "Jet2":
        inv = 1.0 / self.v
        return self.chain(inv, -inv * inv, 2 * inv * inv * inv)

    def __truediv__(self, o: "Jet2") -> "Jet2":
        return self * o.reciprocal()


def _jet_unary(op: str, x: Jet2) -> Jet2:
    v = x.v
    if op == "neg":
        return -x
    if op == "sin":
        s, c = np.sin(v), np.cos(v)
        return x.chain(s, c, -s)
    if op == "cos":
        s, c = np.sin(v), np.cos(v)
        return x.chain(c, -s, -c)
    if op == "tan":
        t = np.tan(v)
        sec2 = 1 + t * t
        return x.chain(t, sec2, 2 * t * sec2)
    if op == "sinh":
        s, c = np.sinh(v), np.cosh(v)
        return x.chain(s, c, s)
    if op == "cosh":
        s, c = np.sinh(v), np.cosh(v)
        return x.chain(c, s, c)
    if op == "tanh":
        t = np.tanh(v)
        sech2 = 1 - t * t
        return x.chain(t, sech2, -2 * t * sech2)
    if op == "exp":
        e = np.exp(v)
        return x.chain(e, e, e)
    if op == "log":
        if np.any(v <= 0):
            raise EvaluationError("log of a non-positive number")
        return x.chain(np.log(v), 1 / v, -1 / (v * v))
    if op == "sqrt":
        if np.any(v < 0):
            raise EvaluationError("sqrt of a negative number")
        r = np.sqrt(v)
        return x.chain(r, 0.5 / r, -0.25 / (r * v))
    if op == "abs":
        sgn = np.sign(v)
        return x.chain(np.abs(v), sgn, np.zeros_like(v))
    raise ExpressionError(f"unknown unary op {op!r}")


def _jet_pow(base: Jet2, expo: Jet2, expo_node: Node) -> Jet2:
    if is_constant(expo_node):
        n = float(np.ravel(expo.v)[0])
        if n == 0.0:
            return Jet2.constant(1.0, base.v)
        if n == 1.0:
            return base
        if n.is_integer():
            v = base.v
            if n > 0:
                return base.chain(v ** n, n * v ** (n - 1), n * (n - 1) * v ** (n - 2))
            if np.any(v == 0):
                raise EvaluationError("zero raised to a negative power")
            return base.chain(v ** n, n * v ** (n - 1), n * (n - 1) * v ** (n - 2))
        if np.any(base.v < 0):
            raise EvaluationError("negative base with non-integer exponent")
        v = base.v
        with np.errstate(divide="ignore", invalid="ignore"):
            return base.chain(v ** n, n * v ** (n - 1), n * (n - 1) * v ** (n - 2))
    if np.any(base.v <= 0):
        raise EvaluationError("non-positive base with variable exponent")
    return _jet_unary("exp", expo * _jet_unary("log", base))


def _float_unary(op: str, v):
    if op == "neg":
        return -v
    if op == "log" and np.any(v <= 0):
        raise EvaluationError("log of a non-positive number")
    if op == "sqrt" and np.any(v < 0):
        raise EvaluationError("sqrt of a negative number")
    return getattr(np, op)(v)


def _float_pow(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    nonint = b != np.round(b)
    if np.any((a < 0) & nonint):
        raise EvaluationError("negative base with non-integer exponent")
    if np.any((a == 0) & (b < 0)):
        raise EvaluationError("zero raised to a negative power")
    return np.power(a, b)


def evaluate(node: Node, u1, u2):
    """Evaluate on floats or broadcastable numpy arrays."""
    if isinstance(node, Const):
        return np.zeros(np.broadcast(u1, u2).shape) + node.value
    if isinstance(node, Var):
        return np.zeros(np.broadcast(u1, u2).shape) + (u1 if node.name == "u1" else u2)
    if isinstance(node, Unary):
        return _float_unary(node.op, evaluate(node.arg, u1, u2))
    a = evaluate(node.left, u1, u2)
    b = evaluate(node.right, u1, u2)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(b == 0):
            raise EvaluationError("division by zero")
        return a / b
    return _float_pow(a, b)


def evaluate_jet(node: Node, x1: Jet2, x2: Jet2) -> Jet2:
    """Evaluate with second-order forward-mode derivatives."""
    if isinstance(node, Const):
        return Jet2.constant(node.value, x1.v)
    if isinstance(node, Var):
        return x1 if node.name == "u1" else x2
    if isinstance(node, Unary):
        return _jet_unary(node.op, evaluate_jet(node.arg, x1, x2))
    a = evaluate_jet(node.left, x1, x2)
    b = evaluate_jet(node.right, x1, x2)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(b.v == 0):
            raise EvaluationError("division by zero")
        return a / b
    return _jet_pow(a, b, node.right)


def constant_value(node: Node) -> float:
    if not is_constant(node):
        raise ExpressionError("expected a constant expression")
    return float(evaluate(node, 0.0, 0.0))
