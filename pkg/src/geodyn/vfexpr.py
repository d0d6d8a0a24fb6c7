"""Scalar expressions for vector-field components and metric entries.

Expressions are parsed once into an immutable AST and compiled into
closures that evaluate either on plain floats or on second-order jets
(value, gradient, Hessian) for exact forward-mode derivatives.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' integer)?
    unary  := '-'? atom
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Note that ``-x1^2`` parses as ``(-x1)^2``; write ``-(x1^2)`` for the other
reading.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "Param", "Const", "Neg", "BinOp", "Pow", "Call",
    "Jet", "ExprError", "ExprSyntaxError", "UnknownIdentifier", "IndexOutOfRange",
    "UnboundParameter", "DomainError", "FUNCTIONS",
    "parse", "to_str", "evaluate", "eval_jet1", "eval_jet2", "compile_expr",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")


# --------------------------------------------------------------------------- errors

class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, offset: int, expected: Sequence[str], src: str = ""):
        self.offset = offset
        self.expected = tuple(expected)
        near = src[offset:offset + 10] if src else ""
        super().__init__(
            f"syntax error at offset {offset}: expected {' | '.join(self.expected)}"
            + (f" near {near!r}" if near else "")
        )


class UnknownIdentifier(ExprError):
    def __init__(self, name: str, offset: int | None = None):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r}")


class IndexOutOfRange(ExprError):
    def __init__(self, index: int, dim: int):
        self.index = index
        self.dim = dim
        super().__init__(f"variable x{index} out of range for dimension {dim}")


class UnboundParameter(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} has no value")


class DomainError(ExprError):
    """Raised when a subexpression leaves the domain of an operation."""

    def __init__(self, node: "Expr", reason: str):
        self.node = node
        self.reason = reason
        super().__init__(f"{reason} in {to_str(node)!r}")


# --------------------------------------------------------------------------- AST

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, as written


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Const:
    name: str  # only "pi"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Param, Const, Neg, BinOp, Pow, Call]


# --------------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)
_VAR_RE = re.compile(r"x(\d+)")


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(src)
    while pos < n:
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            if src[pos:].strip() == "":
                break
            start = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExprSyntaxError(start, ["number", "identifier", "operator"], src)
        kind = m.lastgroup
        if kind is None:  # trailing whitespace
            break
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, src: str, dim: int, params: Sequence[str]):
        self.src = src
        self.dim = dim
        self.params = frozenset(params)
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(off, [repr(op)], self.src)
        self.i += 1

    def parse(self) -> Expr:
        e = self.expr()
        kind, _, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(off, ["operator", "end of input"], self.src)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                left = BinOp(text, left, self.term())
            else:
                return left

    def term(self) -> Expr:
        left = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                left = BinOp(text, left, self.factor())
            else:
                return left

    def factor(self) -> Expr:
        base = self.unary()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            sign = 1
            kind, text, off = self.peek()
            if kind == "op" and text == "-":
                self.take()
                sign = -1
                kind, text, off = self.peek()
            if kind != "num" or not text.isdigit():
                raise ExprSyntaxError(off, ["integer exponent"], self.src)
            self.take()
            return Pow(base, sign * int(text))
        return base

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.atom())
        return self.atom()

    def atom(self) -> Expr:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(" and text in FUNCTIONS and text not in self.params:
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            return self.resolve(text, off)
        raise ExprSyntaxError(off, ["number", "identifier", "'('"], self.src)

    def resolve(self, name: str, off: int) -> Expr:
        m = _VAR_RE.fullmatch(name)
        if m:
            k = int(m.group(1))
            if not 1 <= k <= self.dim:
                raise IndexOutOfRange(k, self.dim)
            return Var(k)
        if name in self.params:
            return Param(name)
        if name in FUNCTIONS:
            raise ExprSyntaxError(off + len(name), ["'(' after function name"], self.src)
        if name == "pi":
            return Const("pi")
        raise UnknownIdentifier(name, off)


def parse(src: str, dim: int, params: Sequence[str] = ()) -> Expr:
    """Parse ``src`` into an expression over ``x1..x<dim>`` and ``params``."""
    if not src or not src.strip():
        raise ExprSyntaxError(0, ["expression"], src)
    if dim < 1:
        raise ValueError("dimension must be positive")
    return _Parser(src, dim, params).parse()


# --------------------------------------------------------------------------- printer

def _atom_str(e: Expr) -> str:
    if isinstance(e, Num):
        v = float(e.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, (Param, Const)):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_str(e.arg)})"
    return f"({to_str(e)})"


def _unary_str(e: Expr) -> str:
    if isinstance(e, Neg):
        return "-" + _atom_str(e.operand)
    return _atom_str(e)


def _factor_str(e: Expr) -> str:
    if isinstance(e, Pow):
        return f"{_unary_str(e.base)}^{e.exponent}"
    return _unary_str(e)


def _term_str(e: Expr) -> str:
    if isinstance(e, BinOp) and e.op in "*/":
        return f"{_term_str(e.left)}{e.op}{_factor_str(e.right)}"
    return _factor_str(e)


def to_str(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_str(e))`` rebuilds the same tree."""
    if isinstance(e, BinOp) and e.op in "+-":
        return f"{to_str(e.left)} {e.op} {_term_str(e.right)}"
    return _term_str(e)


# --------------------------------------------------------------------------- jets

class Jet:
    """Truncated Taylor jet: value, gradient and (optionally) Hessian."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v: float, g: np.ndarray, h: np.ndarray | None = None):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def variables(cls, x: Sequence[float], order: int = 2) -> list["Jet"]:
        n = len(x)
        eye = np.eye(n)
        out = []
        for i, xi in enumerate(x):
            h = np.zeros((n, n)) if order >= 2 else None
            out.append(cls(float(xi), eye[i].copy(), h))
        return out

    def __repr__(self):
        return f"Jet(v={self.v!r}, g={self.g!r}, h={self.h!r})"

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v + o.v, self.g + o.g, None if self.h is None else self.h + o.h)
        return Jet(self.v + o, self.g, self.h)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g, None if self.h is None else -self.h)

    def __sub__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v - o.v, self.g - o.g, None if self.h is None else self.h - o.h)
        return Jet(self.v - o, self.g, self.h)

    def __rsub__(self, o):
        return Jet(o - self.v, -self.g, None if self.h is None else -self.h)

    def __mul__(self, o):
        if isinstance(o, Jet):
            g = self.v * o.g + o.v * self.g
            h = None
            if self.h is not None:
                cross = np.outer(self.g, o.g)
                h = self.v * o.h + o.v * self.h + (cross + cross.T)
            return Jet(self.v * o.v, g, h)
        return Jet(self.v * o, self.g * o, None if self.h is None else self.h * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet):
            r = 1.0 / o.v
            return self * o.chain(r, -r * r, 2.0 * r * r * r)
        return self * (1.0 / o)

    def __rtruediv__(self, o):
        r = 1.0 / self.v
        return o * self.chain(r, -r * r, 2.0 * r * r * r)

    def chain(self, f0: float, f1: float, f2: float) -> "Jet":
        """Compose a scalar function with value/derivatives f0, f1, f2 at self.v."""
        h = None
        if self.h is not None:
            h = f1 * self.h + f2 * np.outer(self.g, self.g)
        return Jet(f0, f1 * self.g, h)


Number = Union[float, Jet]


# --------------------------------------------------------------------------- compile

def _value(a: Number) -> float:
    return a.v if isinstance(a, Jet) else a


def _recip(node, a):
    v = _value(a)
    if v == 0.0:
        raise DomainError(node, "division by zero")
    if isinstance(a, Jet):
        r = 1.0 / v
        return a.chain(r, -r * r, 2.0 * r * r * r)
    return 1.0 / v


def _ipow(node, a, k: int):
    if k < 0:
        return _recip(node, _ipow(node, a, -k))
    if k == 0:
        return 1.0
    v = _value(a)
    if isinstance(a, Jet):
        f1 = k * v ** (k - 1)
        f2 = k * (k - 1) * v ** (k - 2) if k >= 2 else 0.0
        return a.chain(v ** k, f1, f2)
    return v ** k


def _apply(node: Call, a: Number) -> Number:
    name = node.func
    v = _value(a)
    jet = isinstance(a, Jet)
    if name == "sin":
        s = math.sin(v)
        return a.chain(s, math.cos(v), -s) if jet else s
    if name == "cos":
        c = math.cos(v)
        return a.chain(c, -math.sin(v), -c) if jet else c
    if name == "tan":
        c = math.cos(v)
        if c == 0.0:
            raise DomainError(node, "tan pole")
        t = math.tan(v)
        sec2 = 1.0 + t * t
        return a.chain(t, sec2, 2.0 * t * sec2) if jet else t
    if name == "exp":
        try:
            e = math.exp(v)
        except OverflowError:
            raise DomainError(node, "exp overflow") from None
        return a.chain(e, e, e) if jet else e
    if name == "log":
        if v <= 0.0:
            raise DomainError(node, "log of non-positive value")
        return a.chain(math.log(v), 1.0 / v, -1.0 / (v * v)) if jet else math.log(v)
    if name == "sqrt":
        if v < 0.0 or (jet and v == 0.0):
            raise DomainError(node, "sqrt of negative value" if v < 0 else "sqrt not differentiable at 0")
        s = math.sqrt(v)
        return a.chain(s, 0.5 / s, -0.25 / (s * v)) if jet else s
    if name == "abs":
        if jet:
            sg = 1.0 if v >= 0.0 else -1.0
            return a.chain(abs(v), sg, 0.0)
        return abs(v)
    raise UnknownIdentifier(name)  # pragma: no cover - parser forbids it


def compile_expr(e: Expr, bindings: Mapping[str, float] | None = None) -> Callable[[Sequence[Number]], Number]:
    """Compile ``e`` into ``fn(xs)`` where ``xs[i]`` is the value of ``x{i+1}``.

    Parameters are bound now; ``xs`` may hold floats or :class:`Jet` objects.
    """
    bindings = bindings or {}

    def build(node: Expr):
        if isinstance(node, Num):
            c = float(node.value)
            return lambda xs: c
        if isinstance(node, Const):
            return lambda xs: math.pi
        if isinstance(node, Var):
            k = node.index - 1
            return lambda xs: xs[k]
        if isinstance(node, Param):
            if node.name not in bindings:
                raise UnboundParameter(node.name)
            c = float(bindings[node.name])
            return lambda xs: c
        if isinstance(node, Neg):
            f = build(node.operand)
            return lambda xs: -f(xs)
        if isinstance(node, Pow):
            f = build(node.base)
            k = node.exponent
            return lambda xs: _ipow(node, f(xs), k)
        if isinstance(node, Call):
            f = build(node.arg)
            return lambda xs: _apply(node, f(xs))
        if isinstance(node, BinOp):
            fl, fr = build(node.left), build(node.right)
            if node.op == "+":
                return lambda xs: fl(xs) + fr(xs)
            if node.op == "-":
                return lambda xs: fl(xs) - fr(xs)
            if node.op == "*":
                return lambda xs: fl(xs) * fr(xs)

            def div(xs):
                num = fl(xs)
                den = fr(xs)
                if not isinstance(den, Jet):
                    if den == 0.0:
                        raise DomainError(node, "division by zero")
                    return num / den if not isinstance(num, Jet) else num * (1.0 / den)
                return num * _recip(node, den)
            return div
        raise TypeError(f"not an expression node: {node!r}")

    fn = build(e)

    def guarded(xs):
        try:
            return fn(xs)
        except (OverflowError, ZeroDivisionError) as exc:
            raise DomainError(e, str(exc)) from None
    return guarded


def _as_jet(r: Number, n: int, order: int) -> Jet:
    if isinstance(r, Jet):
        return r
    return Jet(float(r), np.zeros(n), np.zeros((n, n)) if order >= 2 else None)


def evaluate(e: Expr, x: Sequence[float], bindings: Mapping[str, float] | None = None) -> float:
    """IEEE-double value of ``e`` at point ``x``."""
    return float(compile_expr(e, bindings)([float(v) for v in x]))


def eval_jet1(e: Expr, x: Sequence[float], bindings: Mapping[str, float] | None = None) -> Jet:
    return _as_jet(compile_expr(e, bindings)(Jet.variables(x, order=1)), len(x), 1)


def eval_jet2(e: Expr, x: Sequence[float], bindings: Mapping[str, float] | None = None) -> Jet:
    """Value, gradient and Hessian of ``e`` at ``x`` by forward-mode jets."""
    return _as_jet(compile_expr(e, bindings)(Jet.variables(x, order=2)), len(x), 2)
