"""Small arithmetic expression language for metric components.

Metric tensors, one-forms, wind fields and conformal factors are supplied in
config files as strings like ``"4/(K*(1+x1^2+x2^2)^2)"``.  This module parses
them into immutable ASTs and compiles them to fast closures.

Grammar (recursive descent, see docs/expression-grammar.md)::

    expr   := term  (('+' | '-') term)*          left associative
    term   := unary (('*' | '/') unary)*         left associative
    unary  := '-' unary | power
    power  := atom ('^' unary)?                  right associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Precedence: ``^``  >  unary ``-``  >  ``* /``  >  ``+ -``.

Names of the form ``x1 .. xn`` are chart coordinates; every other name is a
parameter bound at evaluation time.  Known functions: sin cos tan exp log
sqrt sinh cosh tanh atan abs.  Domain violations (sqrt of a negative, log of
a non-positive, division by zero, overflow) raise DomainError; an expression
never silently returns NaN or infinity.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError

__all__ = [
    "Expression",
    "ExprSyntaxError",
    "UnboundName",
    "DomainError",
    "parse",
    "to_source",
    "evaluate",
    "grad_fd",
    "bind",
    "FUNCTIONS",
]

FUNCTIONS = (
    "sin", "cos", "tan", "exp", "log", "sqrt",
    "sinh", "cosh", "tanh", "atan", "abs",
)

_COORD_RE = re.compile(r"x([1-9][0-9]*)\Z")


class ExprSyntaxError(ConfigError):
    """Malformed source text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnboundName(ConfigError):
    def __init__(self, name):
        super().__init__(f"unbound name '{name}'")
        self.name = name


class DomainError(NumericalError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Name:
    ident: str


@dataclass(frozen=True)
class Unary:
    arg: "Expression"


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: "Expression"
    rhs: "Expression"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expression"


Expression = Num | Name | Unary | Bin | Call


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<num>    (?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)? )
  | (?P<name>   [A-Za-z_][A-Za-z0-9_]* )
  | (?P<op>     [-+*/^()] )
  | (?P<ws>     \s+ )
    """,
    re.VERBOSE,
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(source)))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected '{op}', found {text or 'end of input'!r}", off)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"trailing input {text!r}", off)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = Bin(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = Bin(text, node, self.unary())
            else:
                return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Unary(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(":
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function '{text}'", off)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            return Name(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(
            f"expected a value, found {text or 'end of input'!r}", off
        )


def parse(source):
    """Parse source text into an Expression AST."""
    if not isinstance(source, str) or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Unary):
        return _PREC["neg"]
    return 9


def to_source(node):
    """Render an AST back to parseable text; parse(to_source(e)) evaluates like e."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Name):
        return node.ident
    if isinstance(node, Unary):
        inner = to_source(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.fn}({to_source(node.arg)})"
    if isinstance(node, Bin):
        p = _PREC[node.op]
        ls, rs = to_source(node.lhs), to_source(node.rhs)
        if node.op == "^":
            # right associative; parenthesize a compound base
            if _prec(node.lhs) <= p:
                ls = f"({ls})"
            if _prec(node.rhs) < _PREC["neg"]:
                rs = f"({rs})"
        else:
            if _prec(node.lhs) < p:
                ls = f"({ls})"
            # - and / do not associate to the right
            if _prec(node.rhs) < p or (_prec(node.rhs) == p and node.op in "-/"):
                rs = f"({rs})"
        return f"{ls} {node.op} {rs}"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# Compilation and evaluation


def _safe_sqrt(a):
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _safe_log(a):
    if a <= 0.0:
        raise DomainError(f"log of non-positive value {a!r}")
    return math.log(a)


_FN_IMPL = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": _safe_log,
    "sqrt": _safe_sqrt,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "atan": math.atan,
    "abs": abs,
}


def _collect_names(node, out):
    if isinstance(node, Name):
        out.add(node.ident)
    elif isinstance(node, Unary):
        _collect_names(node.arg, out)
    elif isinstance(node, Call):
        _collect_names(node.arg, out)
    elif isinstance(node, Bin):
        _collect_names(node.lhs, out)
        _collect_names(node.rhs, out)


def names(node):
    """All free names (coordinates and parameters) occurring in the AST."""
    out = set()
    _collect_names(node, out)
    return out


def _compile(node, dim, params):
    if isinstance(node, Num):
        c = node.value
        return lambda x: c
    if isinstance(node, Name):
        m = _COORD_RE.match(node.ident)
        if m:
            k = int(m.group(1))
            if k > dim:
                raise UnboundName(node.ident)
            k -= 1
            return lambda x: x[k]
        if node.ident not in params:
            raise UnboundName(node.ident)
        c = float(params[node.ident])
        return lambda x: c
    if isinstance(node, Unary):
        f = _compile(node.arg, dim, params)
        return lambda x: -f(x)
    if isinstance(node, Call):
        f = _compile(node.arg, dim, params)
        g = _FN_IMPL[node.fn]

        def call(x, g=g, f=f, fn=node.fn):
            try:
                return g(f(x))
            except DomainError:
                raise
            except (ValueError, OverflowError) as exc:
                raise DomainError(f"{fn}: {exc}") from None

        return call
    if isinstance(node, Bin):
        lf = _compile(node.lhs, dim, params)
        rf = _compile(node.rhs, dim, params)
        if node.op == "+":
            return lambda x: lf(x) + rf(x)
        if node.op == "-":
            return lambda x: lf(x) - rf(x)
        if node.op == "*":
            return lambda x: lf(x) * rf(x)
        if node.op == "/":

            def div(x):
                d = rf(x)
                if d == 0.0:
                    raise DomainError("division by zero")
                return lf(x) / d

            return div
        if node.op == "^":

            def power(x):
                try:
                    return math.pow(lf(x), rf(x))
                except (ValueError, OverflowError, ZeroDivisionError) as exc:
                    raise DomainError(f"power: {exc}") from None

            return power
    raise TypeError(f"not an expression node: {node!r}")


def bind(node, dim, params=None):
    """Compile the AST into a closure f(x) -> float for a fixed binding.

    x is an array of chart coordinates of length ``dim``; parameter names are
    frozen from ``params``.  Unbound names raise here, not at call time.
    """
    if isinstance(node, str):
        node = parse(node)
    inner = _compile(node, dim, dict(params or {}))

    def f(x):
        val = inner(x)
        if not math.isfinite(val):
            raise DomainError(f"non-finite result {val!r}")
        return val

    return f


def evaluate(node, point, params=None):
    """Evaluate at a chart point with the given parameter binding."""
    point = np.asarray(point, dtype=float)
    return bind(node, point.shape[0], params)(point)


def grad_fd(node, point, params=None, step=None):
    """Central-difference gradient with per-component step 1e-5*max(1,|x_i|)."""
    point = np.asarray(point, dtype=float)
    f = bind(node, point.shape[0], params)
    grad = np.empty_like(point)
    for i in range(point.shape[0]):
        h = step if step is not None else 1e-5 * max(1.0, abs(point[i]))
        xp = point.copy()
        xm = point.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad
