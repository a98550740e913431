"""Small arithmetic expression language for custom obstacle graphs.

Grammar (whitespace is ignored)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?          # right associative
    atom   := NUMBER | VAR | "exp" "(" expr ")" | "(" expr ")"
    VAR    := "x2" | "x3" | ... | "xn"

Numbers accept the usual decimal and exponent notation (``1.5e-3``).
Expressions are parsed into a tuple tree that can be evaluated with numpy
(vectorized) or mpmath (high precision) and differentiated symbolically.
"""

from __future__ import annotations

import math
import re
from typing import Any

Node = tuple

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class ExpressionError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at offset {position}")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    def peek(self):
        return self.tokens[self.i]

    def take(self, value: str | None = None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            raise ExpressionError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = add(node, self.term()) if op == "+" else sub(node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = mul(node, self.unary()) if op == "*" else div(node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok[1] == "-":
            self.take()
            return neg(self.unary())
        if tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return power(base, self.unary())
        return base

    def atom(self) -> Node:
        kind, value, pos = self.take()
        if kind == "num":
            return ("num", float(value))
        if kind == "name":
            if value == "exp":
                self.take("(")
                inner = self.expr()
                self.take(")")
                return ("exp", inner)
            m = re.fullmatch(r"x(\d+)", value)
            if m:
                idx = int(m.group(1))
                if not 2 <= idx <= self.dim:
                    raise ExpressionError(f"variable {value} outside x2..x{self.dim}", pos)
                return ("var", idx - 2)
            raise ExpressionError(f"unknown name {value!r}", pos)
        if value == "(":
            inner = self.expr()
            self.take(")")
            return inner
        raise ExpressionError(f"unexpected token {value or 'end of input'!r}", pos)


def parse(text: str, dim: int) -> Node:
    """Parse ``text`` into an expression tree over variables x2..x{dim}."""
    return _Parser(text, dim).parse()


# smart constructors keep derivative trees small

def _is_num(a: Node, v: float | None = None) -> bool:
    return a[0] == "num" and (v is None or a[1] == v)


def add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return ("num", a[1] + b[1])
    return ("add", a, b)


def sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return ("num", a[1] - b[1])
    if _is_num(a, 0.0):
        return neg(b)
    return ("sub", a, b)


def neg(a: Node) -> Node:
    if _is_num(a):
        return ("num", -a[1])
    if a[0] == "neg":
        return a[1]
    return ("neg", a)


def mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ("num", 0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return ("num", a[1] * b[1])
    return ("mul", a, b)


def div(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return ("num", 0.0)
    if _is_num(b, 1.0):
        return a
    return ("div", a, b)


def power(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return ("num", 1.0)
    if _is_num(b, 1.0):
        return a
    return ("pow", a, b)


def _has_vars(a: Node) -> bool:
    if a[0] == "var":
        return True
    if a[0] == "num":
        return False
    return any(_has_vars(c) for c in a[1:])


def diff(a: Node, i: int) -> Node:
    """Symbolic partial derivative with respect to variable index ``i``."""
    kind = a[0]
    if kind == "num":
        return ("num", 0.0)
    if kind == "var":
        return ("num", 1.0 if a[1] == i else 0.0)
    if kind == "neg":
        return neg(diff(a[1], i))
    if kind == "add":
        return add(diff(a[1], i), diff(a[2], i))
    if kind == "sub":
        return sub(diff(a[1], i), diff(a[2], i))
    if kind == "mul":
        return add(mul(diff(a[1], i), a[2]), mul(a[1], diff(a[2], i)))
    if kind == "div":
        num = sub(mul(diff(a[1], i), a[2]), mul(a[1], diff(a[2], i)))
        return div(num, power(a[2], ("num", 2.0)))
    if kind == "exp":
        return mul(a, diff(a[1], i))
    if kind == "log":
        return div(diff(a[1], i), a[1])
    if kind == "pow":
        base, ex = a[1], a[2]
        if not _has_vars(ex):
            return mul(mul(ex, power(base, sub(ex, ("num", 1.0)))), diff(base, i))
        # general case: d(b^e) = b^e (e' log b + e b'/b)
        term = add(mul(diff(ex, i), ("log", base)), div(mul(ex, diff(base, i)), base))
        return mul(a, term)
    raise ValueError(f"unknown node {kind}")


def evaluate(a: Node, xs: Any, backend: Any = None) -> Any:
    """Evaluate tree ``a`` with ``xs[k]`` bound to variable k.

    ``backend`` supplies ``exp`` and ``log``; numpy is used when omitted.
    """
    if backend is None:
        import numpy as backend  # noqa: N813
    kind = a[0]
    if kind == "num":
        return a[1] if backend.__name__ != "mpmath" else backend.mpf(a[1])
    if kind == "var":
        return xs[a[1]]
    if kind == "neg":
        return -evaluate(a[1], xs, backend)
    if kind in ("add", "sub", "mul", "div", "pow"):
        left = evaluate(a[1], xs, backend)
        right = evaluate(a[2], xs, backend)
        if kind == "add":
            return left + right
        if kind == "sub":
            return left - right
        if kind == "mul":
            return left * right
        if kind == "div":
            return left / right
        if a[2][0] == "num" and float(a[2][1]).is_integer():
            return left ** int(a[2][1])
        return left ** right
    if kind == "exp":
        return backend.exp(evaluate(a[1], xs, backend))
    if kind == "log":
        return backend.log(evaluate(a[1], xs, backend))
    raise ValueError(f"unknown node {kind}")


def to_text(a: Node) -> str:
    """Render a tree back to parseable text (fully parenthesized)."""
    kind = a[0]
    if kind == "num":
        v = a[1]
        return repr(v) if v >= 0 else f"({v!r})"
    if kind == "var":
        return f"x{a[1] + 2}"
    if kind == "neg":
        return f"(-{to_text(a[1])})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
    if kind in sym:
        return f"({to_text(a[1])}{sym[kind]}{to_text(a[2])})"
    if kind == "exp":
        return f"exp({to_text(a[1])})"
    raise ValueError(f"cannot render node {kind}")


def is_finite_number(v: float) -> bool:
    return math.isfinite(v)
