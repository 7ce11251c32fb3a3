"""Arithmetic expressions for loads, tensor coefficients and test functions.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are variables (``x1 x2 x3 y1 y2``), region indicators (``chiF chiM``)
and the functions ``sin cos exp abs``. ``^`` is right associative and binds
tighter than unary minus, so ``-x^2`` means ``-(x^2)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}
ROD_VARIABLES = frozenset({"x1", "x2", "x3", "chiF", "chiM"})
HOM_VARIABLES = ROD_VARIABLES | {"y1", "y2"}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


class ExpressionError(ValueError):
    """Parse or validation error; ``offset`` is the byte offset into the source."""

    def __init__(self, message: str, offset: int, source: str = ""):
        super().__init__(f"{message} at offset {offset}" + (f" in {source!r}" if source else ""))
        self.offset = offset
        self.source = source


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        raw = text.encode()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                if text[pos:].strip() == "":
                    break
                # report the first non-space character
                bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise ExpressionError(f"unexpected character {text[bad]!r}", len(text[:bad].encode()), text)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), len(text[:start].encode())))
            pos = m.end()
        self.end_offset = len(raw)
        self.i = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def offset(self) -> int:
        tok = self.peek()
        return tok[2] if tok else self.end_offset

    def take_op(self, ops: str) -> str | None:
        tok = self.peek()
        if tok and tok[0] == "op" and tok[1] in ops:
            self.i += 1
            return tok[1]
        return None

    def expect(self, op: str) -> None:
        if self.take_op(op) is None:
            raise ExpressionError(f"expected {op!r}", self.offset(), self.text)

    def parse(self) -> Node:
        if not self.tokens:
            raise ExpressionError("empty expression", 0, self.text)
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"unexpected token {self.peek()[1]!r}", self.offset(), self.text)
        return node

    def expr(self) -> Node:
        node = self.term()
        while (op := self.take_op("+-")) is not None:
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while (op := self.take_op("*/")) is not None:
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        op = self.take_op("+-")
        if op == "-":
            return Neg(self.unary())
        if op == "+":
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.take_op("^") is not None:
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression", self.end_offset, self.text)
        kind, val, off = tok
        if kind == "num":
            self.i += 1
            return Num(float(val))
        if kind == "name":
            self.i += 1
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val not in HOM_VARIABLES:
                raise ExpressionError(f"unknown identifier {val!r}", off, self.text)
            return Var(val)
        if val == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionError(f"unexpected token {val!r}", off, self.text)


def parse(text: str) -> Node:
    """Parse an expression; raises :class:`ExpressionError` with a byte offset."""
    return _Parser(text).parse()


def variables(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, Call):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def to_string(node: Node) -> str:
    """Fully parenthesized text that reparses to an identical tree."""
    if isinstance(node, Num):
        text = repr(node.value)
        return text if node.value >= 0 else f"({text})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_string(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_string(node.arg)})"
    return f"({to_string(node.left)} {node.op} {to_string(node.right)})"


def evaluate(node: Node, env: Mapping[str, np.ndarray | float]) -> np.ndarray | float:
    """Vectorized evaluation; ``env`` maps variable names to arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise ExpressionError(f"variable {node.name!r} is not available here", 0) from None
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](evaluate(node.arg, env))
    a = evaluate(node.left, env)
    b = evaluate(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


@dataclass(frozen=True)
class Expression:
    """A parsed expression with its source text."""

    source: str
    tree: Node

    @classmethod
    def parse(cls, text: str | float, allowed: frozenset[str] = HOM_VARIABLES) -> "Expression":
        text = repr(float(text)) if isinstance(text, (int, float)) else str(text)
        tree = parse(text)
        bad = variables(tree) - allowed
        if bad:
            name = sorted(bad)[0]
            raise ExpressionError(f"variable {name!r} not allowed in this mode", text.find(name), text)
        return cls(text, tree)

    @property
    def variables(self) -> frozenset[str]:
        return variables(self.tree)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def __call__(self, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        value = np.asarray(evaluate(self.tree, env), dtype=float)
        return np.broadcast_to(value, (n,)).astype(float, copy=True)

    def __str__(self) -> str:
        return self.source
