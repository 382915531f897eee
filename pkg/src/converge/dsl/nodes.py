"""Expression tree for the system / candidate DSL."""

import math
from dataclasses import dataclass
from typing import Tuple

FUNCTIONS = {"sin": 1, "cos": 1, "sqrt": 1, "abs": 1, "exp": 1, "log": 1,
             "min": 2, "max": 2, "floor": 1}
PARAMS = {"pi": math.pi, "e": math.e}


class Node:
    __slots__ = ()

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Const(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    """State variable. ``kind`` is "x" or "y"; ``index`` is zero-based."""
    kind: str
    index: int


@dataclass(frozen=True)
class Time(Node):
    pass


@dataclass(frozen=True)
class BoundArg(Node):
    """The argument ``s`` of a class-K bound."""
    pass


@dataclass(frozen=True)
class Param(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    arg: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str  # one of + - * / ^
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: Tuple[Node, ...]


# precedence levels used by the printer; larger binds tighter
_ADD, _MUL, _UNARY, _POW, _ATOM = 1, 2, 3, 4, 5
_BIN_PREC = {"+": _ADD, "-": _ADD, "*": _MUL, "/": _MUL, "^": _POW}


def _prec(node):
    if isinstance(node, BinOp):
        return _BIN_PREC[node.op]
    if isinstance(node, Neg):
        return _UNARY
    if isinstance(node, Const) and math.copysign(1.0, node.value) < 0:
        return _UNARY   # printed with a leading minus
    return _ATOM


def _wrap(node, ok):
    text = to_source(node)
    return text if ok else f"({text})"


def to_source(node):
    """Print ``node`` so that parsing the text yields an identical tree."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"{node.kind}{node.index + 1}"
    if isinstance(node, Time):
        return "k"
    if isinstance(node, BoundArg):
        return "s"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        return "-" + _wrap(node.arg, _prec(node.arg) >= _UNARY)
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, BinOp):
        p = _BIN_PREC[node.op]
        if node.op == "^":
            # right-associative; exponent may be a unary minus
            return f"{_wrap(node.left, _prec(node.left) > _POW)}^{_wrap(node.right, _prec(node.right) >= _UNARY)}"
        left = _wrap(node.left, _prec(node.left) >= p)
        right = _wrap(node.right, _prec(node.right) > p)
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


def walk(node):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.arg)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from walk(a)


def uses_time(node):
    return any(isinstance(m, Time) for m in walk(node))


def max_index(node, kind):
    """Largest zero-based index of ``kind`` variables, or -1."""
    return max((m.index for m in walk(node) if isinstance(m, Var) and m.kind == kind), default=-1)


def substitute(node, mapping):
    """Rebuild ``node`` replacing leaves for which ``mapping(leaf)`` is not None."""
    if isinstance(node, Neg):
        return Neg(substitute(node.arg, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, mapping), substitute(node.right, mapping))
    if isinstance(node, Call):
        return Call(node.name, tuple(substitute(a, mapping) for a in node.args))
    repl = mapping(node)
    return node if repl is None else repl
