"""Recursive-descent parser for ``.dsys`` systems and ``.lyap`` candidates.

Statements are separated by ``;`` or newlines; ``#`` starts a comment.
Unary minus binds looser than ``^`` (``-x^2`` is ``-(x^2)``) and ``^`` is
right-associative.
"""

import re
from dataclasses import dataclass

from ..errors import DSLSyntaxError, UnknownIdentifier
from .nodes import FUNCTIONS, PARAMS, BinOp, BoundArg, Call, Const, Neg, Param, Time, Var

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),;=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str   # number | ident | op | sep | eof
    text: str
    line: int
    column: int


def tokenize(text):
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "newline":
            tokens.append(Token("sep", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "op" and m.group() == ";":
            tokens.append(Token("sep", ";", line, col))
        elif kind in ("number", "ident", "op"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class Scope:
    """Which variables an expression may reference."""

    def __init__(self, n=None, allow_x=True, allow_y=False, allow_k=True, allow_s=False):
        self.n = n
        self.allow_x = allow_x
        self.allow_y = allow_y
        self.allow_k = allow_k
        self.allow_s = allow_s

    def resolve(self, tok):
        name = tok.text
        m = re.fullmatch(r"([xy])(\d+)", name)
        if m:
            kind, idx = m.group(1), int(m.group(2))
            allowed = self.allow_x if kind == "x" else self.allow_y
            if not allowed:
                raise UnknownIdentifier(f"line {tok.line}, column {tok.column}: `{name}` not allowed here")
            if idx < 1 or (self.n is not None and idx > self.n):
                raise UnknownIdentifier(
                    f"line {tok.line}, column {tok.column}: `{name}` out of range for dimension {self.n}")
            return Var(kind, idx - 1)
        if name == "k" and self.allow_k:
            return Time()
        if name == "s" and self.allow_s:
            return BoundArg()
        if name in PARAMS:
            return Param(name)
        raise UnknownIdentifier(f"line {tok.line}, column {tok.column}: unknown identifier `{name}`")


class ExprParser:
    def __init__(self, tokens, pos=0):
        self.tokens = tokens
        self.pos = pos

    @property
    def tok(self):
        return self.tokens[self.pos]

    def advance(self):
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect(self, text):
        t = self.tok
        if t.text != text:
            raise DSLSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.line, t.column, [repr(text)])
        return self.advance()

    def expression(self, scope):
        node = self.term(scope)
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term(scope))
        return node

    def term(self, scope):
        node = self.unary(scope)
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary(scope))
        return node

    def unary(self, scope):
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary(scope))
        return self.power(scope)

    def power(self, scope):
        base = self.atom(scope)
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary(scope))
        return base

    def atom(self, scope):
        t = self.tok
        if t.kind == "number":
            self.advance()
            return Const(float(t.text))
        if t.kind == "ident":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect("(")
                args = [self.expression(scope)]
                while self.tok.text == ",":
                    self.advance()
                    args.append(self.expression(scope))
                self.expect(")")
                arity = FUNCTIONS[t.text]
                if len(args) != arity:
                    raise DSLSyntaxError(f"{t.text} takes {arity} argument(s), got {len(args)}",
                                         t.line, t.column)
                return Call(t.text, tuple(args))
            return scope.resolve(t)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expression(scope)
            self.expect(")")
            return node
        raise DSLSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.line, t.column,
                             ["number", "identifier", "'('", "'-'"])


def parse_expression(text, scope=None):
    """Parse a single expression (used by tests and the CLI)."""
    tokens = tokenize(text)
    p = ExprParser(tokens)
    node = p.expression(scope or Scope())
    while p.tok.kind == "sep":
        p.advance()
    if p.tok.kind != "eof":
        raise DSLSyntaxError(f"trailing input {p.tok.text!r}", p.tok.line, p.tok.column, ["end of input"])
    return node


def statements(text):
    """Split a source file into ``(lhs_token, rest_tokens_start, parser)`` records.

    Yields tuples ``(name_token, parser)`` where the parser is positioned after
    the ``=`` (or after the head word for ``dim``/``mode``).
    """
    tokens = tokenize(text)
    p = ExprParser(tokens)
    while True:
        while p.tok.kind == "sep":
            p.advance()
        if p.tok.kind == "eof":
            return
        head = p.tok
        if head.kind != "ident":
            raise DSLSyntaxError(f"unexpected {head.text!r}", head.line, head.column, ["statement name"])
        p.advance()
        yield head, p
        if p.tok.kind not in ("sep", "eof"):
            raise DSLSyntaxError(f"unexpected {p.tok.text!r}", p.tok.line, p.tok.column, ["';'", "newline"])
