"""Tiny expression language for matrix entries of structured dynamical systems.

Entries of the interconnection, dissipation and input matrices are written as
strings like ``"-c*abs(x2)"`` or ``"1/(0.1+x1^2)"``.  The grammar is closed
(no general function calls, no transcendentals):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | atom ('^' INT)?
    atom   := NUMBER | IDENT | 'abs' '(' expr ')' | '(' expr ')'

Identifiers of the form ``x<digits>`` refer to state components (1-based);
every other identifier is a named parameter.  Parsed expressions are
immutable and safe to evaluate concurrently.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class ExprSyntaxError(ValueError):
    """Malformed source text; carries the byte offset and expected tokens."""

    def __init__(self, offset, expected, found):
        self.offset = offset
        self.expected = tuple(expected)
        self.found = found
        super().__init__(
            "syntax error at offset %d: expected %s, found %r"
            % (offset, " or ".join(self.expected), found)
        )


class ExprBindError(ValueError):
    """A state or parameter reference does not resolve against the context."""


class ExprEvalError(ArithmeticError):
    """Evaluation failed (division by zero); carries the node offset."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__("%s (at offset %s)" % (message, offset))


@dataclass(frozen=True)
class Expr:
    """One AST node.  ``kind`` is one of const, state, param, neg, abs,
    add, sub, mul, div, pow.  ``offset`` is the source byte offset (or -1
    for programmatically built nodes)."""

    kind: str
    value: object = None  # float for const, int for state, str for param
    args: tuple = ()
    offset: int = -1

    # -- constructors for programmatic use (interconnection, tests) --------

    @staticmethod
    def const(v):
        v = float(v)
        if v < 0.0:
            return Expr("neg", args=(Expr("const", -v),))
        return Expr("const", v)

    @staticmethod
    def state(index):
        if index < 1:
            raise ExprBindError("state index must be >= 1, got %d" % index)
        return Expr("state", int(index))

    @staticmethod
    def param(name):
        return Expr("param", str(name))

    def __neg__(self):
        return Expr("neg", args=(self,))

    def __add__(self, other):
        return Expr("add", args=(self, other))

    def __sub__(self, other):
        return Expr("sub", args=(self, other))

    def __mul__(self, other):
        return Expr("mul", args=(self, other))

    def __truediv__(self, other):
        return Expr("div", args=(self, other))

    # -- queries ------------------------------------------------------------

    def state_indices(self):
        """Set of 1-based state indices referenced anywhere in the tree."""
        out = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if node.kind == "state":
                out.add(node.value)
            stack.extend(node.args)
        return out

    def param_names(self):
        """Set of parameter names referenced anywhere in the tree."""
        out = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if node.kind == "param":
                out.add(node.value)
            stack.extend(node.args)
        return out

    def is_zero(self):
        return self.kind == "const" and self.value == 0.0

    def is_one(self):
        return self.kind == "const" and self.value == 1.0


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_]\w*)"
    r"|(?P<op>\^|[-+*/()]))"
)


class _Parser:
    """Recursive-descent parser over a token stream with source offsets."""

    def __init__(self, source):
        self.source = source
        self.tokens = []  # (kind, text, offset)
        pos = 0
        while pos < len(source):
            m = _TOKEN_RE.match(source, pos)
            if m is None or m.end() == pos:
                stripped = source[pos:].lstrip()
                if not stripped:
                    break
                at = len(source) - len(stripped)
                raise ExprSyntaxError(at, ("number", "identifier", "operator"),
                                      source[at])
            if m.lastgroup is not None:
                self.tokens.append((m.lastgroup, m.group(m.lastgroup),
                                    m.start(m.lastgroup)))
            pos = m.end()
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", len(self.source))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, text):
        kind, value, offset = self.peek()
        if kind != "op" or value != text:
            raise ExprSyntaxError(offset, ("'%s'" % text,), value or "end of input")
        return self.take()

    def parse(self):
        e = self.expr()
        kind, value, offset = self.peek()
        if kind != "end":
            raise ExprSyntaxError(offset, ("operator", "end of input"), value)
        return e

    def expr(self):
        left = self.term()
        while True:
            kind, value, offset = self.peek()
            if kind == "op" and value in "+-":
                self.take()
                right = self.term()
                left = Expr("add" if value == "+" else "sub",
                            args=(left, right), offset=offset)
            else:
                return left

    def term(self):
        left = self.factor()
        while True:
            kind, value, offset = self.peek()
            if kind == "op" and value in "*/":
                self.take()
                right = self.factor()
                left = Expr("mul" if value == "*" else "div",
                            args=(left, right), offset=offset)
            else:
                return left

    def factor(self):
        kind, value, offset = self.peek()
        if kind == "op" and value == "-":
            self.take()
            return Expr("neg", args=(self.factor(),), offset=offset)
        base = self.atom()
        kind, value, offset = self.peek()
        if kind == "op" and value == "^":
            self.take()
            ekind, etext, eoffset = self.take()
            if ekind != "num" or not etext.isdigit():
                raise ExprSyntaxError(eoffset, ("integer exponent",),
                                      etext or "end of input")
            return Expr("pow", int(etext), (base,), offset)
        return base

    def atom(self):
        kind, value, offset = self.take()
        if kind == "num":
            return Expr("const", float(value), offset=offset)
        if kind == "ident":
            if value == "abs":
                self.expect_op("(")
                inner = self.expr()
                self.expect_op(")")
                return Expr("abs", args=(inner,), offset=offset)
            m = re.fullmatch(r"x(\d+)", value)
            if m:
                return Expr("state", int(m.group(1)), offset=offset)
            return Expr("param", value, offset=offset)
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        raise ExprSyntaxError(offset, ("number", "identifier", "'('"),
                              value or "end of input")


def parse_expr(source):
    """Parse ``source`` into an :class:`Expr` tree.

    Whitespace-insensitive; raises :class:`ExprSyntaxError` with the byte
    offset and the expected-token set on malformed input.  Unknown
    identifiers are accepted here and only rejected when the expression is
    bound to a concrete state dimension / parameter set.
    """
    return _Parser(source).parse()


def eval_expr(e, state, params):
    """Evaluate ``e`` at a state vector and a name->value parameter mapping.

    Integer powers use repeated multiplication; division by zero raises
    :class:`ExprEvalError` carrying the node offset; a reference to a state
    index outside the vector or to a missing parameter raises
    :class:`ExprBindError`.
    """
    kind = e.kind
    if kind == "const":
        return e.value
    if kind == "state":
        idx = e.value
        if not 1 <= idx <= len(state):
            raise ExprBindError(
                "state reference x%d outside dimension %d" % (idx, len(state)))
        return float(state[idx - 1])
    if kind == "param":
        try:
            return float(params[e.value])
        except KeyError:
            raise ExprBindError("unbound parameter %r" % e.value) from None
    if kind == "neg":
        return -eval_expr(e.args[0], state, params)
    if kind == "abs":
        return abs(eval_expr(e.args[0], state, params))
    if kind == "pow":
        base = eval_expr(e.args[0], state, params)
        out = 1.0
        for _ in range(e.value):
            out *= base
        return out
    a = eval_expr(e.args[0], state, params)
    b = eval_expr(e.args[1], state, params)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if kind == "div":
        if b == 0.0:
            raise ExprEvalError("division by zero", e.offset)
        return a / b
    raise AssertionError("unknown node kind %r" % kind)


def eval_expr_batch(e, states, params):
    """Evaluate ``e`` at every row of a (N, n) state matrix in one pass.

    Same semantics as :func:`eval_expr` (numpy broadcasting replaces the
    scalar recursion); returns an (N,) array.
    """
    import numpy as np

    n_rows, n_dim = states.shape
    kind = e.kind
    if kind == "const":
        return np.full(n_rows, e.value)
    if kind == "state":
        idx = e.value
        if not 1 <= idx <= n_dim:
            raise ExprBindError(
                "state reference x%d outside dimension %d" % (idx, n_dim))
        return states[:, idx - 1].astype(float)
    if kind == "param":
        try:
            return np.full(n_rows, float(params[e.value]))
        except KeyError:
            raise ExprBindError("unbound parameter %r" % e.value) from None
    if kind == "neg":
        return -eval_expr_batch(e.args[0], states, params)
    if kind == "abs":
        return np.abs(eval_expr_batch(e.args[0], states, params))
    if kind == "pow":
        base = eval_expr_batch(e.args[0], states, params)
        out = np.ones_like(base)
        for _ in range(e.value):
            out = out * base
        return out
    a = eval_expr_batch(e.args[0], states, params)
    b = eval_expr_batch(e.args[1], states, params)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if kind == "div":
        if np.any(b == 0.0):
            raise ExprEvalError("division by zero", e.offset)
        return a / b
    raise AssertionError("unknown node kind %r" % kind)


_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOMIC = ("const", "state", "param", "abs")


def _level(e):
    if e.kind in _ATOMIC:
        return 5
    return _PRECEDENCE[e.kind]


def to_source(e):
    """Render ``e`` as source text that reparses to an identical tree."""
    kind = e.kind
    if kind == "const":
        return repr(e.value)
    if kind == "state":
        return "x%d" % e.value
    if kind == "param":
        return e.value
    if kind == "abs":
        return "abs(%s)" % to_source(e.args[0])
    if kind == "neg":
        inner = e.args[0]
        # '-' binds looser than '^', so -x^2 renders without parentheses
        text = to_source(inner)
        if _level(inner) < _PRECEDENCE["neg"]:
            text = "(%s)" % text
        return "-" + text
    if kind == "pow":
        base = e.args[0]
        text = to_source(base)
        if base.kind not in _ATOMIC:
            text = "(%s)" % text
        return "%s^%d" % (text, e.value)
    a, b = e.args
    op = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[kind]
    mine = _PRECEDENCE[kind]
    left = to_source(a)
    if _level(a) < mine:
        left = "(%s)" % left
    right = to_source(b)
    # left-associative: right operand at equal precedence needs parentheses
    if _level(b) < mine or (_level(b) == mine and b.kind in _PRECEDENCE):
        right = "(%s)" % right
    return "%s%s%s" % (left, op, right)
