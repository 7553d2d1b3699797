"""Arithmetic expression parser and evaluators for problem coefficients.

Grammar (see also the problem-file documentation in README):

    expr    := term (('+'|'-') term)*
    term    := unary (('*'|'/') unary)*
    unary   := ('+'|'-') unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := number | identifier | identifier '(' expr ')' | '(' expr ')'
             | 'piece' '(' branch (';' branch)* ')'
    branch  := condition ':' expr | 'else' ':' expr
    condition := 'x' ('<'|'>=') expr

Numbers may be decimal or scientific.  Identifiers are either the free
variable ``x``, a named parameter, or one of the functions
sin cos exp ln sqrt abs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class ExpressionError(ValueError):
    """Syntax or semantic error in a coefficient expression."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


# ---------------------------------------------------------------------------
# tokenizer
# ---------------------------------------------------------------------------

_TOKEN_OPS = ("+", "-", "*", "/", "^", "(", ")", ":", ";", "<", ">=")


def _tokenize(text):
    tokens = []  # (kind, value, pos)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExpressionError(f"malformed number {text[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        if text.startswith(">=", i):
            tokens.append(("op", ">=", i))
            i += 2
            continue
        if c in "+-*/^():;<":
            tokens.append(("op", c, i))
            i += 1
            continue
        raise ExpressionError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens, params):
        self.tokens = tokens
        self.pos = 0
        self.params = params

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.next()
        if kind != "op" or val != value:
            raise ExpressionError(f"expected {value!r}, found {val!r}", pos)

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing input {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in ("+", "-"):
                self.next()
                rhs = self.term()
                node = ("add" if val == "+" else "sub", node, rhs)
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in ("*", "/"):
                self.next()
                rhs = self.unary()
                node = ("mul" if val == "*" else "div", node, rhs)
            else:
                return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("+", "-"):
            self.next()
            node = self.unary()
            return node if val == "+" else ("neg", node)
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            exponent = self.unary()  # right associative, unary minus allowed
            return ("pow", base, exponent)
        return base

    def atom(self):
        kind, val, pos = self.next()
        if kind == "num":
            return ("num", val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val == "piece":
                return self.piecewise(pos)
            nxt_kind, nxt_val, _ = self.peek()
            if nxt_kind == "op" and nxt_val == "(":
                if val not in _FUNCTIONS:
                    raise ExpressionError(f"unknown function {val!r}", pos)
                self.next()
                arg = self.expr()
                self.expect(")")
                return ("call", val, arg)
            if val == "x":
                return ("x",)
            if val in self.params:
                return ("param", val)
            raise ExpressionError(f"unknown parameter {val!r}", pos)
        raise ExpressionError(f"unexpected token {val!r}", pos)

    def piecewise(self, pos):
        self.expect("(")
        branches = []  # (condition | None, expr)
        saw_else = False
        while True:
            kind, val, bpos = self.peek()
            if kind == "name" and val == "else":
                self.next()
                self.expect(":")
                branches.append((None, self.expr()))
                saw_else = True
            else:
                cond = self.condition()
                self.expect(":")
                branches.append((cond, self.expr()))
            kind, val, _ = self.peek()
            if kind == "op" and val == ";":
                self.next()
                continue
            self.expect(")")
            break
        if not saw_else:
            raise ExpressionError("piece(...) requires an else branch", pos)
        return ("piece", branches)

    def condition(self):
        kind, val, pos = self.next()
        if kind != "name" or val != "x":
            raise ExpressionError("condition must start with x", pos)
        kind, op, pos = self.next()
        if kind != "op" or op not in ("<", ">="):
            raise ExpressionError("condition operator must be < or >=", pos)
        bound = self.expr()
        return (op, bound)


def _eval_node(node, x, params):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "x":
        return x
    if tag == "param":
        return params[node[1]]
    if tag == "neg":
        return -_eval_node(node[1], x, params)
    if tag == "add":
        return _eval_node(node[1], x, params) + _eval_node(node[2], x, params)
    if tag == "sub":
        return _eval_node(node[1], x, params) - _eval_node(node[2], x, params)
    if tag == "mul":
        return _eval_node(node[1], x, params) * _eval_node(node[2], x, params)
    if tag == "div":
        return _eval_node(node[1], x, params) / _eval_node(node[2], x, params)
    if tag == "pow":
        base = _eval_node(node[1], x, params)
        expo = _eval_node(node[2], x, params)
        return np.power(base, expo)
    if tag == "call":
        return _FUNCTIONS[node[1]](_eval_node(node[2], x, params))
    if tag == "piece":
        x_arr = np.asarray(x, dtype=float)
        out = np.empty_like(x_arr)
        done = np.zeros(x_arr.shape, dtype=bool)
        for cond, sub in node[1]:
            if cond is None:
                mask = ~done
            else:
                op, bound = cond
                bval = _eval_node(bound, x_arr, params)
                mask = (x_arr < bval) if op == "<" else (x_arr >= bval)
                mask &= ~done
            if np.any(mask):
                val = _eval_node(sub, x_arr[mask], params)
                out[mask] = val
            done |= mask
        if x_arr.ndim == 0:
            return float(out)
        return out
    raise AssertionError(f"unhandled node {tag}")


# ---------------------------------------------------------------------------
# public coefficient type
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientFn:
    """A scalar coefficient of the problem, evaluable on interior points.

    Either backed by a parsed expression (``text`` is set) or by a plain
    python callable (used for transformed Hamiltonians).  ``hint``, when
    present, is the pair (power, log power) describing the behaviour
    c * (x-a)^power * ln(x-a)^logpower as x approaches the left endpoint.
    """

    fn: Callable
    text: Optional[str] = None
    params: Mapping[str, float] = field(default_factory=dict)
    hint: Optional[tuple] = None

    def __call__(self, x):
        return self.fn(x)

    def with_hint(self, power, logpower=0.0):
        return CoefficientFn(self.fn, self.text, self.params, (float(power), float(logpower)))

    def check_hint(self, a, x0, rtol=0.25):
        """Sample expr(x)/(x-a)^power/ln^logpower on a geometric grid and
        verify it settles to a finite nonzero constant."""
        if self.hint is None:
            return True
        power, logpow = self.hint
        xs = a + (x0 - a) * 2.0 ** -np.arange(12.0, 30.0)
        t = xs - a
        vals = np.asarray(self(xs), dtype=float)
        scale = t**power
        if logpow:
            scale = scale * np.abs(np.log(t)) ** logpow
        ratio = vals / scale
        if not np.all(np.isfinite(ratio)) or np.any(ratio == 0.0):
            return False
        # log corrections die off slowly; compare far-apart samples
        return abs(ratio[-1] / ratio[0] - 1.0) < rtol or np.std(
            np.log(np.abs(ratio[len(ratio) // 2 :]))
        ) < rtol


def parse_coefficient(text, params=None, hint=None):
    """Parse an expression string into a :class:`CoefficientFn`.

    Unknown identifiers are rejected at parse time; domain errors (log of a
    nonpositive number and the like) surface lazily at evaluation.
    """
    params = dict(params or {})
    tokens = _tokenize(text)
    ast = _Parser(tokens, params).parse()

    def fn(x, _ast=ast, _params=params):
        return _eval_node(_ast, x, _params)

    c = CoefficientFn(fn, text=text, params=params)
    if hint is not None:
        c = c.with_hint(*hint)
    return c


def coefficient_from_callable(fn, hint=None):
    c = CoefficientFn(fn)
    if hint is not None:
        c = c.with_hint(*hint)
    return c


def constant_coefficient(value):
    value = float(value)
    return CoefficientFn(lambda x: np.full_like(np.asarray(x, dtype=float), value)
                         if np.ndim(x) else value,
                         text=repr(value), hint=(0.0, 0.0))
