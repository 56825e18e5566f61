"""Recursive-descent parser for the STL text syntax.

Grammar (``!`` binds tightest, then the temporal prefixes, then ``U``, ``&``
and finally ``|``)::

    formula  := or
    or       := and ("|" and)*
    and      := until ("&" until)*
    until    := unary ["U" interval until]
    unary    := "!" unary | ("G" | "F") interval unary | atom
    atom     := "(" formula ")" | "in" region | linexpr ("<=" | ">=") linexpr
    interval := "[" int "," int "]"
    region   := NAME | "BOX" "(" num "," num "," num "," num ")"
    linexpr  := ["+"|"-"] term (("+"|"-") term)*
    term     := num ["*" signal] | signal ["*" num]

Signals are named ``x0`` .. ``x{n-1}``. ``!in R`` is ``!(in R)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional

from .formula import (
    Always,
    And,
    Box,
    Eventually,
    Formula,
    FormulaError,
    LinearPredicate,
    Not,
    Or,
    Pred,
    Until,
)


class STLSyntaxError(FormulaError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class IntervalError(STLSyntaxError):
    pass


class UnknownSignalError(STLSyntaxError):
    pass


@dataclass
class _Token:
    kind: str  # num, name, op, end
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+|\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|[!&|()\[\],+\-*])
    """,
    re.VERBOSE,
)

_SIGNAL_RE = re.compile(r"x(\d+)$")


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise STLSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(_Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(_Token("end", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text, n, regions):
        self.tokens = _tokenize(text)
        self.i = 0
        self.n = n
        self.regions = regions

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def peek(self, k=1) -> _Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, msg, tok=None, cls=STLSyntaxError):
        tok = tok or self.tok
        return cls(msg, tok.line, tok.col)

    def accept(self, text) -> Optional[_Token]:
        if self.tok.kind in ("op", "name") and self.tok.text == text:
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text) -> _Token:
        tok = self.accept(text)
        if tok is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return tok

    def parse(self) -> Formula:
        f = self.formula()
        if self.tok.kind != "end":
            raise self.error(f"unexpected {self.tok.text!r}")
        return f

    def formula(self):
        children = [self.conjunction()]
        while self.accept("|"):
            children.append(self.conjunction())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def conjunction(self):
        children = [self.until()]
        while self.accept("&"):
            children.append(self.until())
        return children[0] if len(children) == 1 else And(tuple(children))

    def until(self):
        left = self.unary()
        if self.tok.kind == "name" and self.tok.text == "U" and self.peek().text == "[":
            self.i += 1
            t1, t2 = self.interval()
            right = self.until()
            return Until(t1, t2, left, right)
        return left

    def unary(self):
        if self.accept("!"):
            return Not(self.unary())
        tok = self.tok
        if tok.kind == "name" and tok.text in ("G", "F") and self.peek().text == "[":
            self.i += 1
            t1, t2 = self.interval()
            child = self.unary()
            return Always(t1, t2, child) if tok.text == "G" else Eventually(t1, t2, child)
        return self.atom()

    def interval(self):
        start = self.expect("[")
        t1 = self.integer()
        self.expect(",")
        t2 = self.integer()
        self.expect("]")
        if t1 >= t2:
            raise self.error(f"interval [{t1},{t2}] needs t1 < t2", start, IntervalError)
        return t1, t2

    def integer(self) -> int:
        tok = self.tok
        if tok.kind != "num" or not tok.text.isdigit():
            raise self.error(f"expected a non-negative integer, found {tok.text!r}")
        self.i += 1
        return int(tok.text)

    def atom(self):
        if self.accept("("):
            f = self.formula()
            self.expect(")")
            return f
        if self.accept("in"):
            return self.region().inside(self.n)
        return self.comparison()

    def region(self) -> Box:
        tok = self.tok
        if tok.kind != "name":
            raise self.error("expected a region name or BOX(...)")
        self.i += 1
        if tok.text == "BOX" and self.tok.text == "(":
            self.expect("(")
            vals = [self.number()]
            for _ in range(3):
                self.expect(",")
                vals.append(self.number())
            self.expect(")")
            try:
                return Box(*vals)
            except FormulaError as exc:
                raise self.error(str(exc), tok) from None
        if tok.text not in self.regions:
            raise self.error(f"unknown region {tok.text!r}", tok, UnknownSignalError)
        return self.regions[tok.text]

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        tok = self.tok
        if tok.kind != "num":
            raise self.error(f"expected a number, found {tok.text or 'end of input'!r}")
        self.i += 1
        return sign * float(tok.text)

    def comparison(self):
        start = self.tok
        lhs_a, lhs_c = self.linexpr()
        if self.accept("<="):
            sense = 1.0
        elif self.accept(">="):
            sense = -1.0
        else:
            raise self.error("expected '<=' or '>='")
        rhs_a, rhs_c = self.linexpr()
        # lhs <= rhs  <=>  (lhs_a - rhs_a) x <= rhs_c - lhs_c
        a = [sense * (p - q) for p, q in zip(lhs_a, rhs_a)]
        b = sense * (rhs_c - lhs_c)
        try:
            return Pred(LinearPredicate(tuple(a), b))
        except FormulaError as exc:
            raise self.error(str(exc), start) from None

    def linexpr(self):
        a = [0.0] * self.n
        const = 0.0
        seen = False
        while True:
            sign = 1.0
            if self.accept("-"):
                sign = -1.0
            elif seen:
                if not self.accept("+"):
                    break
                if self.accept("-"):
                    sign = -1.0
            elif self.accept("+"):
                pass
            coef, idx = self.term()
            if idx is None:
                const += sign * coef
            else:
                a[idx] += sign * coef
            seen = True
        return a, const

    def term(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            coef = float(tok.text)
            if self.accept("*"):
                return coef, self.signal()
            return coef, None
        if tok.kind == "name":
            idx = self.signal()
            if self.accept("*"):
                return self.number(), idx
            return 1.0, idx
        raise self.error(f"expected a term, found {tok.text or 'end of input'!r}")

    def signal(self) -> int:
        tok = self.tok
        if tok.kind != "name":
            raise self.error(f"expected a signal name, found {tok.text!r}")
        m = _SIGNAL_RE.match(tok.text)
        if m is None or int(m.group(1)) >= self.n:
            raise self.error(
                f"unknown signal {tok.text!r} (signals are x0..x{self.n - 1})",
                tok,
                UnknownSignalError,
            )
        self.i += 1
        return int(m.group(1))


def parse(text: str, n: int, regions: Optional[Mapping[str, Box]] = None) -> Formula:
    """Parse ``text`` into a formula over an ``n``-dimensional state.

    ``regions`` maps names usable after ``in`` to boxes. The result keeps the
    source structure, including any ``Not`` nodes; see :func:`to_nnf`.
    """
    if n < 1:
        raise ValueError("state dimension must be positive")
    regions: Dict[str, Box] = dict(regions or {})
    return _Parser(text, n, regions).parse()
