"""STL formula syntax tree, negation normal form and horizon."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np


class FormulaError(ValueError):
    """Raised for structurally invalid formulas."""


@dataclass(frozen=True)
class LinearPredicate:
    """Affine predicate ``a @ x_t - b <= 0``, stored as tuples so it is hashable."""

    a: Tuple[float, ...]
    b: float

    def __post_init__(self):
        a = tuple(float(v) + 0.0 for v in self.a)  # + 0.0 drops negative zeros
        if len(a) == 0:
            raise FormulaError("predicate needs at least one coefficient")
        if all(v == 0.0 for v in a):
            raise FormulaError("degenerate predicate: all coefficients are zero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b) + 0.0)

    @property
    def n(self) -> int:
        return len(self.a)

    def value(self, x_t) -> float:
        """Return ``a @ x_t - b``."""
        return float(np.dot(self.a, x_t) - self.b)

    def negated(self) -> "LinearPredicate":
        # non-strict flip: not(g <= 0) is encoded as -g <= 0
        return LinearPredicate(tuple(-v for v in self.a), -self.b)


@dataclass(frozen=True)
class Pred:
    pred: LinearPredicate


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: Tuple["Formula", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise FormulaError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: Tuple["Formula", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise FormulaError("Or needs at least two children")


def _check_interval(t1, t2):
    if int(t1) != t1 or int(t2) != t2:
        raise FormulaError(f"interval bounds must be integers, got [{t1},{t2}]")
    if t1 < 0 or t2 < t1:
        raise FormulaError(f"invalid interval [{t1},{t2}]")


@dataclass(frozen=True)
class Always:
    t1: int
    t2: int
    child: "Formula"

    def __post_init__(self):
        _check_interval(self.t1, self.t2)


@dataclass(frozen=True)
class Eventually:
    t1: int
    t2: int
    child: "Formula"

    def __post_init__(self):
        _check_interval(self.t1, self.t2)


@dataclass(frozen=True)
class Until:
    t1: int
    t2: int
    left: "Formula"
    right: "Formula"

    def __post_init__(self):
        _check_interval(self.t1, self.t2)


Formula = Union[Pred, Not, And, Or, Always, Eventually, Until]


def to_nnf(f: Formula) -> Formula:
    """Push negations down to the predicates.

    Negated predicates are flipped with the non-strict convention; And/Or use
    De Morgan and Always/Eventually are swapped. A negated Until is rejected.
    """
    if isinstance(f, Not):
        return _negate(f.child)
    if isinstance(f, Pred):
        return f
    if isinstance(f, And):
        return And(tuple(to_nnf(c) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(to_nnf(c) for c in f.children))
    if isinstance(f, Always):
        return Always(f.t1, f.t2, to_nnf(f.child))
    if isinstance(f, Eventually):
        return Eventually(f.t1, f.t2, to_nnf(f.child))
    if isinstance(f, Until):
        return Until(f.t1, f.t2, to_nnf(f.left), to_nnf(f.right))
    raise TypeError(f"not a formula: {f!r}")


def _negate(f: Formula) -> Formula:
    if isinstance(f, Not):
        return to_nnf(f.child)
    if isinstance(f, Pred):
        return Pred(f.pred.negated())
    if isinstance(f, And):
        return Or(tuple(_negate(c) for c in f.children))
    if isinstance(f, Or):
        return And(tuple(_negate(c) for c in f.children))
    if isinstance(f, Always):
        return Eventually(f.t1, f.t2, _negate(f.child))
    if isinstance(f, Eventually):
        return Always(f.t1, f.t2, _negate(f.child))
    if isinstance(f, Until):
        raise FormulaError("negated Until is not supported")
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f: Formula) -> bool:
    if isinstance(f, Not):
        return False
    if isinstance(f, Pred):
        return True
    if isinstance(f, (And, Or)):
        return all(is_nnf(c) for c in f.children)
    if isinstance(f, (Always, Eventually)):
        return is_nnf(f.child)
    return is_nnf(f.left) and is_nnf(f.right)


def horizon(f: Formula) -> int:
    """Number of steps after the evaluation time that ``f`` looks ahead."""
    if isinstance(f, Pred):
        return 0
    if isinstance(f, Not):
        return horizon(f.child)
    if isinstance(f, (And, Or)):
        return max(horizon(c) for c in f.children)
    if isinstance(f, (Always, Eventually)):
        return f.t2 + horizon(f.child)
    if isinstance(f, Until):
        return f.t2 + max(horizon(f.left), horizon(f.right))
    raise TypeError(f"not a formula: {f!r}")


def state_dim(f: Formula) -> int:
    """Length of the predicate coefficient vectors (they must all agree)."""
    dims = {p.n for p in predicates(f)}
    if len(dims) != 1:
        raise FormulaError(f"inconsistent predicate dimensions {sorted(dims)}")
    return dims.pop()


def predicates(f: Formula):
    if isinstance(f, Pred):
        yield f.pred
    elif isinstance(f, Not):
        yield from predicates(f.child)
    elif isinstance(f, (And, Or)):
        for c in f.children:
            yield from predicates(c)
    elif isinstance(f, (Always, Eventually)):
        yield from predicates(f.child)
    else:
        yield from predicates(f.left)
        yield from predicates(f.right)


def _num(v: float) -> str:
    return repr(float(v))


def _pred_to_dsl(p: LinearPredicate) -> str:
    terms = [f"{_num(c)}*x{i}" for i, c in enumerate(p.a) if c != 0.0]
    return " + ".join(terms) + f" <= {_num(p.b)}"


def to_dsl(f: Formula) -> str:
    """Render ``f`` in the text syntax accepted by :func:`stlccp.stl.parse`.

    Every compound subformula is parenthesised, so the output does not depend
    on operator precedence and re-parses to an equal tree.
    """
    if isinstance(f, Pred):
        return "(" + _pred_to_dsl(f.pred) + ")"
    if isinstance(f, Not):
        return "!" + to_dsl(f.child)
    if isinstance(f, And):
        return "(" + " & ".join(to_dsl(c) for c in f.children) + ")"
    if isinstance(f, Or):
        return "(" + " | ".join(to_dsl(c) for c in f.children) + ")"
    if isinstance(f, Always):
        return f"(G[{f.t1},{f.t2}] {to_dsl(f.child)})"
    if isinstance(f, Eventually):
        return f"(F[{f.t1},{f.t2}] {to_dsl(f.child)})"
    if isinstance(f, Until):
        return f"({to_dsl(f.left)} U[{f.t1},{f.t2}] {to_dsl(f.right)})"
    raise TypeError(f"not a formula: {f!r}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle over the first two state coordinates."""

    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float

    def __post_init__(self):
        if not (self.x_lo <= self.x_hi and self.y_lo <= self.y_hi):
            raise FormulaError(f"empty box {self}")

    def halfspaces(self, n: int):
        if n < 2:
            raise FormulaError("region membership needs at least two state coordinates")

        def unit(i, sign):
            a = [0.0] * n
            a[i] = sign
            return tuple(a)

        return (
            LinearPredicate(unit(0, -1.0), -self.x_lo),
            LinearPredicate(unit(0, 1.0), self.x_hi),
            LinearPredicate(unit(1, -1.0), -self.y_lo),
            LinearPredicate(unit(1, 1.0), self.y_hi),
        )

    def inside(self, n: int) -> And:
        return And(tuple(Pred(p) for p in self.halfspaces(n)))

    def outside(self, n: int) -> Or:
        return Or(tuple(Pred(p.negated()) for p in self.halfspaces(n)))
