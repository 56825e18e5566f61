"""Time-unfolded max/min operator trees.

Unfolding follows the reversed robustness semantics: conjunction and always
become ``MaxNode``, disjunction and eventually become ``MinNode``, predicates
become ``Leaf(pred, t)`` with value ``a @ x_t - b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Tuple, Union

from .formula import (
    Always,
    And,
    Eventually,
    Formula,
    FormulaError,
    LinearPredicate,
    Not,
    Or,
    Pred,
    Until,
    horizon,
)

UNTIL_SEMANTICS = ("paper", "standard")


@dataclass(frozen=True)
class Leaf:
    pred: LinearPredicate
    t: int


@dataclass(frozen=True)
class MaxNode:
    children: Tuple["OpTree", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("MaxNode needs children")


@dataclass(frozen=True)
class MinNode:
    children: Tuple["OpTree", ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("MinNode needs children")


OpTree = Union[Leaf, MaxNode, MinNode]


class HorizonError(FormulaError):
    pass


def simplify(t: OpTree) -> OpTree:
    """Flatten same-polarity nesting and collapse single-child nodes."""
    if isinstance(t, Leaf):
        return t
    kind = type(t)
    flat = []
    for c in t.children:
        c = simplify(c)
        if type(c) is kind:
            flat.extend(c.children)
        else:
            flat.append(c)
    if len(flat) == 1:
        return flat[0]
    return kind(tuple(flat))


def unfold(f: Formula, t: int = 0, T: int = None, until: str = "paper") -> OpTree:
    """Unfold an NNF formula evaluated at time ``t`` into a simplified tree.

    ``T`` is the last available timestep; when given, a leaf beyond it raises
    :class:`HorizonError`. ``until`` selects the Until pairing: ``"paper"``
    evaluates the left operand at t' against the right operand over
    [t+t1, t'], ``"standard"`` uses the conventional robustness (right at t',
    left over [t, t']).
    """
    if until not in UNTIL_SEMANTICS:
        raise ValueError(f"until semantics must be one of {UNTIL_SEMANTICS}")
    if T is not None and t + horizon(f) > T:
        raise HorizonError(f"formula at t={t} needs {t + horizon(f)} steps, trajectory has T={T}")
    return simplify(_unfold(f, t, until))


def _unfold(f, t, until):
    if isinstance(f, Pred):
        return Leaf(f.pred, t)
    if isinstance(f, Not):
        raise FormulaError("unfold expects a formula in negation normal form")
    if isinstance(f, And):
        return MaxNode(tuple(_unfold(c, t, until) for c in f.children))
    if isinstance(f, Or):
        return MinNode(tuple(_unfold(c, t, until) for c in f.children))
    if isinstance(f, Always):
        return MaxNode(tuple(_unfold(f.child, s, until) for s in range(t + f.t1, t + f.t2 + 1)))
    if isinstance(f, Eventually):
        return MinNode(tuple(_unfold(f.child, s, until) for s in range(t + f.t1, t + f.t2 + 1)))
    if isinstance(f, Until):
        outer = []
        for s in range(t + f.t1, t + f.t2 + 1):
            if until == "paper":
                inner = MinNode(tuple(_unfold(f.right, r, until) for r in range(t + f.t1, s + 1)))
                outer.append(MinNode((_unfold(f.left, s, until), inner)))
            else:
                inner = MaxNode(tuple(_unfold(f.left, r, until) for r in range(t, s + 1)))
                outer.append(MaxNode((_unfold(f.right, s, until), inner)))
        if until == "paper":
            return MaxNode(tuple(outer))
        return MinNode(tuple(outer))
    raise TypeError(f"not a formula: {f!r}")


def leaves(t: OpTree) -> Iterator[Leaf]:
    if isinstance(t, Leaf):
        yield t
    else:
        for c in t.children:
            yield from leaves(c)


def depth(t: OpTree) -> int:
    """Number of levels, counting the leaves."""
    if isinstance(t, Leaf):
        return 1
    return 1 + max(depth(c) for c in t.children)


def is_alternating(t: OpTree) -> bool:
    if isinstance(t, Leaf):
        return True
    return all(
        type(c) is not type(t) and (isinstance(c, Leaf) or len(c.children) > 1) and is_alternating(c)
        for c in t.children
    )


def paths(t: OpTree, prefix=()) -> Iterator[Tuple[str, ...]]:
    """Yield the node-kind sequence from the root to each leaf."""
    name = {Leaf: "predicate", MaxNode: "and", MinNode: "or"}[type(t)]
    here = prefix + (name,)
    if isinstance(t, Leaf):
        yield here
    else:
        for c in t.children:
            yield from paths(c, here)


def max_fan_in(t: OpTree) -> int:
    """Largest child count over all MinNodes (1 if there are none)."""
    if isinstance(t, Leaf):
        return 1
    own = len(t.children) if isinstance(t, MinNode) else 1
    return max([own] + [max_fan_in(c) for c in t.children])


def min_depth(t: OpTree) -> int:
    """Largest number of MinNodes on any root-to-leaf path."""
    if isinstance(t, Leaf):
        return 0
    return int(isinstance(t, MinNode)) + max(min_depth(c) for c in t.children)
