"""STL formulas, text syntax and operator trees."""

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
    horizon,
    is_nnf,
    predicates,
    state_dim,
    to_dsl,
    to_nnf,
)
from .parser import IntervalError, STLSyntaxError, UnknownSignalError, parse
from .tree import (
    UNTIL_SEMANTICS,
    HorizonError,
    Leaf,
    MaxNode,
    MinNode,
    OpTree,
    depth,
    is_alternating,
    leaves,
    max_fan_in,
    min_depth,
    paths,
    simplify,
    unfold,
)
