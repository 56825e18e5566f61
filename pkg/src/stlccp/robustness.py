"""Exact and smoothed reversed robustness over operator trees.

Reversed robustness is the negated conventional robustness, so a trajectory
satisfies the specification when the reversed value is ``<= 0``. Smoothing
replaces every min by the log-sum-exp soft minimum and keeps max exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stl.tree import Leaf, MaxNode, MinNode, OpTree, max_fan_in, min_depth
from .system import as_states

DEFAULT_K = 10.0


@dataclass(frozen=True)
class SmoothingConfig:
    k: float = DEFAULT_K

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"smoothing parameter must be positive, got {self.k}")


def _k(cfg) -> float:
    if isinstance(cfg, SmoothingConfig):
        return cfg.k
    return SmoothingConfig(float(cfg)).k


def smooth_min(values, k: float) -> float:
    """``-(1/k) * log(sum(exp(-k * values)))``, shifted by the minimum for stability."""
    a = np.asarray(values, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError("smooth_min of an empty list")
    lo = a.min()
    return float(lo - np.log(np.sum(np.exp(-k * (a - lo)))) / k)


def smooth_min_weights(values, k: float) -> np.ndarray:
    """Gradient of :func:`smooth_min`: the softmax of ``-k * values``."""
    a = np.asarray(values, dtype=float).reshape(-1)
    e = np.exp(-k * (a - a.min()))
    return e / e.sum()


def _check_leaf(leaf: Leaf, x: np.ndarray):
    if not 0 <= leaf.t < x.shape[0]:
        raise IndexError(f"leaf timestep {leaf.t} outside trajectory of length {x.shape[0]}")


def eval_reversed(tree: OpTree, x) -> float:
    """Exact reversed robustness of trajectory ``x`` (states, shape (T+1, n))."""
    return _eval(tree, as_states(x), None)


def eval_original(tree: OpTree, x) -> float:
    """Conventional robustness, i.e. ``-eval_reversed``. Positive means satisfied."""
    return -eval_reversed(tree, x)


def eval_smoothed(tree: OpTree, x, cfg=DEFAULT_K) -> float:
    """Reversed robustness with every MinNode replaced by :func:`smooth_min`."""
    return _eval(tree, as_states(x), _k(cfg))


def _eval(node, x, k):
    if isinstance(node, Leaf):
        _check_leaf(node, x)
        return float(np.dot(node.pred.a, x[node.t]) - node.pred.b)
    vals = [_eval(c, x, k) for c in node.children]
    if isinstance(node, MaxNode):
        return max(vals)
    if k is None:
        return min(vals)
    return smooth_min(vals, k)


def grad_smoothed(tree: OpTree, x, cfg=DEFAULT_K) -> np.ndarray:
    """Gradient of :func:`eval_smoothed` with respect to the stacked states.

    Returned as a flat vector of length ``n * (T+1)`` ordered ``x_0, x_1, ...``.
    A MaxNode passes the gradient to its first maximising child.
    """
    k = _k(cfg)
    x = as_states(x)
    grad = np.zeros_like(x)
    values = {}
    _eval_cached(tree, x, k, values)
    _backprop(tree, 1.0, k, values, grad)
    return grad.reshape(-1)


def _eval_cached(node, x, k, values):
    if isinstance(node, Leaf):
        _check_leaf(node, x)
        v = float(np.dot(node.pred.a, x[node.t]) - node.pred.b)
    else:
        vals = [_eval_cached(c, x, k, values) for c in node.children]
        v = max(vals) if isinstance(node, MaxNode) else smooth_min(vals, k)
    values[id(node)] = v
    return v


def _backprop(node, weight, k, values, grad):
    if isinstance(node, Leaf):
        grad[node.t] += weight * np.asarray(node.pred.a)
        return
    vals = [values[id(c)] for c in node.children]
    if isinstance(node, MaxNode):
        _backprop(node.children[int(np.argmax(vals))], weight, k, values, grad)
        return
    for c, w in zip(node.children, smooth_min_weights(vals, k)):
        _backprop(c, weight * w, k, values, grad)


def smoothing_gap_bound(tree: OpTree, k: float) -> float:
    """Upper bound on ``eval_reversed - eval_smoothed``: D * ln(r_max) / k.

    D is the largest number of MinNodes on a root-to-leaf path and r_max the
    largest MinNode fan-in.
    """
    return min_depth(tree) * np.log(max_fan_in(tree)) / k
