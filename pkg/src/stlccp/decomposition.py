"""Epigraph decomposition of the smoothed robustness into a DC program.

The decision vector is ``z = (x_0..x_T, u_0..u_{T-1}, s_xi, s_new...)``.
Starting from ``s_xi <= 0`` the operator tree is pushed into constraints:

* a leaf bounded by ``s`` gives the affine row ``a @ x_t - b <= s``;
* a MaxNode bounded by ``s`` bounds each child by the same ``s``;
* a MinNode bounded by ``s`` gives one concave row
  ``smooth_min(terms) <= s``, where leaf children stay inline and every other
  child is replaced by a fresh variable that bounds that child in turn.

Dynamics and the initial state are the only equality rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .robustness import _eval_cached, eval_smoothed
from .stl.tree import Leaf, MaxNode, OpTree, is_alternating, leaves
from .system import LinearSystem, Trajectory, as_states

EQ_TAGS = ("initial", "dynamics")
INEQ_TAGS = ("x_bound", "u_bound", "s_xi", "max")


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class VarLayout:
    """Index map of the stacked decision vector.

    ``nodes[0]`` is the tree root bounded by ``s_xi``; ``nodes[j]`` for j >= 1
    is the subtree bounded by the j-th fresh variable.
    """

    n: int
    m: int
    T: int
    n_new: int
    nodes: Tuple[OpTree, ...] = ()

    @property
    def size(self) -> int:
        return self.n * (self.T + 1) + self.m * self.T + 1 + self.n_new

    @property
    def x(self) -> slice:
        return slice(0, self.n * (self.T + 1))

    @property
    def u(self) -> slice:
        start = self.n * (self.T + 1)
        return slice(start, start + self.m * self.T)

    @property
    def s_xi(self) -> int:
        return self.n * (self.T + 1) + self.m * self.T

    @property
    def s_new(self) -> slice:
        return slice(self.s_xi + 1, self.size)

    @property
    def epigraph(self) -> slice:
        return slice(self.s_xi, self.size)

    def x_index(self, t: int, i: int = 0) -> int:
        return t * self.n + i

    def u_index(self, t: int, j: int = 0) -> int:
        return self.n * (self.T + 1) + t * self.m + j

    def states(self, z) -> np.ndarray:
        return np.asarray(z)[self.x].reshape(self.T + 1, self.n)

    def inputs(self, z) -> np.ndarray:
        return np.asarray(z)[self.u].reshape(self.T, self.m)


@dataclass(frozen=True)
class PredicateTerm:
    """``a @ x_t - b`` inside a smooth-min row."""

    a: Tuple[float, ...]
    b: float
    t: int


@dataclass(frozen=True)
class EpigraphTerm:
    """A fresh epigraph variable inside a smooth-min row (``index`` into z)."""

    index: int


AffineTerm = Union[PredicateTerm, EpigraphTerm]


@dataclass(frozen=True)
class ConcaveRow:
    """``smooth_min(terms) <= z[rhs]``."""

    terms: Tuple[AffineTerm, ...]
    rhs: int


@dataclass(frozen=True, eq=False)
class DcProgram:
    layout: VarLayout
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_tags: Tuple[str, ...]
    A_in: sp.csr_matrix
    b_in: np.ndarray
    in_tags: Tuple[str, ...]
    concave: Tuple[ConcaveRow, ...]
    k: float
    # every concave term stacked as C z + d, grouped by row
    C: sp.csr_matrix = None
    d: np.ndarray = None
    group_start: np.ndarray = None
    group_of: np.ndarray = None

    @property
    def n_concave(self) -> int:
        return len(self.concave)

    def concave_rhs(self) -> np.ndarray:
        return np.array([row.rhs for row in self.concave], dtype=int)

    def term_values(self, z) -> np.ndarray:
        return self.C @ np.asarray(z, dtype=float) + self.d

    def concave_values(self, z):
        """Smooth-min value of every concave row and the per-term softmax weights."""
        return grouped_smooth_min(self.term_values(z), self.group_start, self.group_of, self.k)

    def rows_tagged(self, tag: str) -> np.ndarray:
        tags = self.eq_tags if tag in EQ_TAGS else self.in_tags
        return np.flatnonzero(np.asarray(tags) == tag)


def grouped_smooth_min(values, group_start, group_of, k):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return np.zeros(0), np.zeros(0)
    lo = np.minimum.reduceat(values, group_start)
    e = np.exp(-k * (values - lo[group_of]))
    total = np.add.reduceat(e, group_start)
    return lo - np.log(total) / k, e / total[group_of]


class _RowBuilder:
    def __init__(self):
        self.rows, self.cols, self.vals, self.rhs, self.tags = [], [], [], [], []

    def add(self, cols, vals, rhs, tag):
        r = len(self.rhs)
        self.rows.extend([r] * len(cols))
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.rhs.append(rhs)
        self.tags.append(tag)

    def matrix(self, ncols):
        M = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), ncols))
        M.sum_duplicates()
        return M, np.array(self.rhs, dtype=float), tuple(self.tags)


def decompose(tree: OpTree, sys: LinearSystem, x0, T: int, k: float = 10.0) -> DcProgram:
    """Build the DC program whose feasible set bounds the smoothed robustness of ``tree``."""
    if not is_alternating(tree):
        raise DecompositionError("tree must be simplified (use stl.simplify) before decomposition")
    n, m = sys.n, sys.m
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise DecompositionError(f"x0 must have length {n}")
    for leaf in leaves(tree):
        if not 0 <= leaf.t <= T:
            raise DecompositionError(f"leaf timestep {leaf.t} outside [0, {T}]")
        if len(leaf.pred.a) != n:
            raise DecompositionError(f"predicate dimension {len(leaf.pred.a)} does not match state dimension {n}")

    base = n * (T + 1) + m * T
    s_xi = base
    nodes: List[OpTree] = [tree]
    ineq = _RowBuilder()
    concave: List[ConcaveRow] = []

    def xcols(t):
        return list(range(t * n, (t + 1) * n))

    def into(node, s):
        if isinstance(node, Leaf):
            nz = [(t_col, a) for t_col, a in zip(xcols(node.t), node.pred.a) if a != 0.0]
            ineq.add([c for c, _ in nz] + [s], [a for _, a in nz] + [-1.0], node.pred.b, "max")
        elif isinstance(node, MaxNode):
            for c in node.children:
                into(c, s)
        else:
            terms = []
            for c in node.children:
                if isinstance(c, Leaf):
                    terms.append(PredicateTerm(c.pred.a, c.pred.b, c.t))
                else:
                    idx = base + len(nodes)
                    nodes.append(c)
                    terms.append(EpigraphTerm(idx))
                    into(c, idx)
            concave.append(ConcaveRow(tuple(terms), s))

    ineq.add([s_xi], [1.0], 0.0, "s_xi")
    into(tree, s_xi)
    layout = VarLayout(n, m, T, len(nodes) - 1, tuple(nodes))
    h = layout.size

    for t in range(T + 1):
        for i in range(n):
            if np.isfinite(sys.x_hi[i]):
                ineq.add([t * n + i], [1.0], sys.x_hi[i], "x_bound")
            if np.isfinite(sys.x_lo[i]):
                ineq.add([t * n + i], [-1.0], -sys.x_lo[i], "x_bound")
    for t in range(T):
        for j in range(m):
            col = layout.u_index(t, j)
            if np.isfinite(sys.u_hi[j]):
                ineq.add([col], [1.0], sys.u_hi[j], "u_bound")
            if np.isfinite(sys.u_lo[j]):
                ineq.add([col], [-1.0], -sys.u_lo[j], "u_bound")

    eq = _RowBuilder()
    for i in range(n):
        eq.add([i], [1.0], x0[i], "initial")
    for t in range(T):
        for i in range(n):
            cols = [(t + 1) * n + i] + xcols(t) + [layout.u_index(t, j) for j in range(m)]
            vals = [1.0] + list(-sys.A[i]) + list(-sys.B[i])
            eq.add(cols, vals, 0.0, "dynamics")

    A_in, b_in, in_tags = ineq.matrix(h)
    A_eq, b_eq, eq_tags = eq.matrix(h)
    C, d, starts, group_of = _compile_terms(concave, n, h)
    return DcProgram(layout, A_eq, b_eq, eq_tags, A_in, b_in, in_tags, tuple(concave), float(k), C, d, starts, group_of)


def _compile_terms(concave, n, h):
    rows, cols, vals, d, starts, group_of = [], [], [], [], [], []
    r = 0
    for g, row in enumerate(concave):
        starts.append(r)
        for term in row.terms:
            if isinstance(term, PredicateTerm):
                for i, a in enumerate(term.a):
                    if a != 0.0:
                        rows.append(r)
                        cols.append(term.t * n + i)
                        vals.append(a)
                d.append(-term.b)
            else:
                rows.append(r)
                cols.append(term.index)
                vals.append(1.0)
                d.append(0.0)
            group_of.append(g)
            r += 1
    C = sp.csr_matrix((vals, (rows, cols)), shape=(r, h))
    return C, np.array(d, dtype=float), np.array(starts, dtype=int), np.array(group_of, dtype=int)


def feasible_embed(tree: OpTree, prog: DcProgram, traj) -> np.ndarray:
    """Lift a trajectory into ``z`` with every epigraph variable at its subtree's smoothed value.

    ``tree`` must be the tree ``prog`` was built from. Under this embedding all
    max and smooth-min rows hold with equality or slack; only ``s_xi <= 0`` can
    fail, exactly when the smoothed robustness is positive.
    """
    lay = prog.layout
    x = as_states(traj)
    if x.shape != (lay.T + 1, lay.n):
        raise DecompositionError(f"trajectory shape {x.shape} does not match ({lay.T + 1}, {lay.n})")
    u = traj.u if isinstance(traj, Trajectory) and traj.u is not None else np.zeros((lay.T, lay.m))
    z = np.zeros(lay.size)
    z[lay.x] = x.reshape(-1)
    z[lay.u] = np.asarray(u, dtype=float).reshape(-1)
    cache: Dict[int, float] = {}
    _eval_cached(tree, x, prog.k, cache)
    for j, node in enumerate(lay.nodes):
        val = cache.get(id(node))
        z[lay.s_xi + j] = eval_smoothed(node, x, prog.k) if val is None else val
    return z


@dataclass
class FeasibilityReport:
    """Largest violation (>= 0) per constraint class."""

    violations: Dict[str, float]
    tol: float

    @property
    def feasible(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    @property
    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)

    def __getitem__(self, key):
        return self.violations[key]


def check_feasible(prog: DcProgram, z, tol: float = 1e-9, slack=None) -> FeasibilityReport:
    """Residuals of every constraint class at ``z``; concave rows are evaluated exactly.

    ``slack`` (one entry per concave row) relaxes the concave right-hand sides,
    as in the penalised subproblems.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (prog.layout.size,):
        raise DecompositionError(f"z must have length {prog.layout.size}, got {z.shape}")
    out = {}
    eq_res = np.abs(prog.A_eq @ z - prog.b_eq)
    in_res = prog.A_in @ z - prog.b_in
    eq_tags = np.asarray(prog.eq_tags)
    in_tags = np.asarray(prog.in_tags)
    out["dynamics"] = float(np.max(eq_res, initial=0.0))
    for tag in INEQ_TAGS:
        out[tag] = max(0.0, float(np.max(in_res[in_tags == tag], initial=0.0)))
    if prog.n_concave:
        vals, _ = prog.concave_values(z)
        rhs = z[prog.concave_rhs()]
        if slack is not None:
            rhs = rhs + np.asarray(slack, dtype=float)
        out["concave"] = max(0.0, float(np.max(vals - rhs)))
    else:
        out["concave"] = 0.0
    return FeasibilityReport(out, tol)


def audit_structure(prog: DcProgram) -> List[str]:
    """Return a list of structural problems (empty when the program is well formed).

    Checks that equality rows come only from the initial state and the
    dynamics, that every affine inequality is a plain linear row of a known
    kind, that each max row bounds one predicate at one timestep by one
    epigraph variable, and that every fresh variable is bounded by some row.
    """
    lay = prog.layout
    problems = []
    for tag in prog.eq_tags:
        if tag not in EQ_TAGS:
            problems.append(f"equality row of kind {tag!r}")
    n_dyn = lay.n * (lay.T + 1)
    if len(prog.eq_tags) != n_dyn:
        problems.append(f"expected {n_dyn} initial/dynamics equalities, found {len(prog.eq_tags)}")
    bounded = set()
    A = prog.A_in
    for i, tag in enumerate(prog.in_tags):
        if tag not in INEQ_TAGS:
            problems.append(f"inequality row {i} of unknown kind {tag!r}")
            continue
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        vals = A.data[A.indptr[i]:A.indptr[i + 1]]
        if tag == "max":
            epi = cols[cols >= lay.s_xi]
            xs = cols[cols < lay.x.stop]
            if epi.size != 1 or vals[cols == epi[0]][0] != -1.0:
                problems.append(f"max row {i} must have exactly one epigraph variable with coefficient -1")
            elif xs.size and len(set(xs // lay.n)) != 1:
                problems.append(f"max row {i} mixes timesteps")
            if cols.size != xs.size + epi.size:
                problems.append(f"max row {i} touches input variables")
            bounded.update(epi.tolist())
    bounded.update(prog.concave_rhs().tolist())
    for j in range(lay.s_new.start, lay.s_new.stop):
        if j not in bounded:
            problems.append(f"epigraph variable {j} is not bounded by any row")
    return problems


def to_json(prog: DcProgram) -> dict:
    """Plain-data dump of the program for inspection and test oracles.

    Layout::

        {"layout": {"n", "m", "T", "size", "x": [start, stop], "u": [start, stop],
                    "s_xi": index, "s_new": [start, stop]},
         "k": float,
         "equalities":   [{"tag", "cols", "vals", "rhs"}, ...],   # row . z == rhs
         "inequalities": [{"tag", "cols", "vals", "rhs"}, ...],   # row . z <= rhs
         "concave": [{"rhs": index,
                      "terms": [{"a", "b", "t"} | {"var": index}, ...]}, ...]}
    """
    lay = prog.layout

    def rows(M, rhs, tags):
        out = []
        for i in range(M.shape[0]):
            lo, hi = M.indptr[i], M.indptr[i + 1]
            out.append(
                {
                    "tag": tags[i],
                    "cols": M.indices[lo:hi].tolist(),
                    "vals": M.data[lo:hi].tolist(),
                    "rhs": float(rhs[i]),
                }
            )
        return out

    def term(t):
        if isinstance(t, PredicateTerm):
            return {"a": list(t.a), "b": t.b, "t": t.t}
        return {"var": t.index}

    return {
        "layout": {
            "n": lay.n,
            "m": lay.m,
            "T": lay.T,
            "size": lay.size,
            "x": [lay.x.start, lay.x.stop],
            "u": [lay.u.start, lay.u.stop],
            "s_xi": lay.s_xi,
            "s_new": [lay.s_new.start, lay.s_new.stop],
        },
        "k": prog.k,
        "equalities": rows(prog.A_eq, prog.b_eq, prog.eq_tags),
        "inequalities": rows(prog.A_in, prog.b_in, prog.in_tags),
        "concave": [{"rhs": row.rhs, "terms": [term(t) for t in row.terms]} for row in prog.concave],
    }
