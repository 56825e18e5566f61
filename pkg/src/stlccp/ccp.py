"""Penalty convex-concave procedure over a decomposed STL program.

Each outer iteration replaces every smooth-min row by its tangent at the
current point (a global over-estimator, since smooth-min is concave), relaxes
it with a nonnegative slack, and solves the resulting QP::

    minimize  s_xi + tau * sum(v) + w_q * sum_t (x_t'Q x_t + u_t'R u_t)

subject to the dynamics, the box bounds, ``s_xi <= 0``, the max rows and the
linearised smooth-min rows.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from . import qp
from .decomposition import DcProgram, check_feasible, decompose, feasible_embed
from .robustness import DEFAULT_K, eval_original, eval_smoothed
from .stl.tree import OpTree, leaves
from .system import LinearSystem, Trajectory, rollout

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
QP_FAILURE = "qp_failure"
SLACK_POSITIVE = "slack_positive"

SLACK_TOL = 1e-6


@dataclass
class CcpConfig:
    k: float = DEFAULT_K
    penalty_weight: float = 50.0
    quad_weight: float = 0.001
    Q: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    max_outer_iter: int = 100
    cost_tol: float = 1e-4
    restarts: int = 5
    rng_seed: int = 0
    init: str = "random"
    qp_tol: float = qp.DEFAULT_TOL
    qp_max_iter: int = qp.DEFAULT_MAX_ITER
    keep_iterates: bool = False

    def __post_init__(self):
        if not self.penalty_weight > 0:
            raise ValueError("penalty_weight must be positive")
        if self.quad_weight < 0:
            raise ValueError("quad_weight must be nonnegative")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if self.init not in ("random", "zero"):
            raise ValueError("init must be 'random' or 'zero'")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")

    def weights(self, n: int, m: int):
        """Return (Q, R), filling in the defaults diag(0, 0, 1, 1) and I."""
        if self.Q is None:
            Q = np.diag([0.0, 0.0, 1.0, 1.0]) if n == 4 else np.zeros((n, n))
        else:
            Q = np.asarray(self.Q, dtype=float)
        R = np.eye(m) if self.R is None else np.asarray(self.R, dtype=float)
        if Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError(f"Q must be {n}x{n} and R {m}x{m}")
        for name, M in (("Q", Q), ("R", R)):
            if np.abs(M - M.T).max(initial=0.0) > 1e-12 or np.linalg.eigvalsh(M).min(initial=0.0) < -1e-12:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
        return Q, R


@dataclass
class CcpReport:
    status: str
    objective: List[float]
    max_violation: List[float]
    trajectory: Optional[Trajectory]
    s_xi: float
    robustness: float
    smoothed_robustness: float
    slack_sum: float
    seconds: float
    iterations: int
    seed: int
    qp_status: str = qp.OPTIMAL
    iterates: list = field(default_factory=list, repr=False)
    attempts: list = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return self.robustness >= 0.0

    def to_dict(self, include_wallclock: bool = True) -> dict:
        out = {
            "status": self.status,
            "qp_status": self.qp_status,
            "seed": self.seed,
            "iterations": self.iterations,
            "objective": [float(v) for v in self.objective],
            "max_violation": [float(v) for v in self.max_violation],
            "s_xi": float(self.s_xi),
            "robustness": float(self.robustness),
            "smoothed_robustness": float(self.smoothed_robustness),
            "slack_sum": float(self.slack_sum),
            "satisfied": bool(self.satisfied),
            "x": self.trajectory.x.tolist() if self.trajectory is not None else None,
            "u": self.trajectory.u.tolist() if self.trajectory is not None else None,
            "attempts": [dict(a) for a in self.attempts],
        }
        if include_wallclock:
            out["seconds"] = float(self.seconds)
        else:
            for a in out["attempts"]:
                a.pop("seconds", None)
        return out


class _Subproblem:
    """Static blocks of the penalised QP; only the tangent rows change per iteration.

    QP variables are ``(z, v)`` with one slack ``v_i`` per smooth-min row.
    """

    def __init__(self, prog: DcProgram, cfg: CcpConfig):
        lay = prog.layout
        self.prog = prog
        self.h = lay.size
        self.w = prog.n_concave
        nv = self.h + self.w
        Q, R = cfg.weights(lay.n, lay.m)
        blocks = [sp.kron(sp.eye(lay.T + 1), sp.csr_matrix(Q)), sp.kron(sp.eye(lay.T), sp.csr_matrix(R))]
        quad = sp.block_diag(blocks + [sp.csr_matrix((1 + lay.n_new + self.w,) * 2)])
        self.P = (2.0 * cfg.quad_weight * quad).tocsr()
        self.q = np.zeros(nv)
        self.q[lay.s_xi] = 1.0
        self.q[self.h:] = cfg.penalty_weight
        pad = sp.csr_matrix((prog.A_in.shape[0], self.w))
        slack_rows = sp.hstack([sp.csr_matrix((self.w, self.h)), -sp.eye(self.w)])
        cols, caps = _epigraph_caps(prog)
        cap_rows = sp.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)), shape=(cols.size, nv))
        self.A_static = sp.vstack([sp.hstack([prog.A_in, pad]), slack_rows, cap_rows]).tocsr()
        self.b_static = np.concatenate([prog.b_in, np.zeros(self.w), caps])
        self.A_eq = sp.hstack([prog.A_eq, sp.csr_matrix((prog.A_eq.shape[0], self.w))]).tocsr()
        self.b_eq = prog.b_eq
        rhs = prog.concave_rhs()
        # -s_rhs - v_i on each tangent row
        self.E = sp.csr_matrix(
            (
                np.concatenate([-np.ones(self.w), -np.ones(self.w)]),
                (np.concatenate([np.arange(self.w)] * 2), np.concatenate([rhs, self.h + np.arange(self.w)])),
            ),
            shape=(self.w, nv),
        )
        self.C_ext = sp.hstack([prog.C, sp.csr_matrix((prog.C.shape[0], self.w))]).tocsr()

    def build(self, z_hat) -> qp.QpProblem:
        prog = self.prog
        if self.w:
            f_hat, weights = prog.concave_values(z_hat)
            W = sp.csr_matrix(
                (weights, (prog.group_of, np.arange(weights.size))), shape=(self.w, weights.size)
            )
            tangent = (W @ self.C_ext + self.E).tocsr()
            b_tan = W @ (prog.C @ z_hat) - f_hat
            A_in = sp.vstack([self.A_static, tangent]).tocsr()
            b_in = np.concatenate([self.b_static, b_tan])
        else:
            A_in, b_in = self.A_static, self.b_static
        return qp.QpProblem(self.P, self.q, A_in, b_in, self.A_eq, self.b_eq, check_psd=False)

    def objective(self, z, v) -> float:
        zz = np.concatenate([z, v])
        return float(0.5 * zz @ (self.P @ zz) + self.q @ zz)


def _epigraph_caps(prog: DcProgram):
    """Redundant upper bounds on the fresh epigraph variables.

    A fresh variable never needs to exceed the largest predicate value its
    subtree can reach inside the state box. Without the cap, variables whose
    tangent weights underflow to zero are unbounded above and the QP has an
    unbounded optimal face. Returns (columns, caps); empty if the box is open.
    """
    lay = prog.layout
    lo, hi = np.full(lay.n, -np.inf), np.full(lay.n, np.inf)
    A = prog.A_in.tocsr()
    for r in prog.rows_tagged("x_bound"):
        col, coef = A.indices[A.indptr[r]], A.data[A.indptr[r]]
        i = col % lay.n
        if coef > 0:
            hi[i] = min(hi[i], prog.b_in[r] / coef)
        else:
            lo[i] = max(lo[i], prog.b_in[r] / coef)
    cols, caps = [], []
    for j, node in enumerate(lay.nodes[1:]):
        top = -np.inf
        for leaf in leaves(node):
            a = np.asarray(leaf.pred.a)
            with np.errstate(invalid="ignore"):
                reach = np.where(a > 0, a * hi, np.where(a < 0, a * lo, 0.0))
            top = max(top, float(reach.sum()) - leaf.pred.b)
        if np.isfinite(top):
            cols.append(lay.s_xi + 1 + j)
            caps.append(top + 1.0)
    return np.array(cols, dtype=int), np.array(caps, dtype=float)


def linearize(prog: DcProgram, z_hat, cfg: Optional[CcpConfig] = None) -> qp.QpProblem:
    """The penalised convex subproblem at ``z_hat``; variables are ``(z, v)``.

    Row i of the smooth-min block becomes
    ``f_i(z_hat) + grad f_i(z_hat) . (z - z_hat) <= z[rhs_i] + v_i`` with ``v_i >= 0``.
    """
    return _Subproblem(prog, cfg or CcpConfig(k=prog.k)).build(np.asarray(z_hat, dtype=float))


def tangent_value(prog: DcProgram, z_hat, z) -> np.ndarray:
    """Value at ``z`` of each smooth-min row's tangent taken at ``z_hat``."""
    f_hat, weights = prog.concave_values(z_hat)
    diff = prog.C @ (np.asarray(z, dtype=float) - np.asarray(z_hat, dtype=float))
    return f_hat + np.add.reduceat(weights * diff, prog.group_start) if prog.n_concave else np.zeros(0)


def initialize(prog: DcProgram, sys: LinearSystem, x0, seed: int = 0, mode: str = "random") -> np.ndarray:
    """Starting point: random (or zero) inputs, their rollout, embedded epigraph values.

    ``s_xi`` is clipped to ``<= 0``; the penalty slacks absorb the resulting
    violation in the first subproblem.
    """
    lay = prog.layout
    if mode == "zero":
        u = np.zeros((lay.T, lay.m))
    else:
        rng = np.random.default_rng(seed)
        lo = np.where(np.isfinite(sys.u_lo), sys.u_lo, -1.0)
        hi = np.where(np.isfinite(sys.u_hi), sys.u_hi, 1.0)
        u = rng.uniform(lo, hi, size=(lay.T, lay.m))
    traj = rollout(sys, x0, u)
    z = feasible_embed(lay.nodes[0], prog, traj)
    z[lay.s_xi] = min(z[lay.s_xi], 0.0)
    return z


def _tighten(prog: DcProgram, z) -> np.ndarray:
    """Lower every fresh epigraph variable to its subtree's smoothed value at z.

    Variables with near-zero tangent weight feel almost no pull in the QP, so
    the solver leaves them well above their true values. Linearising at such a
    point would misweight the next tangent. Lowering them keeps every row
    feasible (smooth-min is monotone) and leaves the QP objective unchanged.
    """
    lay = prog.layout
    traj = Trajectory(lay.states(z), lay.inputs(z))
    tight = feasible_embed(lay.nodes[0], prog, traj)
    out = z.copy()
    out[lay.s_new] = np.minimum(z[lay.s_new], tight[lay.s_new])
    return out


def run_ccp(
    prog: DcProgram,
    sys: LinearSystem,
    x0,
    cfg: CcpConfig,
    seed: int,
    sub: Optional[_Subproblem] = None,
) -> CcpReport:
    """One penalty-CCP attempt from the initial point drawn with ``seed``."""
    start = time.perf_counter()
    lay = prog.layout
    tree = lay.nodes[0]
    sub = sub or _Subproblem(prog, cfg)
    z = initialize(prog, sys, x0, seed, cfg.init)
    v = np.zeros(sub.w)
    objective, violation, iterates = [], [], []
    status, qp_status = MAX_ITER, qp.OPTIMAL
    it = 0
    for it in range(1, cfg.max_outer_iter + 1):
        problem = sub.build(z)
        sol = qp.solve_qp(problem, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
        if sol.status != qp.OPTIMAL:
            # a slightly inaccurate but primal-feasible answer is still usable
            if sol.status == qp.MAX_ITER and sol.primal_residual <= 1e3 * cfg.qp_tol:
                log.debug("QP at iteration %d stopped at residuals %.2g/%.2g/%.2g", it,
                          sol.primal_residual, sol.dual_residual, sol.complementarity)
            else:
                status, qp_status = QP_FAILURE, sol.status
                it -= 1
                break
        z_new = _tighten(prog, sol.z[: sub.h].copy())
        v_new = np.maximum(sol.z[sub.h:], 0.0)
        obj = sub.objective(z_new, v_new)
        # the previous iterate is feasible for this subproblem, so a higher
        # objective is solver round-off; keep the previous point instead
        if objective and obj > objective[-1]:
            z_new, v_new, obj = z, v, objective[-1]
        z, v = z_new, v_new
        objective.append(obj)
        violation.append(check_feasible(prog, z).worst)
        if cfg.keep_iterates:
            iterates.append((z.copy(), v.copy()))
        if len(objective) > 1 and abs(objective[-1] - objective[-2]) < cfg.cost_tol:
            status = CONVERGED if v.sum() <= SLACK_TOL else SLACK_POSITIVE
            break

    # on a QP failure z is the last accepted point (the initial one at worst)
    u = lay.inputs(z)
    traj = rollout(sys, x0, u)
    robustness = eval_original(tree, traj)
    smoothed = eval_smoothed(tree, traj, prog.k)
    return CcpReport(
        status=status,
        objective=objective,
        max_violation=violation,
        trajectory=traj,
        s_xi=float(z[lay.s_xi]),
        robustness=float(robustness),
        smoothed_robustness=float(smoothed),
        slack_sum=float(v.sum()),
        seconds=time.perf_counter() - start,
        iterations=it,
        seed=seed,
        qp_status=qp_status,
        iterates=iterates,
    )


def solve_ccp(
    tree: OpTree,
    sys: LinearSystem,
    x0,
    T: int,
    cfg: Optional[CcpConfig] = None,
    prog: Optional[DcProgram] = None,
) -> CcpReport:
    """Decompose ``tree`` and run ``cfg.restarts`` seeded attempts.

    Seeds are ``cfg.rng_seed + i``. The attempt with the highest exact
    robustness wins; ties go to the lowest seed. ``seconds`` covers all attempts.
    """
    cfg = cfg or CcpConfig()
    start = time.perf_counter()
    prog = prog or decompose(tree, sys, x0, T, cfg.k)
    sub = _Subproblem(prog, cfg)
    best = None
    attempts = []
    for i in range(cfg.restarts):
        rep = run_ccp(prog, sys, x0, cfg, cfg.rng_seed + i, sub)
        attempts.append(
            {
                "seed": rep.seed,
                "status": rep.status,
                "robustness": rep.robustness,
                "iterations": rep.iterations,
                "seconds": rep.seconds,
            }
        )
        log.info("seed %d: %s, robustness %.4f, %d iterations, %.2fs",
                 rep.seed, rep.status, rep.robustness, rep.iterations, rep.seconds)
        if best is None or rep.robustness > best.robustness:
            best = rep
    best.attempts = attempts
    best.seconds = time.perf_counter() - start
    return best
