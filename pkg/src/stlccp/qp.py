"""Primal-dual interior-point solver for sparse convex quadratic programs.

Solves::

    minimize    0.5 z'Pz + q'z
    subject to  A_in z <= b_in
                A_eq z  = b_eq

with Mehrotra's predictor-corrector method. Each iteration factorizes the
reduced KKT system ``[[P + A_in' W A_in, A_eq'], [A_eq, -d I]]`` with a sparse LU
(dense for small systems).
When the iteration fails to converge an elastic phase-one problem decides
whether the constraints are infeasible.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 4000

_REG_PRIMAL = 1e-10
_REG_DUAL = 1e-10
_STEP_FRACTION = 0.99
_STALL_ITERS = 60
# below this KKT size a dense LU beats sparse bookkeeping
_DENSE_MAX = 250


class QpError(ValueError):
    pass


def _csr(M, rows, cols) -> sp.csr_matrix:
    if M is None:
        return sp.csr_matrix((rows, cols))
    M = sp.csr_matrix(M, dtype=float)
    if M.shape != (rows, cols):
        raise QpError(f"expected a {rows}x{cols} matrix, got {M.shape}")
    return M


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Convex QP data. Matrices are stored as scipy CSR; ``P`` must be PSD."""

    P: sp.csr_matrix
    q: np.ndarray
    A_in: sp.csr_matrix = None
    b_in: np.ndarray = None
    A_eq: sp.csr_matrix = None
    b_eq: np.ndarray = None
    check_psd: bool = True

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        h = q.size
        b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, dtype=float).reshape(-1)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        P = _csr(self.P, h, h) if self.P is not None else sp.csr_matrix((h, h))
        A_in = _csr(self.A_in, b_in.size, h)
        A_eq = _csr(self.A_eq, b_eq.size, h)
        if P.nnz and abs(P - P.T).max() > 1e-10 * max(1.0, abs(P).max()):
            raise QpError("P must be symmetric")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(b_in)) and np.all(np.isfinite(b_eq))):
            raise QpError("problem data must be finite")
        for name, val in (("P", P), ("q", q), ("A_in", A_in), ("b_in", b_in), ("A_eq", A_eq), ("b_eq", b_eq)):
            object.__setattr__(self, name, val)
        if self.check_psd and P.nnz:
            lam_min = _min_eigenvalue(P)
            if lam_min < -1e-8:
                raise QpError(f"P is not positive semidefinite (min eigenvalue {lam_min:.3g})")

    @property
    def h(self) -> int:
        return self.q.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.P @ z) + self.q @ z)


def _min_eigenvalue(P: sp.csr_matrix) -> float:
    # P is block diagonal in practice; test each connected block densely
    n_comp, labels = sp.csgraph.connected_components(P, directed=False)
    worst = np.inf
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        block = P[idx][:, idx].toarray()
        if not block.any():
            continue
        if idx.size > 400:
            worst = min(worst, float(spla.eigsh(P[idx][:, idx], k=1, which="SA")[0][0]))
        else:
            worst = min(worst, float(np.linalg.eigvalsh(0.5 * (block + block.T))[0]))
    return 0.0 if worst == np.inf else worst


@dataclass
class QpSolution:
    z: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    complementarity: float
    duality_gap: float
    iterations: int
    y_in: Optional[np.ndarray] = None
    y_eq: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(prob: QpProblem, z, y_in, y_eq):
    """Infinity-norm residuals (primal, dual, complementarity) at a point."""
    z = np.asarray(z, dtype=float)
    slack = prob.b_in - prob.A_in @ z
    primal = max(
        float(np.max(-slack, initial=0.0)),
        float(np.max(np.abs(prob.A_eq @ z - prob.b_eq), initial=0.0)),
    )
    grad = prob.P @ z + prob.q + prob.A_in.T @ y_in + prob.A_eq.T @ y_eq
    dual = max(float(np.max(np.abs(grad), initial=0.0)), float(np.max(-y_in, initial=0.0)))
    with np.errstate(over="ignore", invalid="ignore"):
        comp = float(np.max(np.abs(y_in * slack), initial=0.0))
    return primal, dual, comp


def solve_qp(
    prob: QpProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    z0=None,
) -> QpSolution:
    """Solve ``prob`` to KKT residuals below ``tol`` (infinity norm).

    ``z0`` is an optional primal starting point; it is used when it leaves a
    positive margin on the inequalities, otherwise the default start is used.
    """
    # normalise the objective to unit magnitude so the stopping test does not
    # depend on how the cost happens to be scaled
    sigma = max(abs(prob.P).max() if prob.P.nnz else 0.0, float(np.abs(prob.q).max(initial=0.0)))
    if sigma > 0 and sigma != 1.0:
        scaled = QpProblem(prob.P / sigma, prob.q / sigma, prob.A_in, prob.b_in, prob.A_eq, prob.b_eq, check_psd=False)
        sol = _ipm(scaled, tol * min(1.0, 1.0 / sigma), max_iter, z0)
        sol.y_in, sol.y_eq = sigma * sol.y_in, sigma * sol.y_eq
        sol.primal_residual, sol.dual_residual, sol.complementarity = kkt_residuals(prob, sol.z, sol.y_in, sol.y_eq)
        sol.duality_gap *= sigma
        worst = max(sol.primal_residual, sol.dual_residual, sol.complementarity)
        sol.status = OPTIMAL if worst <= tol else MAX_ITER
    else:
        sol = _ipm(prob, tol, max_iter, z0)
    sol = _polish(prob, sol, tol)
    if sol.status == OPTIMAL:
        return sol
    if _phase_one_infeasible(prob, tol):
        sol.status = INFEASIBLE
    return sol


class _DenseLU:
    """LU of a small dense KKT matrix with the ``splu`` solve interface."""

    def __init__(self, K):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.factors = sla.lu_factor(K, check_finite=False)
        if np.any(np.diag(self.factors[0]) == 0.0):
            raise RuntimeError("singular KKT matrix")

    def solve(self, rhs):
        return sla.lu_solve(self.factors, rhs, check_finite=False)


def _ipm(prob: QpProblem, tol, max_iter, z0):
    P, q = prob.P, prob.q
    G, hvec = prob.A_in, prob.b_in
    A, b = prob.A_eq, prob.b_eq
    nz, p, r = prob.h, hvec.size, b.size
    GT, AT = G.T.tocsr(), A.T.tocsr()
    Pc = P.tocsc()

    dense = nz + r <= _DENSE_MAX
    if dense:
        Pd, Gd, Ad = Pc.toarray(), G.toarray(), A.toarray()

    def factor(w):
        if dense:
            with np.errstate(invalid="ignore", over="ignore"):
                H = Pd + (Gd.T * w) @ Gd + _REG_PRIMAL * np.eye(nz)
            K = np.block([[H, Ad.T], [Ad, -_REG_DUAL * np.eye(r)]]) if r else H
            if not np.all(np.isfinite(K)):
                raise RuntimeError("non-finite KKT matrix")
            return K, _DenseLU(K)
        H = Pc + (GT @ sp.diags(w) @ G) + _REG_PRIMAL * sp.eye(nz)
        K = sp.bmat([[H, AT], [A, -_REG_DUAL * sp.eye(r)]], format="csc") if r else H.tocsc()
        # the regularised KKT matrix is quasi-definite, so a symmetric ordering
        # with diagonal pivots is stable and keeps fill far lower
        try:
            return K, spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
        except RuntimeError:
            return K, spla.splu(K)

    def kkt_solve(K, lu, rhs):
        x = lu.solve(rhs)
        for _ in range(2):
            x += lu.solve(rhs - K @ x)
        return x

    # initial point: least-squares fit to the constraints
    K, lu = factor(np.ones(p))
    sol0 = kkt_solve(K, lu, np.concatenate([-q + GT @ hvec, b]))
    z = sol0[:nz]
    if z0 is not None:
        z0 = np.asarray(z0, dtype=float)
        if z0.shape == (nz,) and (p == 0 or np.min(hvec - G @ z0) > 1e-6):
            z = z0.copy()
    s = hvec - G @ z
    if p:
        # the W = I solve also yields the least-norm dual estimate lam = -s;
        # shift both into the positive orthant
        lam = -s
        s = _shift_positive(s)
        lam = _shift_positive(lam)
    else:
        lam = np.zeros(0)
    y = np.zeros(r)

    best = None
    stall = 0
    scale = 1.0 + max(np.abs(q).max(initial=0.0), np.abs(hvec).max(initial=0.0), np.abs(b).max(initial=0.0))
    it = 0
    for it in range(1, max_iter + 1):
        r_d = P @ z + q + GT @ lam + AT @ y
        r_in = G @ z + s - hvec
        r_eq = A @ z - b
        mu = float(s @ lam) / p if p else 0.0

        primal, dual, comp = kkt_residuals(prob, z, lam, y)
        res = max(primal, dual, comp)
        if best is None or res < 0.999 * best[0] or not np.isfinite(best[0]):
            best = (res, z.copy(), lam.copy(), y.copy())
            stall = 0
        else:
            stall += 1
        if (
            max(np.max(np.abs(r_in), initial=0.0), np.max(np.abs(r_eq), initial=0.0)) <= 0.1 * tol
            and np.max(np.abs(r_d), initial=0.0) <= 0.1 * tol
            and (p == 0 or np.max(s * lam) <= 0.1 * tol)
        ):
            break
        if stall > _STALL_ITERS or not np.isfinite(res) or (p and lam.max() > 1e12 * scale) or np.abs(z).max(initial=0) > 1e12 * scale:
            break

        w = lam / s if p else np.zeros(0)
        try:
            K, lu = factor(w)
        except RuntimeError:
            log.debug("KKT factorization failed at iteration %d", it)
            break

        def direction(r_c):
            # r_c is the right-hand side of  Lam ds + S dlam = r_c
            tmp = (r_c + lam * r_in) / s if p else np.zeros(0)
            rhs = np.concatenate([-r_d - GT @ tmp, -r_eq])
            sol = kkt_solve(K, lu, rhs)
            dz, dy = sol[:nz], sol[nz:]
            if p:
                ds = -r_in - G @ dz
                dlam = tmp + w * (G @ dz)
            else:
                ds = dlam = np.zeros(0)
            return dz, ds, dlam, dy

        if p:
            dz, ds, dlam, dy = direction(-s * lam)
            a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / p
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dz, ds, dlam, dy = direction(-s * lam - ds * dlam + sigma * mu)
            alpha = min(1.0, _STEP_FRACTION * min(_max_step(s, ds), _max_step(lam, dlam)))
        else:
            dz, ds, dlam, dy = direction(np.zeros(0))
            alpha = 1.0
        if not (np.isfinite(alpha) and np.all(np.isfinite(dz)) and np.all(np.isfinite(dlam))):
            log.debug("non-finite search direction at iteration %d", it)
            break
        z = z + alpha * dz
        y = y + alpha * dy
        if p:
            s = s + alpha * ds
            lam = lam + alpha * dlam
            s = np.maximum(s, 1e-300)
            lam = np.maximum(lam, 1e-300)

    primal, dual, comp = kkt_residuals(prob, z, lam, y)
    res = max(primal, dual, comp)
    if best is not None and not best[0] >= res:
        res, z, lam, y = best
        primal, dual, comp = kkt_residuals(prob, z, lam, y)
    status = OPTIMAL if max(primal, dual, comp) <= tol else MAX_ITER
    gap = abs(float(lam @ (hvec - G @ z))) if p else 0.0
    return QpSolution(z, status, primal, dual, comp, gap, it, lam, y)


def _polish(prob: QpProblem, sol: QpSolution, tol, rounds: int = 6) -> QpSolution:
    """Re-solve with a guessed active set as equalities; keep it if the KKT residuals drop.

    Interior-point iterates approach the solution at the rate of the
    complementarity gap; an active-set solve usually removes that remaining
    error. Near-degenerate rows can be misclassified by the first guess, so
    rows with negative multipliers are released and violated rows added for a
    few rounds.
    """
    if not np.all(np.isfinite(sol.z)) or sol.y_in is None:
        return sol
    hvec = prob.b_in
    active = sol.y_in > hvec - prob.A_in @ sol.z
    best = None
    for _ in range(rounds):
        cand = _active_set_solve(prob, np.flatnonzero(active))
        if cand is None:
            break
        z, lam, y_eq = cand
        y_in = np.zeros(hvec.size)
        y_in[active] = np.maximum(lam, 0.0)
        res = max(kkt_residuals(prob, z, y_in, y_eq))
        if best is None or res < best[0]:
            best = (res, z, y_in, y_eq)
        release = np.flatnonzero(active)[lam < 0.0]
        violated = ~active & (hvec - prob.A_in @ z < 0.0)
        if release.size == 0 and not violated.any():
            break
        active[release] = False
        active |= violated
    if best is None or best[0] > max(sol.primal_residual, sol.dual_residual, sol.complementarity):
        return sol
    _, z, y_in, y_eq = best
    res = kkt_residuals(prob, z, y_in, y_eq)
    gap = abs(float(y_in @ (hvec - prob.A_in @ z)))
    status = OPTIMAL if max(res) <= tol else sol.status
    return QpSolution(z, status, res[0], res[1], res[2], gap, sol.iterations, y_in, y_eq)


def _active_set_solve(prob: QpProblem, active):
    """Solve the equality-constrained QP with rows ``active`` held tight; None on failure."""
    G, hvec, A, b = prob.A_in, prob.b_in, prob.A_eq, prob.b_eq
    nz, r = prob.h, b.size
    Ga = G[active]
    na = active.size
    d = 1e-9
    K = sp.bmat(
        [
            [prob.P + d * sp.eye(nz), Ga.T, A.T],
            [Ga, -d * sp.eye(na) if na else None, None],
            [A, None, -d * sp.eye(r) if r else None],
        ],
        format="csc",
    )
    rhs = np.concatenate([-prob.q, hvec[active], b])
    # the regularised system is solved exactly by refinement against the unregularised one
    K0 = sp.bmat([[prob.P, Ga.T, A.T], [Ga, None, None], [A, None, None]], format="csc") if na + r else prob.P.tocsc()
    try:
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
    except RuntimeError:
        return None
    x = lu.solve(rhs)
    for _ in range(5):
        x += lu.solve(rhs - K0 @ x)
    if not np.all(np.isfinite(x)):
        return None
    return x[:nz], x[nz:nz + na], x[nz + na:]


def _shift_positive(v):
    worst = -float(v.min())
    return v + (1.0 + worst) if worst >= 0 else v.copy()


def _max_step(v, dv) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _phase_one_infeasible(prob: QpProblem, tol) -> bool:
    """Minimise total constraint violation; report infeasible if it stays positive."""
    nz, p, r = prob.h, prob.b_in.size, prob.b_eq.size
    if p + r == 0:
        return False
    # variables: z, t (p), e_plus (r), e_minus (r)
    nv = nz + p + 2 * r
    c = np.concatenate([np.zeros(nz), np.ones(p + 2 * r)])
    Ip, Ir = sp.eye(p), sp.eye(r)
    rows = [sp.hstack([prob.A_in, -Ip, sp.csr_matrix((p, 2 * r))])] if p else []
    rows.append(sp.hstack([sp.csr_matrix((p + 2 * r, nz)), -sp.eye(p + 2 * r)]))
    A_in = sp.vstack(rows).tocsr()
    b_in = np.concatenate([prob.b_in, np.zeros(p + 2 * r)])
    A_eq = sp.hstack([prob.A_eq, sp.csr_matrix((r, p)), -Ir, Ir]).tocsr() if r else None
    # a tiny proximal term keeps the z block of the LP bounded
    P = sp.block_diag([1e-8 * sp.eye(nz), sp.csr_matrix((p + 2 * r, p + 2 * r))]).tocsr()
    elastic = QpProblem(P, c, A_in, b_in, A_eq, prob.b_eq if r else None, check_psd=False)
    sol = _ipm(elastic, tol * 1e-2, 500, None)
    violation = float(c @ sol.z)
    log.debug("phase one violation %.3g (status %s)", violation, sol.status)
    return violation > max(10 * tol, 1e-7) * max(1.0, nv ** 0.5)
