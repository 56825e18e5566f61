"""Random test cases and independent reference implementations used by the tests."""

import numpy as np

from stlccp.decomposition import decompose
from stlccp.qp import QpProblem
from stlccp.robustness import eval_smoothed
from stlccp.stl import Always, And, Eventually, LinearPredicate, Not, Or, Pred, Until, horizon, to_nnf, unfold
from stlccp.system import LinearSystem, Trajectory


def random_predicate(rng, n=2):
    while True:
        a = np.round(rng.uniform(-2, 2, n), 3)
        if np.any(a != 0):
            return Pred(LinearPredicate(tuple(a), float(np.round(rng.uniform(-3, 3), 3))))


def _has_until(f):
    if isinstance(f, Until):
        return True
    if isinstance(f, Pred):
        return False
    if isinstance(f, Not):
        return _has_until(f.child)
    if isinstance(f, (And, Or)):
        return any(_has_until(c) for c in f.children)
    return _has_until(f.child)


def random_formula(rng, n=2, ops=6, max_h=8, allow_not=True, allow_until=True):
    """A formula with at most ``ops`` operators and horizon at most ``max_h``."""
    if ops <= 0:
        return random_predicate(rng, n)
    kinds = ["and", "or", "G", "F"]
    if allow_not:
        kinds.append("not")
    if allow_until and max_h >= 1:
        kinds.append("U")
    kind = kinds[rng.integers(len(kinds))]
    if kind in ("G", "F", "U") and max_h < 1:
        kind = "and"
    if kind == "not":
        child = random_formula(rng, n, ops - 1, max_h, allow_not, allow_until)
        if _has_until(child):
            return child
        return Not(child)
    if kind in ("and", "or"):
        left_ops = int(rng.integers(0, ops))
        left = random_formula(rng, n, left_ops, max_h, allow_not, allow_until)
        right = random_formula(rng, n, ops - 1 - left_ops, max_h, allow_not, allow_until)
        return (And if kind == "and" else Or)((left, right))
    t2 = int(rng.integers(1, max_h + 1))
    t1 = int(rng.integers(0, t2))
    rest = max_h - t2
    if kind == "U":
        left_ops = int(rng.integers(0, ops))
        left = random_formula(rng, n, left_ops, rest, allow_not, allow_until)
        right = random_formula(rng, n, ops - 1 - left_ops, rest, allow_not, allow_until)
        return Until(t1, t2, left, right)
    child = random_formula(rng, n, ops - 1, rest, allow_not, allow_until)
    return (Always if kind == "G" else Eventually)(t1, t2, child)


def random_case(rng, n=2, ops=6, T_max=8, **kw):
    """(formula, NNF formula, trajectory) with T <= T_max covering the horizon."""
    f = random_formula(rng, n, int(rng.integers(1, ops + 1)), T_max, **kw)
    g = to_nnf(f)
    T = int(rng.integers(horizon(g), T_max + 1))
    x = rng.uniform(-4, 4, size=(T + 1, n))
    return f, g, x


def oracle_original(f, x, t=0, until="paper"):
    """Conventional robustness evaluated straight from the formula (Not allowed)."""
    if isinstance(f, Pred):
        a, b = f.pred.a, f.pred.b
        return b - sum(ai * xi for ai, xi in zip(a, x[t]))
    if isinstance(f, Not):
        return -oracle_original(f.child, x, t, until)
    if isinstance(f, And):
        return min(oracle_original(c, x, t, until) for c in f.children)
    if isinstance(f, Or):
        return max(oracle_original(c, x, t, until) for c in f.children)
    if isinstance(f, Always):
        return min(oracle_original(f.child, x, s, until) for s in range(t + f.t1, t + f.t2 + 1))
    if isinstance(f, Eventually):
        return max(oracle_original(f.child, x, s, until) for s in range(t + f.t1, t + f.t2 + 1))
    if isinstance(f, Until):
        vals = []
        for s in range(t + f.t1, t + f.t2 + 1):
            if until == "paper":
                right = max(oracle_original(f.right, x, r, until) for r in range(t + f.t1, s + 1))
                vals.append(max(oracle_original(f.left, x, s, until), right))
            else:
                left = min(oracle_original(f.left, x, r, until) for r in range(t, s + 1))
                vals.append(min(oracle_original(f.right, x, s, until), left))
        return min(vals) if until == "paper" else max(vals)
    raise TypeError(f)


def random_tree(rng, n=2, ops=6, T_max=8, **kw):
    """A simplified operator tree with its trajectory."""
    _, g, x = random_case(rng, n, ops, T_max, **kw)
    return unfold(g, 0, x.shape[0] - 1), x


def lift_epigraph(prog, z):
    """Raise each epigraph variable (children first) to the least value its rows allow."""
    z = np.array(z, dtype=float)
    lay = prog.layout
    A = prog.A_in.tocsr()
    max_rows = prog.rows_tagged("max")
    owner = {}
    for r in max_rows:
        cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
        owner.setdefault(int(cols[cols >= lay.s_xi][0]), []).append(r)
    rhs = prog.concave_rhs()
    for j in range(lay.size - 1, lay.s_xi - 1, -1):
        need = -np.inf
        for r in owner.get(j, []):
            need = max(need, float((A[r] @ z)[0]) + z[j] - prog.b_in[r])
        rows = np.flatnonzero(rhs == j)
        if rows.size:
            vals, _ = prog.concave_values(z)
            need = max(need, float(vals[rows].max()))
        if np.isfinite(need):
            z[j] = max(z[j], need) if j != lay.s_xi else need
    return z


def random_program(rng, ops=6, T_max=8, k=10.0):
    """A fuzzed tree, its decomposition over x_{t+1} = x_t + u_t (n=2), and a trajectory."""
    tree, x = random_tree(rng, 2, ops, T_max)
    T = x.shape[0] - 1
    sys = LinearSystem(np.eye(2), np.eye(2))
    prog = decompose(tree, sys, x[0], T, k)
    traj = Trajectory(x, np.diff(x, axis=0))
    return tree, sys, prog, traj


def fd_gradient(t, x, k, h=1e-6):
    """Central differences of eval_smoothed with respect to every state entry."""
    flat = x.reshape(-1).copy()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (eval_smoothed(t, up.reshape(x.shape), k) - eval_smoothed(t, dn.reshape(x.shape), k)) / (2 * h)
    return out


def box_qp(P, q, lo, hi):
    h = q.size
    A = np.vstack([np.eye(h), -np.eye(h)])
    return QpProblem(P, q, A, np.concatenate([hi, -lo]))


def projected_gradient(P, q, lo, hi, iters=200000, tol=1e-14):
    """Accelerated projected gradient on a box; the reference answer for box QPs."""
    L = max(np.linalg.eigvalsh(P).max(), 1e-3)
    z = np.clip(np.zeros_like(q), lo, hi)
    y, t = z.copy(), 1.0
    for _ in range(iters):
        z_new = np.clip(y - (P @ y + q) / L, lo, hi)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = z_new + (t - 1) / t_new * (z_new - z)
        if np.max(np.abs(z_new - z)) < tol:
            return z_new
        z, t = z_new, t_new
    return z


def random_box_qp(rng, lp=False, singular=False):
    """A box-constrained QP with h <= 20; ``singular`` gives a rank-deficient P."""
    h = int(rng.integers(1, 21))
    if lp:
        P = np.zeros((h, h))
    elif singular:
        M = rng.normal(size=(h, int(rng.integers(1, h + 1))))
        P = M @ M.T / h
    else:
        M = rng.normal(size=(h, h))
        P = M @ M.T / h + rng.uniform(0.05, 1.0) * np.eye(h)
    q = rng.normal(size=h) * 3
    lo = -rng.uniform(0.1, 2.0, h)
    hi = rng.uniform(0.1, 2.0, h)
    return P, q, lo, hi
