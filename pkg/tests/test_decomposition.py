import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fuzz import lift_epigraph, random_program
from stlccp.bench.scenario import DEFAULT_REGIONS, DEFAULT_X0, build_two_target
from stlccp.decomposition import (
    DecompositionError,
    EpigraphTerm,
    PredicateTerm,
    audit_structure,
    check_feasible,
    decompose,
    feasible_embed,
    to_json,
)
from stlccp.robustness import eval_smoothed
from stlccp.stl import Leaf, LinearPredicate, MaxNode, MinNode, unfold
from stlccp.system import LinearSystem, Trajectory, double_integrator, rollout

SEEDS = st.integers(0, 2**32 - 1)
SCALAR = LinearSystem([[1.0]], [[1.0]])
SCALAR2 = LinearSystem(np.eye(2), np.eye(2))


def leaf(a, b, t=0):
    return Leaf(LinearPredicate((a,), b), t)


def leaf_nd(n):
    return Leaf(LinearPredicate((1.0,) + (0.0,) * (n - 1), 5.0), 0)


def test_root_max_gives_affine_rows_only():
    l1, l2 = leaf(1.0, 2.0, 0), leaf(-1.0, 0.5, 1)
    prog = decompose(MaxNode((l1, l2)), SCALAR, [0.0], 1)
    assert prog.n_concave == 0 and prog.layout.n_new == 0
    rows = prog.rows_tagged("max")
    A = prog.A_in.toarray()
    s = prog.layout.s_xi
    # a x_t - s <= b for each leaf
    assert sorted((tuple(A[r]), prog.b_in[r]) for r in rows) == sorted([
        ((1.0, 0.0, 0.0, -1.0), 2.0),
        ((0.0, -1.0, 0.0, -1.0), 0.5),
    ])
    (r,) = prog.rows_tagged("s_xi")
    assert A[r, s] == 1.0 and prog.b_in[r] == 0.0


def test_root_min_gives_one_concave_row_on_s_xi():
    prog = decompose(MinNode((leaf(1.0, 2.0), leaf(-1.0, 0.5))), SCALAR, [0.0], 0)
    assert prog.rows_tagged("max").size == 0
    (row,) = prog.concave
    assert row.rhs == prog.layout.s_xi
    assert row.terms == (PredicateTerm((1.0,), 2.0, 0), PredicateTerm((-1.0,), 0.5, 0))


def test_min_children_that_are_subtrees_get_fresh_variables():
    inner = MaxNode((leaf(1.0, 0.0, 0), leaf(1.0, 1.0, 1)))
    prog = decompose(MinNode((leaf(-1.0, 0.0), inner)), SCALAR, [0.0], 1)
    assert prog.layout.n_new == 1
    (row,) = prog.concave
    assert isinstance(row.terms[1], EpigraphTerm)
    assert prog.layout.nodes[1] == inner
    assert prog.rows_tagged("max").size == 2


def test_two_target_small_tree_structure():
    tree = unfold(build_two_target(1, 1, DEFAULT_REGIONS), 0, 1)
    prog = decompose(tree, double_integrator(), DEFAULT_X0, 1)
    assert 1 + prog.layout.n_new == 5
    assert prog.n_concave == 4
    # B1 and B2 dwell windows: 2 steps x 4 halfspaces each; G: one 4-row block per step
    assert prog.rows_tagged("max").size == 24
    assert audit_structure(prog) == []


def test_rejects_unsimplified_tree():
    with pytest.raises(DecompositionError):
        decompose(MaxNode((MaxNode((leaf(1.0, 0), leaf(1.0, 1))), leaf(1.0, 2))), SCALAR, [0.0], 0)
    with pytest.raises(DecompositionError):
        decompose(leaf(1.0, 0.0, 3), SCALAR, [0.0], 2)


def test_bounds_and_dynamics_rows():
    sys = double_integrator()
    prog = decompose(leaf_nd(4), sys, DEFAULT_X0, 3)
    assert prog.rows_tagged("x_bound").size == 2 * 4 * 4
    assert prog.rows_tagged("u_bound").size == 2 * 2 * 3
    assert prog.rows_tagged("initial").size == 4 and prog.rows_tagged("dynamics").size == 12


def _two_target(T=12, T_d=2):
    tree = unfold(build_two_target(T, T_d, DEFAULT_REGIONS), 0, T)
    sys = double_integrator()
    return tree, sys, decompose(tree, sys, DEFAULT_X0, T)


def test_embed_satisfying_trajectory():
    tree = MaxNode((leaf(1.0, 1.0, 0), leaf(1.0, 1.0, 1)))
    prog = decompose(tree, SCALAR, [0.0], 1)
    traj = rollout(SCALAR, [0.0], [[0.7]])
    z = feasible_embed(tree, prog, traj)
    assert z[prog.layout.s_xi] == pytest.approx(-0.3)
    assert check_feasible(prog, z).feasible


def test_embed_violating_trajectory_only_breaks_s_xi():
    tree = MinNode((leaf(1.0, 1.0, 1), MaxNode((leaf(-1.0, 0.0, 0), leaf(1.0, 0.5, 1)))))
    prog = decompose(tree, SCALAR, [0.0], 1)
    traj = rollout(SCALAR, [0.0], [[1.2 + 0.5]])
    z = feasible_embed(tree, prog, traj)
    rep = check_feasible(prog, z)
    assert rep["s_xi"] == pytest.approx(eval_smoothed(tree, traj, prog.k))
    assert rep["s_xi"] > 0
    assert all(v <= 1e-12 for key, v in rep.violations.items() if key != "s_xi")


def test_check_feasible_reports():
    tree, _, prog = _two_target()
    x = np.tile(DEFAULT_X0, (13, 1)).astype(float)
    z = feasible_embed(tree, prog, Trajectory(x, np.zeros((12, 2))))
    z[prog.layout.s_xi] = 1.0
    assert check_feasible(prog, z)["s_xi"] == 1.0


def test_check_feasible_dynamics_only():
    prog = decompose(leaf(1.0, 10.0), SCALAR, [0.5], 1)
    z = np.zeros(prog.layout.size)
    z[0] = 0.5
    z[prog.layout.u] = 0.25
    assert check_feasible(prog, z)["dynamics"] == pytest.approx(0.75)


@given(SEEDS)
@settings(max_examples=150, deadline=None)
def test_embedding_satisfies_every_row_but_s_xi(seed):
    rng = np.random.default_rng(seed)
    tree, _, prog, traj = random_program(rng)
    assert audit_structure(prog) == []
    z = feasible_embed(tree, prog, traj)
    rep = check_feasible(prog, z, tol=1e-9)
    assert all(v <= 1e-9 for key, v in rep.violations.items() if key != "s_xi")
    assert z[prog.layout.s_xi] == pytest.approx(eval_smoothed(tree, traj.x, prog.k), abs=1e-12)


@given(SEEDS)
@settings(max_examples=150, deadline=None)
def test_feasible_points_bound_smoothed_robustness(seed):
    rng = np.random.default_rng(seed)
    tree, _, prog, traj = random_program(rng)
    lay = prog.layout
    z = feasible_embed(tree, prog, traj)
    z[lay.s_new] += rng.exponential(0.5, lay.n_new)
    z = lift_epigraph(prog, z)
    if z[lay.s_xi] > 0:
        return
    z[lay.s_xi] = rng.uniform(z[lay.s_xi], 0.0)
    rep = check_feasible(prog, z, tol=1e-9)
    assert rep.feasible, rep.violations
    x = lay.states(z)
    assert eval_smoothed(tree, x, prog.k) <= z[lay.s_xi] + 1e-8 <= 1e-8
    # the (x, u) part is a dynamically consistent trajectory
    np.testing.assert_allclose(rollout(SCALAR2, x[0], lay.inputs(z)).x, x, atol=1e-12)


def test_structure_of_two_target():
    _, _, prog = _two_target(25, 5)
    assert audit_structure(prog) == []
    assert set(prog.eq_tags) == {"initial", "dynamics"}
    # every inequality row is affine with at most n + 1 nonzeros
    assert np.diff(prog.A_in.indptr).max() <= 5


def test_json_dump_round_trips_rows():
    tree, _, prog = _two_target(6, 2)
    data = json.loads(json.dumps(to_json(prog)))
    assert data["layout"]["size"] == prog.layout.size
    z = np.random.default_rng(0).normal(size=prog.layout.size)
    for rows, M, b in (("inequalities", prog.A_in, prog.b_in), ("equalities", prog.A_eq, prog.b_eq)):
        got = np.array([sum(v * z[c] for c, v in zip(r["cols"], r["vals"])) - r["rhs"] for r in data[rows]])
        np.testing.assert_allclose(got, M @ z - b, atol=1e-12)
    assert len(data["concave"]) == prog.n_concave
    assert all(("var" in t) or {"a", "b", "t"} <= set(t) for row in data["concave"] for t in row["terms"])
