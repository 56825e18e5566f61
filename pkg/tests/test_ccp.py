import numpy as np
import pytest

from stlccp import qp
from stlccp.bench.scenario import DEFAULT_REGIONS, DEFAULT_X0, build_two_target
from stlccp.ccp import (
    CONVERGED,
    QP_FAILURE,
    SLACK_POSITIVE,
    CcpConfig,
    initialize,
    linearize,
    run_ccp,
    solve_ccp,
    tangent_value,
)
from stlccp.decomposition import check_feasible, decompose
from stlccp.robustness import eval_original, eval_reversed, smooth_min, smoothing_gap_bound
from stlccp.stl import Leaf, LinearPredicate, MinNode, parse, unfold
from stlccp.system import LinearSystem, double_integrator

SCALAR = LinearSystem([[1.0]], [[1.0]], u_lo=[-2.0], u_hi=[2.0])


def scalar_problem(text, T, x0=0.0, sys=SCALAR):
    tree = unfold(parse(text, 1), 0, T)
    return tree, decompose(tree, sys, [x0], T)


def two_target(T=12, T_d=2):
    tree = unfold(build_two_target(T, T_d, DEFAULT_REGIONS), 0, T)
    sys = double_integrator()
    return tree, sys, decompose(tree, sys, DEFAULT_X0, T)


def test_single_leaf_needs_no_tangent():
    one = decompose(Leaf(LinearPredicate((1.0,), 1.0), 1), SCALAR, [0.0], 1)
    assert one.n_concave == 0
    assert linearize(one, np.zeros(one.layout.size)).A_in.shape[0] == one.A_in.shape[0]


def test_equal_terms_split_the_tangent_weight():
    tree = MinNode((Leaf(LinearPredicate((1.0,), 1.0), 1), Leaf(LinearPredicate((2.0,), 1.0), 0)))
    prog = decompose(tree, SCALAR, [0.0], 1)
    # at z = 0 both terms equal -1
    _, w = prog.concave_values(np.zeros(prog.layout.size))
    np.testing.assert_allclose(w, [0.5, 0.5])
    rng = np.random.default_rng(0)
    z_a, z_b, z = rng.normal(size=(3, prog.layout.size))
    exact, _ = prog.concave_values(z)
    assert np.all(tangent_value(prog, z_a, z) >= exact - 1e-12)
    assert np.all(tangent_value(prog, z_b, z) >= exact - 1e-12)


def test_tangent_row_coefficients():
    tree, prog = scalar_problem("F[0,1](x0 >= 1)", 1)
    z_hat = initialize(prog, SCALAR, [0.0], seed=3)
    problem = linearize(prog, z_hat)
    f_hat, w = prog.concave_values(z_hat)
    A = problem.A_in.toarray()
    row = A[-1]
    lay = prog.layout
    # reversed leaf values are 1 - x_t, so the tangent is -w . x - s_xi - v
    np.testing.assert_allclose(row[[lay.x_index(0), lay.x_index(1)]], -w)
    assert row[lay.s_xi] == -1.0 and row[lay.size] == -1.0
    # at z_hat the row is tight up to s_xi
    zz = np.concatenate([z_hat, [0.0]])
    assert row @ zz - problem.b_in[-1] == pytest.approx(f_hat[0] - z_hat[lay.s_xi], abs=1e-12)


def test_tangent_over_estimates_smooth_min():
    _, _, prog = two_target()
    rng = np.random.default_rng(1)
    z_hat = rng.normal(size=prog.layout.size) * 3
    for _ in range(1000):
        z = rng.normal(size=prog.layout.size) * 3
        exact, _ = prog.concave_values(z)
        assert np.all(tangent_value(prog, z_hat, z) >= exact - 1e-9)


def test_concave_values_match_smooth_min():
    tree, prog = scalar_problem("F[0,3](x0 >= 4)", 3)
    z = initialize(prog, SCALAR, [0.0], seed=0)
    x = prog.layout.states(z)[:, 0]
    vals, _ = prog.concave_values(z)
    assert vals[0] == pytest.approx(smooth_min(4.0 - x, prog.k), abs=1e-12)


def test_initialize_is_deterministic_and_feasible_in_the_dynamics():
    tree, sys, prog = two_target()
    z1 = initialize(prog, sys, DEFAULT_X0, seed=5)
    z2 = initialize(prog, sys, DEFAULT_X0, seed=5)
    np.testing.assert_array_equal(z1, z2)
    assert not np.array_equal(z1, initialize(prog, sys, DEFAULT_X0, seed=6))
    rep = check_feasible(prog, z1)
    assert rep["dynamics"] <= 1e-12 and rep["u_bound"] == 0.0
    assert z1[prog.layout.s_xi] <= 0.0


def test_zero_initialization_stays_at_rest():
    tree, sys, prog = two_target()
    z = initialize(prog, sys, DEFAULT_X0, mode="zero")
    np.testing.assert_array_equal(prog.layout.inputs(z), 0.0)
    np.testing.assert_array_equal(prog.layout.states(z), np.tile(DEFAULT_X0, (13, 1)))


def test_first_subproblem_is_feasible_for_any_seed():
    tree, sys, prog = two_target()
    for seed in range(100):
        z_hat = initialize(prog, sys, DEFAULT_X0, seed=seed)
        sol = qp.solve_qp(linearize(prog, z_hat))
        assert sol.status == qp.OPTIMAL, seed


def test_reach_target_scalar():
    tree, prog = scalar_problem("F[0,3](x0 >= 4)", 3)
    rep = run_ccp(prog, SCALAR, [0.0], CcpConfig(), seed=0)
    assert rep.status == CONVERGED
    # x3 can reach 6 at most, so the robustness is at most 2
    assert 1.9 <= rep.robustness <= 2.0 + 1e-9
    assert rep.robustness == pytest.approx(eval_original(tree, rep.trajectory))
    assert np.all(np.abs(rep.trajectory.u) <= 2.0 + 1e-7)


def test_contradiction_reports_qp_failure_with_finite_robustness():
    tree, prog = scalar_problem("G[0,2](x0 <= 0) & G[0,2](x0 >= 1)", 2)
    rep = run_ccp(prog, SCALAR, [0.0], CcpConfig(), seed=0)
    assert rep.status == QP_FAILURE and rep.qp_status == qp.INFEASIBLE
    assert np.isfinite(rep.robustness) and rep.robustness < 0
    assert rep.robustness == pytest.approx(eval_original(tree, rep.trajectory))


def test_unreachable_concave_part_leaves_positive_slack():
    tree, prog = scalar_problem("G[0,2](x0 <= 0) & F[0,2](x0 >= 1)", 2)
    assert prog.n_concave == 1
    rep = run_ccp(prog, SCALAR, [0.0], CcpConfig(), seed=0)
    assert rep.status == SLACK_POSITIVE
    assert rep.slack_sum > 1e-3 and rep.robustness < 0


def test_iterates_are_feasible_for_the_exact_rows():
    tree, sys, prog = two_target()
    for seed in range(3):
        rep = run_ccp(prog, sys, DEFAULT_X0, CcpConfig(keep_iterates=True), seed)
        assert rep.iterates
        for z, v in rep.iterates:
            assert check_feasible(prog, z, tol=1e-6, slack=v).feasible


def test_objective_never_increases():
    tree, sys, prog = two_target(25, 5)
    for seed in range(4):
        rep = run_ccp(prog, sys, DEFAULT_X0, CcpConfig(), seed)
        assert np.all(np.diff(rep.objective) <= 1e-9), rep.objective


def test_smoothing_margin_certifies_satisfaction():
    tree, sys, prog = two_target(25, 5)
    gap = smoothing_gap_bound(tree, prog.k)
    rep = solve_ccp(tree, sys, DEFAULT_X0, 25, CcpConfig(restarts=1), prog=prog)
    assert rep.status == CONVERGED
    # reversed <= smoothed + gap <= s_xi + gap
    assert eval_reversed(tree, rep.trajectory) <= rep.s_xi + gap + 1e-8
    if rep.s_xi + gap < 0:
        assert rep.satisfied


def test_solve_is_deterministic_and_keeps_the_best_attempt():
    tree, sys, prog = two_target()
    cfg = CcpConfig(restarts=3, rng_seed=4)
    a = solve_ccp(tree, sys, DEFAULT_X0, 12, cfg, prog=prog)
    b = solve_ccp(tree, sys, DEFAULT_X0, 12, cfg, prog=prog)
    assert a.to_dict(include_wallclock=False) == b.to_dict(include_wallclock=False)
    assert [t["seed"] for t in a.attempts] == [4, 5, 6]
    assert a.robustness == max(t["robustness"] for t in a.attempts)
    assert "seconds" not in a.to_dict(include_wallclock=False)


@pytest.mark.parametrize(
    "kw",
    [
        {"penalty_weight": 0.0},
        {"quad_weight": -1.0},
        {"k": 0.0},
        {"init": "warm"},
        {"restarts": 0},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CcpConfig(**kw)


def test_weight_matrices_are_validated():
    with pytest.raises(ValueError):
        CcpConfig(Q=-np.eye(4)).weights(4, 2)
    with pytest.raises(ValueError):
        CcpConfig(R=np.eye(3)).weights(4, 2)
    Q, R = CcpConfig().weights(4, 2)
    np.testing.assert_array_equal(np.diag(Q), [0, 0, 1, 1])
    np.testing.assert_array_equal(R, np.eye(2))
