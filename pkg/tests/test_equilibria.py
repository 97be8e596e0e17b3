import numpy as np
import pytest
from scipy.optimize import linprog

from magail_lab.equilibria import (MatrixGameNotConverged, SolverError, solve_matrix_game,
                                   solve_team_vi, solve_zero_sum_shapley)
from magail_lab.exact_solvers import nash_check
from magail_lab.game_core import make_game, random_game
from magail_lab.theory import team_version

from conftest import matching_pennies, one_state_team
from oracles import exploitability


def lp_value(U):
    """Row player's maximin value by linear programming."""
    m, n = U.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-U.T, np.ones((n, 1))])
    A_eq = np.zeros((1, m + 1))
    A_eq[0, :m] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, 1)] * m + [(None, None)], method="highs")
    return res.x[-1]


def random_zero_sum(rng, S=3, A=(2, 3), discount=0.8):
    g = random_game(rng, 2, S, A, discount)
    R = np.stack([g.rewards[0], -g.rewards[0]])
    return make_game(g.transition, R, g.initial_dist, discount, A)


def test_team_vi_is_nash_and_monotone(rng):
    for _ in range(5):
        g = team_version(random_game(rng, 2, 4, (2, 3)))
        pi, rep = solve_team_vi(g, tol=1e-10)
        assert rep.converged
        assert nash_check(g, pi, 1e-8).is_nash
        assert all(b >= a - 1e-12 for a, b in zip(rep.history, rep.history[1:]))
        assert all(set(np.unique(t)) <= {0.0, 1.0} for t in pi.tables)


def test_team_vi_picks_the_better_coordination():
    pi, _ = solve_team_vi(one_state_team())
    assert pi.tables[0][0].tolist() == [0.0, 1.0] and pi.tables[1][0].tolist() == [0.0, 1.0]


def test_team_vi_refuses_general_sum(rng):
    with pytest.raises(SolverError, match="differ at"):
        solve_team_vi(random_game(rng, 2, 2, (2, 2)))


def test_matrix_game_against_lp_oracle(rng):
    for _ in range(10):
        U = rng.normal(size=(int(rng.integers(2, 5)), int(rng.integers(2, 5))))
        x, y, value, rep = solve_matrix_game(U, tol=1e-8)
        assert exploitability(U, x, y) <= 1e-8
        assert value == pytest.approx(lp_value(U), abs=1e-7)


def test_matrix_game_budget_failure_carries_best_pair():
    U = np.array([[3.0, -1.0, 0.2], [-2.0, 1.0, 0.5], [0.1, 0.3, -0.4]])
    with pytest.raises(MatrixGameNotConverged) as e:
        solve_matrix_game(U, tol=1e-14, max_iters=10, polish_every=0)
    assert e.value.row.sum() == pytest.approx(1.0) and e.value.exploitability > 1e-14


def test_shapley_on_pennies():
    pi, rep = solve_zero_sum_shapley(matching_pennies(0.9), tol=1e-6)
    np.testing.assert_allclose(pi.tables[0][0], [0.5, 0.5], atol=1e-3)
    np.testing.assert_allclose(pi.tables[1][0], [0.5, 0.5], atol=1e-3)
    assert nash_check(matching_pennies(0.9), pi, 1e-6).is_nash


def test_shapley_certified_on_random_zero_sum(rng):
    for _ in range(3):
        g = random_zero_sum(rng)
        pi, rep = solve_zero_sum_shapley(g, tol=1e-5)
        assert nash_check(g, pi, 1e-5).is_nash


def test_shapley_refuses_non_zero_sum(rng):
    with pytest.raises(SolverError):
        solve_zero_sum_shapley(random_game(rng, 2, 2, (2, 2)))
    with pytest.raises(SolverError):
        solve_zero_sum_shapley(random_game(rng, 3, 2, (2, 2, 2)))
