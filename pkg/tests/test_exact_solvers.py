import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magail_lab.exact_solvers import (BudgetExceeded, bellman_values, build_dual_weights,
                                      causal_entropy, dual_value, dual_value_enumerated,
                                      expected_returns, finite_horizon_returns, mixed_gap,
                                      nash_check, nash_residual, occupancy_measure, prefix_count,
                                      psi_star_ga, psi_star_ga_numeric, q_values, tstep_nash_check,
                                      tstep_q)
from magail_lab.game_core import JointPolicy, random_game, random_policy

from conftest import chain_mdp, matching_pennies, one_state_team
from oracles import conditional_tstep, occupancy_by_series, policy_values_by_iteration


def frozen_instance():
    rng = np.random.default_rng(2024)
    g = random_game(rng, 2, 3, (2, 3))
    return g, random_policy(rng, (2, 3), 3)


# values produced by the brute-force oracle in tests/oracles.py
FROZEN_VALUES = np.array([[-2.17538008, -2.43985198, -2.34757057],
                          [-1.28504691, -0.90890917, -1.28410426]])
FROZEN_TSTEP = [((0, 2, 1), (1, 0, 1), 0, -1.815355258291686),
                ((2, 2), (2, 1), 1, -0.3832080341349653)]


def test_values_match_frozen_oracle():
    g, pi = frozen_instance()
    np.testing.assert_allclose(bellman_values(g, pi), FROZEN_VALUES, atol=1e-8)


@pytest.mark.parametrize("states,actions,agent,expected", FROZEN_TSTEP)
def test_conditional_tstep_matches_frozen_oracle(states, actions, agent, expected):
    g, pi = frozen_instance()
    assert tstep_q(g, pi, states, actions, agent).value == pytest.approx(expected, abs=1e-12)


def test_values_match_iterative_oracle(rng):
    for _ in range(3):
        g = random_game(rng, 3, 3, (2, 2, 3))
        pi = random_policy(rng, (2, 2, 3), 3)
        np.testing.assert_allclose(bellman_values(g, pi), policy_values_by_iteration(g, pi),
                                   atol=1e-9)


def test_chain_values_closed_form():
    g = chain_mdp()
    pi = JointPolicy.from_tables([[[0.0, 1.0]] * 3])
    np.testing.assert_allclose(bellman_values(g, pi)[0], [8.1, 9.0, 10.0], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_residual_vanishes_for_every_policy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    counts = tuple(int(a) for a in rng.integers(1, 4, size=n))
    g = random_game(rng, n, int(rng.integers(1, 6)), counts)
    pi = random_policy(rng, counts, g.num_states)
    assert abs(nash_residual(g, pi)) <= 1e-8


def test_q_values_average_to_values(rng):
    g = random_game(rng, 2, 4, (3, 2))
    pi = random_policy(rng, (3, 2), 4)
    v = bellman_values(g, pi)
    for i, q in enumerate(q_values(g, pi, v)):
        np.testing.assert_allclose((pi.state_probs(i) * q).sum(axis=1), v[i], atol=1e-10)


def test_nash_check_on_pennies():
    g = matching_pennies()
    uniform = JointPolicy.from_tables([[[0.5, 0.5]], [[0.5, 0.5]]])
    assert nash_check(g, uniform).is_nash
    biased = JointPolicy.from_tables([[[1.0, 0.0]], [[0.5, 0.5]]])
    report = nash_check(g, biased)
    assert not report.is_nash and report.witness[0] == 1
    assert report.max_violation == pytest.approx(1.0)  # one-step deviation earns 1, then v = 0


def test_team_coordination_equilibria():
    g = one_state_team()
    good = JointPolicy.from_tables([[[0.0, 1.0]], [[0.0, 1.0]]])
    poor = JointPolicy.from_tables([[[1.0, 0.0]], [[1.0, 0.0]]])
    mixed = JointPolicy.from_tables([[[1.0, 0.0]], [[0.0, 1.0]]])
    assert nash_check(g, good).is_nash and nash_check(g, poor).is_nash
    assert not nash_check(g, mixed).is_nash


def test_one_step_constraint_equals_q(rng):
    g = random_game(rng, 2, 3, (2, 2))
    pi = random_policy(rng, (2, 2), 3)
    q = q_values(g, pi, bellman_values(g, pi))
    for sem in ("conditional", "intervention"):
        assert tstep_q(g, pi, [1], [0], 1, sem).value == pytest.approx(q[1][1, 0], abs=1e-12)


def test_conditional_matches_oracle_on_random_prefixes(rng):
    g = random_game(rng, 3, 3, (2, 2, 2))
    pi = random_policy(rng, (2, 2, 2), 3)
    for _ in range(5):
        states = rng.integers(3, size=3)
        actions = rng.integers(2, size=3)
        i = int(rng.integers(3))
        assert tstep_q(g, pi, states, actions, i).value == pytest.approx(
            conditional_tstep(g, pi, states, actions, i), abs=1e-9)


def test_zero_probability_prefix_is_flagged():
    g = chain_mdp()
    pi = JointPolicy.from_tables([[[0.5, 0.5]] * 3])
    out = tstep_q(g, pi, [0, 2], [1, 1], 0)
    assert out.zero_probability


def test_tstep_verdicts_agree_with_one_step(rng):
    for k in range(6):
        g = random_game(rng, 2, 3, (2, 2))
        if k % 2:
            pi = random_policy(rng, (2, 2), 3)
        else:
            g = matching_pennies(0.9) if k == 0 else g
            pi = JointPolicy.from_tables([np.full((g.num_states, 2), 0.5)] * 2)
        one = nash_check(g, pi, 1e-8).is_nash
        for t in (2, 3):
            assert tstep_nash_check(g, pi, t, 1e-8).is_nash == one


def test_tstep_budget_guard():
    g = matching_pennies()
    assert prefix_count(g, 3) == 2 * 2**3
    with pytest.raises(BudgetExceeded):
        tstep_nash_check(g, JointPolicy.from_tables([[[0.5, 0.5]]] * 2), 40)


def test_dual_recursion_matches_enumeration(rng):
    for _ in range(3):
        g = random_game(rng, 2, 3, (2, 3))
        ps, p = random_policy(rng, (2, 3), 3), random_policy(rng, (2, 3), 3)
        for t in (1, 2, 3):
            assert dual_value(g, ps, p, t) == pytest.approx(dual_value_enumerated(g, ps, p, t),
                                                            abs=1e-12)


def test_dual_weights_are_prefix_probabilities(rng):
    g = random_game(rng, 2, 3, (2, 2))
    ps, p = random_policy(rng, (2, 2), 3), random_policy(rng, (2, 2), 3)
    w = build_dual_weights(g, p, ps, 0, 3)
    assert w.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert w.states.shape == (len(w.weights), 3)


def test_dual_converges_to_mixed_gap_within_bound(rng):
    for _ in range(5):
        g = random_game(rng, 2, 3, (2, 2))
        ps, p = random_policy(rng, (2, 2), 3), random_policy(rng, (2, 2), 3)
        gap = mixed_gap(g, ps, p)
        for t in range(1, 9):
            bound = 2 * 2 * g.reward_bound * g.discount**t / (1 - g.discount)
            assert abs(dual_value(g, ps, p, t) - gap) <= bound
            assert abs(dual_value(g, ps, ps, t)) <= 1e-10
        assert dual_value(g, ps, p, 200) == pytest.approx(gap, abs=1e-7)


def test_dual_error_is_not_always_monotone():
    """The bound shrinks geometrically, yet the error itself may rise for a few steps."""
    from magail_lab.theory import _instance, _rng, dual_errors
    rng = _rng(0, "dual", 36)
    g = _instance(rng, max_states=4)
    ps = random_policy(rng, g.action_counts, g.num_states)
    p = random_policy(rng, g.action_counts, g.num_states)
    err = dual_errors(g, ps, p, range(1, 9))
    assert (np.diff(err) > 1e-4).any()
    bound = 2 * g.num_agents * g.reward_bound * g.discount ** np.arange(1, 9) / (1 - g.discount)
    assert (err <= bound).all()


def test_occupancy_mass_and_series_oracle(rng):
    g = random_game(rng, 2, 4, (2, 3), discount=0.8)
    pi = random_policy(rng, (2, 3), 4)
    rho = occupancy_measure(g, pi)
    assert rho.joint.sum() == pytest.approx(5.0, abs=1e-12)
    np.testing.assert_allclose(rho.joint, occupancy_by_series(g, pi), atol=1e-10)
    assert rho.agent_marginal(1).shape == (4, 3)
    np.testing.assert_allclose(expected_returns(g, pi), g.initial_dist @ bellman_values(g, pi).T,
                               atol=1e-10)


def test_finite_horizon_return_tends_to_infinite(rng):
    g = random_game(rng, 2, 3, (2, 2))
    pi = random_policy(rng, (2, 2), 3)
    np.testing.assert_allclose(finite_horizon_returns(g, pi, 400), expected_returns(g, pi),
                               atol=1e-10)


def test_entropy_of_uniform_one_state_policy():
    g = matching_pennies(0.5)
    pi = JointPolicy.from_tables([[[0.5, 0.5]], [[0.5, 0.5]]])
    assert causal_entropy(g, pi) == pytest.approx(2 * np.log(2) / 0.5)


def test_psi_star_closed_form(rng):
    a = rng.dirichlet(np.ones(6))
    assert psi_star_ga(a, a) == pytest.approx(-2 * np.log(2), abs=1e-12)
    for _ in range(5):
        a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        assert psi_star_ga(a, b) == pytest.approx(psi_star_ga_numeric(a, b), abs=1e-4)
        assert psi_star_ga(a, b) > -2 * np.log(2)
    # disjoint supports reach the maximum of zero
    assert psi_star_ga([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        psi_star_ga([1, 0], [0, 1, 0])
