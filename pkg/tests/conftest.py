import numpy as np
import pytest

from magail_lab.game_core import make_game


def matching_pennies(discount=0.5):
    """One-state zero-sum game; row wins on a match."""
    U = np.array([[1.0, -1.0], [-1.0, 1.0]])
    R = np.stack([U.ravel(), -U.ravel()])[:, None, :]
    T = np.ones((1, 4, 1))
    return make_game(T, R, [1.0], discount, (2, 2), game_id="pennies")


def one_state_team(discount=0.5):
    """One-state coordination game: both agents earn 1 only when they pick (1, 1)."""
    R = np.zeros((2, 1, 4))
    R[:, 0, 3] = 1.0
    R[:, 0, 0] = 0.5
    T = np.ones((1, 4, 1))
    return make_game(T, R, [1.0], discount, (2, 2), game_id="team1")


def chain_mdp(discount=0.9):
    """Deterministic 3-state single-agent chain: action 1 moves right, reward at the end."""
    S, A = 3, 2
    T = np.zeros((S, A, S))
    for s in range(S):
        T[s, 0, max(s - 1, 0)] = 1.0
        T[s, 1, min(s + 1, S - 1)] = 1.0
    R = np.zeros((1, S, A))
    R[0, S - 1, :] = 1.0
    return make_game(T, R, [1.0, 0.0, 0.0], discount, (2,), game_id="chain")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: int(k[1:])):
            terminalreporter.write_line(results[key])
