import pytest

from magail_lab.exact_solvers import nash_check
from magail_lab.game_core import validate_game
from magail_lab.theory import (SUITES, _instance, _rng, corrupt, run_suites, team_version,
                               tstep_instances)


def test_default_suites_pass():
    rows = run_suites(list(SUITES), seed=0, budget=6)
    assert all(r.passed for r in rows if r.gating)
    assert len({r.name for r in rows}) == len(rows)


def test_corruption_is_detected():
    g = _instance(_rng(0, "validation", 0))
    bad = corrupt(g)
    assert validate_game(g).ok and not validate_game(bad).ok
    (row,) = run_suites(["validation"], budget=3, corrupted=True)
    assert not row.passed and row.value == 1 and row.instance == 0


def test_tstep_instances_mix_nash_and_non_nash():
    verdicts = [nash_check(g, pi, 1e-6).is_nash for g, pi in tstep_instances(0, 10)]
    assert sum(verdicts) >= 3 and len(verdicts) - sum(verdicts) >= 3


def test_team_version_shares_agent_zero_reward():
    g = team_version(_instance(_rng(1, "x", 0), max_agents=3))
    assert (g.rewards == g.rewards[0]).all()


def test_error_increases_row_never_gates():
    rows = run_suites(["dual"], budget=3)
    assert [r.gating for r in rows] == [True, False, True]


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suites(["bogus"])
