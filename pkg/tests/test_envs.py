import itertools

import numpy as np
import pytest

from magail_lab.envs import (REGISTRY, EnvBudgetExceeded, GridSpec, build_coop_comm,
                             build_coop_nav, build_env, build_keep_away, build_predator_prey)
from magail_lab.game_core import encode_joint, validate_game


@pytest.fixture(scope="module")
def predator_prey():
    return build_predator_prey()


def next_state(g, s, joint):
    row = g.transition[s * g.num_joint + joint]
    assert row.nnz == 1
    return int(row.indices[0])


@pytest.mark.parametrize("tag,states,joint", [("coop_comm", 36, 9), ("coop_nav", 540, 25),
                                              ("keep_away", 50, 9)])
def test_sizes_and_validity(tag, states, joint):
    g, obs = build_env(tag)
    assert (g.num_states, g.num_joint) == (states, joint)
    assert validate_game(g).ok
    assert all(len(m) == states for m in obs.maps)


def test_predator_prey_size_and_rewards(predator_prey):
    g, _ = predator_prey
    assert (g.num_states, g.num_joint, g.num_agents) == (729, 125, 3)
    assert validate_game(g).ok
    np.testing.assert_array_equal(g.rewards[2], -g.rewards[0])
    np.testing.assert_array_equal(g.rewards[0], g.rewards[1])
    # no episode starts with a touch
    touching = g.rewards[0][:, 0] > 0
    assert g.initial_dist[touching].sum() == 0


def test_predator_move_probability():
    g, _ = build_predator_prey(GridSpec(width=3, height=1, num_agents=2, move_prob=0.5))
    # predator at cell 0 moving right, prey at cell 2 staying
    s = 0 * 3 + 2
    row = g.transition[s * g.num_joint + encode_joint((5, 5), [4, 0])]
    np.testing.assert_allclose(sorted(row.data), [0.5, 0.5])
    sure, _ = build_predator_prey(GridSpec(width=3, height=1, num_agents=2, move_prob=1.0))
    assert sure.transition[s * sure.num_joint + encode_joint((5, 5), [4, 0])].nnz == 1


def test_coop_comm_rewards_and_observations():
    g, obs = build_coop_comm()
    C = 3
    states = list(itertools.product(range(3), range(C), range(C + 1)))
    for k, (cell, goal, msg) in enumerate(states):
        truthful = g.rewards[0, k, encode_joint((C, 3), [goal, 1])]
        liar = g.rewards[0, k, encode_joint((C, 3), [(goal + 1) % C, 1])]
        assert truthful - liar == pytest.approx(0.1)
        assert truthful == (1.0 if cell == [0, 1, 2][goal] else 0.0)
        assert obs.maps[0][k] == goal
        # the sent symbol becomes the listener's observation
        nxt = states[next_state(g, k, encode_joint((C, 3), [2, 1]))]
        assert nxt == (cell, goal, 2)
    np.testing.assert_array_equal(g.rewards[0], g.rewards[1])
    # listener observations never reveal the goal
    by_obs = {}
    for k, (cell, goal, msg) in enumerate(states):
        by_obs.setdefault(obs.maps[1][k], set()).add((cell, msg))
    assert all(len(v) == 1 for v in by_obs.values())
    assert len(by_obs) == 12
    assert g.initial_dist[[k for k, s in enumerate(states) if s[2] != C]].sum() == 0


def test_coop_nav_reward_example():
    spec = GridSpec(width=3, height=1, num_agents=2, num_landmarks=1, randomized_layout=False,
                    seed=0, collision_penalty=2.0)
    g, _ = build_coop_nav(spec)
    assert g.num_states == 9
    cells = [(0, 0), (1, 0), (2, 0)]
    pairs = list(itertools.product(cells, repeat=2))

    def expected(landmark):
        return [-min(abs(p[0] - landmark[0]) for p in pos) - 2.0 * (pos[0] == pos[1])
                for pos in pairs]
    # the drawn layout is one of the three cells and the reward matches it everywhere
    assert any(np.allclose(g.rewards[0][:, 0], expected(c)) for c in cells)
    assert validate_game(g).ok
    np.testing.assert_array_equal(g.rewards[0], g.rewards[1])


def test_coop_nav_layout_in_state():
    g, _ = build_env("coop_nav")
    assert g.num_states == 36 * 15
    np.testing.assert_allclose(g.initial_dist, 1 / 540)
    fixed, _ = build_env("coop_nav", {"randomized_layout": False})
    assert fixed.num_states == 36


def test_keep_away_zero_sum_and_push():
    g, obs = build_keep_away()
    np.testing.assert_array_equal(g.rewards[0] + g.rewards[1], 0.0)
    states = list(itertools.product(range(5), range(5), range(2)))
    # agent one at 2 heading to target 4 collides with adversary stepping onto 3
    s = states.index((2, 4, 1))
    nxt = states[next_state(g, s, encode_joint((3, 3), [2, 0]))]
    assert nxt == (2, 3, 1)
    # adversary observation ignores the target
    for p1, p2 in itertools.product(range(5), repeat=2):
        assert obs.maps[1][states.index((p1, p2, 0))] == obs.maps[1][states.index((p1, p2, 1))]
    assert g.rewards[0, states.index((4, 0, 1)), 0] == 1.0
    assert g.rewards[0, states.index((2, 0, 1)), 0] == pytest.approx(-0.5)


def test_builds_are_deterministic():
    a, _ = build_env("coop_nav", {"randomized_layout": False, "seed": 3})
    b, _ = build_env("coop_nav", {"randomized_layout": False, "seed": 3})
    assert (a.transition != b.transition).nnz == 0
    np.testing.assert_array_equal(a.rewards, b.rewards)


def test_budget_and_spec_errors():
    with pytest.raises(EnvBudgetExceeded):
        build_env("coop_nav", {"width": 5, "height": 5, "num_agents": 3, "num_landmarks": 3})
    with pytest.raises(KeyError):
        build_env("nope")
    with pytest.raises(ValueError):
        build_env("keep_away", {"colour": 1})
    with pytest.raises(ValueError):
        GridSpec(discount=1.0)
    spec = GridSpec(width=4, obstacles=[[1, 0]])
    assert GridSpec.from_json('{"width": 4, "obstacles": [[1, 0]]}') == spec
    assert GridSpec.from_dict(spec.to_dict()) == spec


def test_registry_kinds():
    assert {k: e.kind for k, e in REGISTRY.items()} == {
        "coop_comm": "team", "coop_nav": "team", "keep_away": "zero_sum",
        "predator_prey": "general"}
