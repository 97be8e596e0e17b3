import numpy as np
import pytest

from magail_lab.discriminators import (EPS_D, DiscBatch, Prior, PriorVariant,
                                       decode_discriminator, disc_forward, disc_gradient,
                                       disc_objective, disc_scores, disc_update,
                                       encode_discriminator, init_discriminator, policy_reward,
                                       zero_sum_disc_update)
from magail_lab.game_core import ObservationMap, random_game

from conftest import matching_pennies

CENTRAL = PriorVariant(Prior.CENTRALIZED)
ZERO_SUM = PriorVariant(Prior.ZERO_SUM)


def small_game(rng):
    return random_game(rng, 2, 4, (2, 3))


def decentral(g):
    return PriorVariant(Prior.DECENTRALIZED, ObservationMap.from_arrays([[0, 0, 1, 1],
                                                                         [0, 1, 2, 3]]))


def random_batch(rng, g, n=40, m=40):
    def side(k):
        return (rng.integers(g.num_states, size=k),
                np.stack([rng.integers(a, size=k) for a in g.action_counts], axis=1))
    return DiscBatch(*side(n), *side(m))


def count_ratio(cells_p, cells_e, shape):
    p = np.bincount(cells_p, minlength=np.prod(shape)).reshape(shape) / len(cells_p)
    e = np.bincount(cells_e, minlength=np.prod(shape)).reshape(shape) / len(cells_e)
    seen = (p + e) > 0
    return np.where(seen, p / np.where(seen, p + e, 1), np.nan)


def test_forward_examples(rng):
    g = small_game(rng)
    w = init_discriminator(g, CENTRAL)
    np.testing.assert_allclose(disc_forward(w, CENTRAL, 1, (1, 2)), [0.5, 0.5])
    w.weights[0][1, 5] = 50.0
    assert disc_forward(w, CENTRAL, 1, (1, 2))[0] == pytest.approx(1 - EPS_D)
    with pytest.raises(IndexError):
        disc_forward(w, CENTRAL, 1, (2, 0))


def test_decentralized_scores_ignore_other_agents(rng):
    g = small_game(rng)
    var = decentral(g)
    w = init_discriminator(g, var)
    w.weights = [rng.normal(size=t.shape) for t in w.weights]
    for s in range(4):
        for a0 in range(2):
            col = [disc_forward(w, var, s, (a0, a1))[0] for a1 in range(3)]
            assert np.ptp(col) == 0.0


def test_centralized_reward_shared_and_positive(rng):
    g = small_game(rng)
    w = init_discriminator(g, CENTRAL)
    w.weights = [rng.normal(size=w.weights[0].shape)]
    b = random_batch(rng, g)
    r = policy_reward(w, CENTRAL, b.states, b.actions)
    np.testing.assert_array_equal(r[0], r[1])
    assert (r > 0).all()
    w0 = init_discriminator(g, CENTRAL)
    np.testing.assert_allclose(policy_reward(w0, CENTRAL, b.states, b.actions), np.log(2))


def test_identical_sides_give_half(rng):
    g = small_game(rng)
    b = random_batch(rng, g)
    same = DiscBatch(b.states, b.actions, b.states, b.actions)
    w, obj = disc_update(init_discriminator(g, CENTRAL), CENTRAL, same, steps=20)
    assert obj[0] == pytest.approx(2 * np.log(0.5), abs=1e-9)
    np.testing.assert_allclose(disc_scores(w, CENTRAL, b.states, b.actions), 0.5, atol=1e-9)


def test_disjoint_sides_separate(rng):
    g = small_game(rng)
    acts = np.zeros((10, 2), dtype=int)
    b = DiscBatch(np.zeros(10, int), acts, np.ones(10, int), acts)
    _, obj = disc_update(init_discriminator(g, CENTRAL), CENTRAL, b, steps=40)
    assert -1e-4 < obj[0] < 0


@pytest.mark.parametrize("prior", ["centralized", "decentralized"])
def test_converges_to_count_ratio(rng, prior):
    g = small_game(rng)
    var = CENTRAL if prior == "centralized" else decentral(g)
    for _ in range(10):
        b = random_batch(rng, g, n=30, m=50)
        w, _ = disc_update(init_discriminator(g, var), var, b, steps=60)
        for k, table in enumerate(w.weights):
            if var.kind is Prior.CENTRALIZED:
                cp = b.states * 6 + b.actions[:, 0] * 3 + b.actions[:, 1]
                ce = b.expert_states * 6 + b.expert_actions[:, 0] * 3 + b.expert_actions[:, 1]
            else:
                omap = var.observations.maps[k]
                A = g.action_counts[k]
                cp = omap[b.states] * A + b.actions[:, k]
                ce = omap[b.expert_states] * A + b.expert_actions[:, k]
            target = count_ratio(cp, ce, table.shape)
            D = np.clip(1 / (1 + np.exp(-table)), EPS_D, 1 - EPS_D)
            seen = ~np.isnan(target)
            assert np.abs(D[seen] - target[seen]).max() <= 1e-3


def test_objective_non_decreasing(rng):
    g = small_game(rng)
    b = random_batch(rng, g)
    w = init_discriminator(g, CENTRAL)
    prev = disc_objective(w, CENTRAL, b)[0]
    for _ in range(10):
        w, obj = disc_update(w, CENTRAL, b, lr=0.5)
        assert obj[0] >= prev - 1e-12
        prev = obj[0]


def test_gradient_matches_finite_differences(rng):
    g = small_game(rng)
    for var in (CENTRAL, decentral(g)):
        for _ in range(5):
            b = random_batch(rng, g)
            w = init_discriminator(g, var)
            w.weights = [rng.normal(size=t.shape) for t in w.weights]
            grads = disc_gradient(w, var, b)
            for k, table in enumerate(w.weights):
                fd = np.zeros_like(table)
                for idx in np.ndindex(table.shape):
                    orig = table[idx]
                    table[idx] = orig + 1e-6
                    up = disc_objective(w, var, b)[k]
                    table[idx] = orig - 1e-6
                    dn = disc_objective(w, var, b)[k]
                    table[idx] = orig
                    fd[idx] = (up - dn) / 2e-6
                assert np.linalg.norm(grads[k] - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_empty_batch_side_is_rejected(rng):
    g = small_game(rng)
    b = random_batch(rng, g)
    empty = DiscBatch(b.states[:0], b.actions[:0], b.expert_states, b.expert_actions)
    with pytest.raises(ValueError):
        disc_update(init_discriminator(g, CENTRAL), CENTRAL, empty)


def test_zero_sum_rewards_cancel(rng):
    g = matching_pennies()
    w = init_discriminator(g, ZERO_SUM)
    w.weights = [rng.normal(size=(1, 4))]
    states, actions = np.zeros(4, int), np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    r = policy_reward(w, ZERO_SUM, states, actions)
    np.testing.assert_array_equal(r[0] + r[1], 0.0)
    np.testing.assert_array_equal(r[0], w.weights[0][0])


def test_zero_sum_update_direction():
    g = matching_pennies()
    w = init_discriminator(g, ZERO_SUM)
    a = (np.zeros(5, int), np.tile([0, 1], (5, 1)))
    b = (np.zeros(5, int), np.tile([1, 1], (5, 1)))
    same, _ = zero_sum_disc_update(w, a, a)
    np.testing.assert_allclose(same.weights[0], 0.0, atol=1e-12)
    new, obj = zero_sum_disc_update(w, a, b, lr=0.5, steps=3)
    assert new.weights[0][0, 1] > 0 > new.weights[0][0, 3]
    assert obj > 0
    with pytest.raises(ValueError):
        zero_sum_disc_update(w, a, (b[0][:0], b[1][:0]))


def test_zero_sum_requires_two_agents(rng):
    with pytest.raises(ValueError):
        init_discriminator(random_game(rng, 3, 2, (2, 2, 2)), ZERO_SUM)


def test_checkpoint_roundtrip(rng):
    g = small_game(rng)
    var = decentral(g)
    w = init_discriminator(g, var)
    w.weights = [rng.normal(size=t.shape) for t in w.weights]
    text = encode_discriminator(w, var)
    assert text.splitlines()[1].count(" ") == 3
    back = decode_discriminator(text, init_discriminator(g, var))
    for a, b in zip(w.weights, back.weights):
        np.testing.assert_allclose(a, b, rtol=1e-11)
