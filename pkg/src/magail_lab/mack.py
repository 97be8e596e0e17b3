"""Tabular multi-agent actor-critic with centralized baselines and natural gradients.

Each agent has softmax logits over its own observations and a baseline table
V_i(s, a_{-i}) indexed by the state and the other agents' joint action.
Advantages are k-step returns bootstrapped from the baseline; the policy step
preconditions the per-row gradient with the exact categorical Fisher.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .game_core import (GameDynamics, JointPolicy, MarkovGame, ObservationMap, RngConfig,
                        Rollouts, sample_rollouts)

RewardFn = Callable[[Rollouts], np.ndarray]  # -> (N, B, H)


@dataclass
class MackConfig:
    k: int = 5
    lr_policy: float = 0.5
    lr_baseline: float = 0.5
    lr_decay: bool = True
    batch_size: int = 16
    horizon: int = 50
    iterations: int = 100
    entropy_coef: float = 0.0
    fisher_damping: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lr_policy < 0 or self.lr_baseline < 0:
            raise ValueError("learning rates must be non-negative")

    def lr_scale(self, it: int) -> float:
        return 1.0 - it / self.iterations if self.lr_decay and self.iterations else 1.0

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Parameters


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logits_from_policy(table: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    lg = np.log(np.maximum(table, floor))
    return lg - lg.mean(axis=1, keepdims=True)


@dataclass
class PolicyParams:
    logits: list  # per agent (O_i, A_i)
    observations: ObservationMap

    @classmethod
    def from_policy(cls, pi: JointPolicy) -> "PolicyParams":
        return cls([logits_from_policy(t) for t in pi.tables], pi.observations)

    @classmethod
    def uniform(cls, action_counts, observations: ObservationMap) -> "PolicyParams":
        return cls([np.zeros((c, a)) for a, c in zip(action_counts, observations.counts)],
                   observations)

    def policy(self) -> JointPolicy:
        return JointPolicy.from_tables([softmax_rows(l) for l in self.logits], self.observations)

    def copy(self) -> "PolicyParams":
        return PolicyParams([l.copy() for l in self.logits], self.observations)


def others_index(action_counts, actions: np.ndarray, i: int) -> np.ndarray:
    """Mixed-radix index of a_{-i} for an (..., N) action array."""
    counts = [c for k, c in enumerate(action_counts) if k != i]
    if not counts:
        return np.zeros(actions.shape[:-1], dtype=np.int64)
    rest = np.delete(actions, i, axis=-1)
    return np.ravel_multi_index(tuple(np.moveaxis(rest, -1, 0)), tuple(counts))


def init_baselines(g: GameDynamics) -> list:
    J = g.num_joint
    return [np.zeros((g.num_states, J // a)) for a in g.action_counts]


# ---------------------------------------------------------------------------
# Advantages and baselines


def compute_advantages(rewards: np.ndarray, states: np.ndarray, others: np.ndarray,
                       V: np.ndarray, k: int, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """k-step targets and advantages for one agent.

    rewards (B, H); states (B, H + 1) including the state after the last step;
    others (B, H) the a_{-i} index at each step.  Near the end of an episode the
    window shrinks to the remaining steps and bootstraps from the final state.
    The baseline is indexed with a_{-i} at time t in both terms.
    """
    B, H = rewards.shape
    if k > H:
        raise ValueError(f"k={k} exceeds trajectory length {H}")
    t = np.arange(H)
    steps = np.minimum(k, H - t)  # (H,)
    disc = gamma ** np.arange(k)
    target = np.zeros((B, H))
    for j in range(k):
        valid = j < steps
        idx = np.minimum(t + j, H - 1)
        target += np.where(valid, disc[j] * rewards[:, idx], 0.0)
    boot_states = states[:, t + steps]
    target += (gamma**steps)[None] * V[boot_states, others]
    adv = target - V[states[:, :H], others]
    return target, adv


def update_baselines(V: np.ndarray, states: np.ndarray, others: np.ndarray,
                     targets: np.ndarray, lr: float) -> tuple[np.ndarray, float]:
    """Move each visited (s, a_{-i}) cell toward its mean target by ``lr``.

    Returns the new table and the mean squared error against the targets after the step.
    """
    V = V.copy()
    cells = states.ravel() * V.shape[1] + others.ravel()
    tg = targets.ravel()
    sums = np.bincount(cells, weights=tg, minlength=V.size)
    counts = np.bincount(cells, minlength=V.size)
    seen = counts > 0
    flat = V.reshape(-1)
    flat[seen] += lr * (sums[seen] / counts[seen] - flat[seen])
    mse = float(np.mean((flat[cells] - tg) ** 2)) if tg.size else 0.0
    return V, mse


# ---------------------------------------------------------------------------
# Policy step


def surrogate(logits: np.ndarray, obs: np.ndarray, actions: np.ndarray, adv: np.ndarray) -> float:
    """Mean of log pi(a | o) * A over the batch."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(np.mean(logp[obs.ravel(), actions.ravel()] * adv.ravel()))


def surrogate_gradient(logits: np.ndarray, obs: np.ndarray, actions: np.ndarray,
                       adv: np.ndarray) -> np.ndarray:
    p = softmax_rows(logits)
    o, a, A = obs.ravel(), actions.ravel(), adv.ravel()
    n = max(len(o), 1)
    grad = np.zeros_like(logits)
    np.add.at(grad, (o, a), A)
    weight = np.bincount(o, weights=A, minlength=logits.shape[0])
    grad -= weight[:, None] * p
    return grad / n


def natural_policy_step(logits: np.ndarray, obs: np.ndarray, actions: np.ndarray,
                        adv: np.ndarray, lr: float, damping: float = 1e-3) -> np.ndarray:
    """One preconditioned ascent step on the surrogate; logits re-centred per row."""
    g = surrogate_gradient(logits, obs, actions, adv)
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite policy gradient")
    p = softmax_rows(logits)
    A = logits.shape[1]
    F = -p[:, :, None] * p[:, None, :]
    F[:, np.arange(A), np.arange(A)] += p
    F += damping * np.eye(A)[None]
    step = np.linalg.solve(F, g[:, :, None])[..., 0]
    out = logits + lr * step
    return out - out.mean(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Training


def true_rewards(g: MarkovGame) -> RewardFn:
    def fn(r: Rollouts) -> np.ndarray:
        return g.rewards[:, r.states[:, :-1], r.joint]
    return fn


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-agent mean over episodes of sum_t gamma^t r_t; rewards (N, B, H)."""
    disc = gamma ** np.arange(rewards.shape[-1])
    return (rewards * disc).sum(axis=-1).mean(axis=-1)


@dataclass
class MackTrainer:
    """Mutable training state shared by forward RL and the adversarial loop."""

    dynamics: GameDynamics
    params: PolicyParams
    config: MackConfig
    trainable: tuple = None
    baselines: list = field(default=None)

    def __post_init__(self):
        if self.trainable is None:
            self.trainable = tuple(range(self.dynamics.num_agents))
        if self.baselines is None:
            self.baselines = init_baselines(self.dynamics)

    def step(self, r: Rollouts, rewards: np.ndarray, it: int) -> list[dict]:
        cfg, g = self.config, self.dynamics
        scale = cfg.lr_scale(it)
        rows = []
        returns = discounted_returns(rewards, g.discount)
        for i in self.trainable:
            table, omap = self.params.logits[i], self.params.observations.maps[i]
            rew = rewards[i]
            obs = omap[r.states[:, :-1]]
            if cfg.entropy_coef:
                logp = np.log(softmax_rows(table))[obs, r.actions[..., i]]
                rew = rew - cfg.entropy_coef * logp
            oth = others_index(g.action_counts, r.actions, i)
            targets, _ = compute_advantages(rew, r.states, oth, self.baselines[i], cfg.k,
                                            g.discount)
            self.baselines[i], mse = update_baselines(self.baselines[i], r.states[:, :-1], oth,
                                                      targets, cfg.lr_baseline * scale)
            _, adv = compute_advantages(rew, r.states, oth, self.baselines[i], cfg.k, g.discount)
            sur = surrogate(table, obs, r.actions[..., i], adv)
            self.params.logits[i] = natural_policy_step(table, obs, r.actions[..., i], adv,
                                                        cfg.lr_policy * scale, cfg.fisher_damping)
            rows.append({"iter": it, "agent": i, "mean_return": float(returns[i]),
                         "surrogate": sur, "baseline_mse": mse, "lr": cfg.lr_policy * scale})
        return rows


def train_mack(g: GameDynamics, reward_fn: RewardFn | None, config: MackConfig,
               init: PolicyParams | None = None, observations: ObservationMap | None = None
               ) -> tuple[JointPolicy, list[dict]]:
    """Forward multi-agent RL; ``reward_fn`` defaults to the game's true rewards."""
    if reward_fn is None:
        if not isinstance(g, MarkovGame):
            raise ValueError("a reward source is required for reward-free dynamics")
        reward_fn = true_rewards(g)
    if init is None:
        obs = observations or ObservationMap.identity(g.num_agents, g.num_states)
        init = PolicyParams.uniform(g.action_counts, obs)
    trainer = MackTrainer(g, init.copy(), config)
    rng = RngConfig(config.seed, "mack")
    log = []
    for it in range(config.iterations):
        r = sample_rollouts(g, trainer.params.policy(), config.batch_size, config.horizon,
                            rng.child(f"iter{it}"))
        log.extend(trainer.step(r, reward_fn(r), it))
    return trainer.params.policy(), log


LOG_COLUMNS = ("iter", "agent", "mean_return", "surrogate", "baseline_mse", "lr")
