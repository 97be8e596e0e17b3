"""Imitation from demonstrations: behavior cloning, adversarial imitation and evaluation.

Training functions accept only reward-free dynamics; true rewards enter through
an optional evaluator callback and are never read by the learning loop.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .discriminators import (DiscBatch, Prior, PriorVariant, disc_update, init_discriminator,
                             policy_reward, zero_sum_disc_update)
from .exact_solvers import expected_returns, finite_horizon_returns
from .game_core import (DemonstrationSet, GameDynamics, JointPolicy, MarkovGame, ObservationMap,
                        RngConfig, Rollouts, require_valid, sample_rollouts)
from .mack import MackConfig, MackTrainer, PolicyParams

Evaluator = Callable[[JointPolicy], tuple]  # -> (mean (N,), std (N,))


# ---------------------------------------------------------------------------
# Behavior cloning


def behavior_cloning(d: DemonstrationSet, action_counts, observations: ObservationMap | None = None,
                     smoothing: float = 0.1) -> JointPolicy:
    """Smoothed maximum-likelihood policy per agent from demonstration counts.

    pi_i(a | o) = (n(o, a) + alpha) / (n(o) + alpha * |A_i|); rows never
    visited are uniform.
    """
    if d.episodes == 0:
        raise ValueError("behavior cloning needs at least one demonstration")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    if observations is None:
        observations = ObservationMap.identity(d.num_agents, d.num_states)
    states, actions = d.arrays()
    s, a = states.ravel(), actions.reshape(-1, d.num_agents)
    tables = []
    for i, (A, O) in enumerate(zip(action_counts, observations.counts)):
        counts = np.zeros((O, A))
        np.add.at(counts, (observations.maps[i][s], a[:, i]), 1.0)
        counts += smoothing
        tot = counts.sum(axis=1, keepdims=True)
        tables.append(np.where(tot > 0, counts / np.where(tot > 0, tot, 1), 1.0 / A))
    return JointPolicy.from_tables(tables, observations)


# ---------------------------------------------------------------------------
# Configuration and records


@dataclass
class MagailConfig:
    variant: PriorVariant = field(default_factory=lambda: PriorVariant(Prior.CENTRALIZED))
    mack: MackConfig = field(default_factory=lambda: MackConfig(lr_policy=0.2))
    disc_lr: float = 0.3
    disc_steps: int = 1
    iterations: int = 50
    bc_pretrain: bool = True
    bc_smoothing: float = 0.1
    beta: float = 0.0
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.disc_steps < 1:
            raise ValueError("iterations must be >= 0 and disc_steps >= 1")
        if self.disc_lr <= 0:
            raise ValueError("disc_lr must be positive")

    def to_dict(self) -> dict:
        return {"prior": self.variant.kind.value, "mack": self.mack.to_dict(),
                "disc_lr": self.disc_lr, "disc_steps": self.disc_steps,
                "iterations": self.iterations, "bc_pretrain": self.bc_pretrain,
                "bc_smoothing": self.bc_smoothing, "beta": self.beta,
                "eval_every": self.eval_every, "seed": self.seed}


RUN_COLUMNS = ("iter", "agent", "disc_obj", "gen_reward_mean", "true_return_mean",
               "true_return_std")


@dataclass
class RunRecord:
    rows: list
    policy: JointPolicy
    config: dict
    seed: int
    flags: tuple = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in RUN_COLUMNS])
        return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalResult:
    mean: np.ndarray          # Monte-Carlo mean discounted return per agent
    std: np.ndarray           # Monte-Carlo standard deviation per agent
    exact_horizon: np.ndarray  # exact expected return truncated at the horizon
    exact: np.ndarray | None   # exact infinite-horizon return (None when intractable)
    episodes: int

    @property
    def stderr(self) -> np.ndarray:
        return self.std / np.sqrt(max(self.episodes, 1))


def rollout_returns(g: MarkovGame, r: Rollouts) -> np.ndarray:
    """Discounted return of each episode per agent, shape (N, B)."""
    rew = g.rewards[:, r.states[:, :-1], r.joint]
    return (rew * g.discount ** np.arange(r.horizon)).sum(axis=-1)


def evaluate_policy(g: MarkovGame, pi: JointPolicy, episodes: int = 100, horizon: int = 50,
                    rng: RngConfig = RngConfig(0, "evaluate"), exact: bool = True) -> EvalResult:
    require_valid(g)
    ret = rollout_returns(g, sample_rollouts(g, pi, episodes, horizon, rng))
    return EvalResult(ret.mean(axis=1), ret.std(axis=1, ddof=1) if episodes > 1 else
                      np.zeros(g.num_agents), finite_horizon_returns(g, pi, horizon),
                      expected_returns(g, pi) if exact else None, episodes)


def exact_evaluator(g: MarkovGame) -> Evaluator:
    """Evaluator returning exact expected returns (zero spread) for training logs."""
    def fn(pi: JointPolicy):
        v = expected_returns(g, pi)
        return v, np.zeros_like(v)
    return fn


# ---------------------------------------------------------------------------
# Adversarial training


def _dynamics_only(g: GameDynamics) -> GameDynamics:
    return g.dynamics if isinstance(g, MarkovGame) else g


def _expert_pairs(d: DemonstrationSet, count: int, gen: np.random.Generator):
    states, actions = d.arrays()
    s, a = states.ravel(), actions.reshape(-1, d.num_agents)
    idx = gen.integers(len(s), size=count)
    return s[idx], a[idx]


def _flat_pairs(r: Rollouts):
    return r.states[:, :-1].ravel(), r.actions.reshape(-1, r.actions.shape[-1])


def _init_params(g, d, cfg, observations) -> PolicyParams:
    if cfg.bc_pretrain:
        return PolicyParams.from_policy(behavior_cloning(d, g.action_counts, observations,
                                                         cfg.bc_smoothing))
    return PolicyParams.uniform(g.action_counts, observations)


def _eval_rows(rows, it, evaluator, pi, agents):
    if evaluator is None:
        return
    mean, std = evaluator(pi)
    for row in rows:
        if row["iter"] == it and row["agent"] in agents:
            row["true_return_mean"], row["true_return_std"] = mean[row["agent"]], std[row["agent"]]


def _adversarial_loop(g: GameDynamics, d: DemonstrationSet, cfg: MagailConfig,
                      params: PolicyParams, trainable: tuple, evaluator: Evaluator | None,
                      rng: RngConfig) -> list[dict]:
    variant = cfg.variant
    mack = replace(cfg.mack, iterations=max(cfg.iterations, 1), entropy_coef=cfg.beta)
    trainer = MackTrainer(g, params, mack, trainable)
    disc = init_discriminator(g, variant)
    B, H = mack.batch_size, mack.horizon
    rows = []
    for it in range(cfg.iterations):
        step_rng = rng.child(f"iter{it}")
        r = sample_rollouts(g, trainer.params.policy(), B, H, step_rng.child("policy"))
        es, ea = _expert_pairs(d, B * H, step_rng.child("expert").generator())
        ps, pa = _flat_pairs(r)
        disc, obj = disc_update(disc, variant, DiscBatch(ps, pa, es, ea), cfg.disc_lr,
                                cfg.disc_steps)
        rewards = policy_reward(disc, variant, r.states[:, :-1], r.actions)
        trainer.step(r, rewards, it)
        for i in trainable:
            rows.append({"iter": it, "agent": i,
                         "disc_obj": obj[i if len(obj) > 1 else 0],
                         "gen_reward_mean": float(rewards[i].mean())})
        if cfg.eval_every and it % cfg.eval_every == 0:
            _eval_rows(rows, it, evaluator, trainer.params.policy(), trainable)
    return rows


def _zero_sum_loop(g: GameDynamics, d: DemonstrationSet, cfg: MagailConfig,
                   params: PolicyParams, expert: JointPolicy | None,
                   evaluator: Evaluator | None, rng: RngConfig) -> tuple[list[dict], tuple]:
    """Value-head training on paired compositions of learner and expert policies.

    Side A comes from (expert 1, learner 2) and side B from (learner 1, expert 2);
    the head rises on A and falls on B.  Agent one learns from side B rollouts
    with reward v, agent two from side A rollouts with reward -v.  Without
    expert policies, side A is the demonstrations and both agents learn from
    their own joint rollouts (flagged).
    """
    one = cfg.variant.agent_one
    two = 1 - one
    mack = replace(cfg.mack, iterations=max(cfg.iterations, 1), entropy_coef=cfg.beta)
    trainer = MackTrainer(g, params, mack)
    disc = init_discriminator(g, cfg.variant)
    B, H = mack.batch_size, mack.horizon
    flags = () if expert is not None else ("zero_sum_demo_pairing",)
    rows = []
    for it in range(cfg.iterations):
        step_rng = rng.child(f"iter{it}")
        learner = trainer.params.policy()
        if expert is not None:
            pol_a = learner.replace(one, expert.tables[one], expert.observations.maps[one])
            pol_b = learner.replace(two, expert.tables[two], expert.observations.maps[two])
            ra = sample_rollouts(g, pol_a, B, H, step_rng.child("side_a"))
            rb = sample_rollouts(g, pol_b, B, H, step_rng.child("side_b"))
            side_a, side_b = _flat_pairs(ra), _flat_pairs(rb)
        else:
            ra = rb = sample_rollouts(g, learner, B, H, step_rng.child("policy"))
            side_a = _expert_pairs(d, B * H, step_rng.child("expert").generator())
            side_b = _flat_pairs(rb)
        disc, obj = zero_sum_disc_update(disc, side_a, side_b, cfg.disc_lr, cfg.disc_steps)
        rew_b = policy_reward(disc, cfg.variant, rb.states[:, :-1], rb.actions)
        rew_a = policy_reward(disc, cfg.variant, ra.states[:, :-1], ra.actions)
        trainer.trainable = (one,)
        trainer.step(rb, rew_b, it)
        trainer.trainable = (two,)
        trainer.step(ra, rew_a, it)
        for i, rew in ((one, rew_b), (two, rew_a)):
            rows.append({"iter": it, "agent": i, "disc_obj": obj,
                         "gen_reward_mean": float(rew[i].mean())})
        rows.sort(key=lambda x: (x["iter"], x["agent"]))
        if cfg.eval_every and it % cfg.eval_every == 0:
            _eval_rows(rows, it, evaluator, trainer.params.policy(), (0, 1))
    return rows, flags


def _final_rows(rows, it, pi, evaluator, agents):
    for i in agents:
        rows.append({"iter": it, "agent": i})
    _eval_rows(rows, it, evaluator, pi, agents)


def train_magail(g: GameDynamics, d: DemonstrationSet, cfg: MagailConfig,
                 observations: ObservationMap | None = None, evaluator: Evaluator | None = None,
                 expert: JointPolicy | None = None) -> RunRecord:
    """Multi-agent adversarial imitation under the configured reward prior.

    ``g`` is reduced to its reward-free dynamics before training.  The last
    record row (iteration ``cfg.iterations``) carries the final evaluation.
    ``expert`` policies are used only by the zero-sum prior's paired rollouts.
    """
    g = _dynamics_only(g)
    require_valid(g)
    if d.num_agents != g.num_agents or d.num_states != g.num_states:
        raise ValueError("demonstrations do not match the game")
    if observations is None:
        observations = ObservationMap.identity(g.num_agents, g.num_states)
    if cfg.variant.kind is Prior.DECENTRALIZED and cfg.variant.observations is None:
        cfg = replace(cfg, variant=replace(cfg.variant, observations=observations))
    cfg.variant.check(g)
    params = _init_params(g, d, cfg, observations)
    rng = RngConfig(cfg.seed, "magail")
    flags = ()
    if cfg.variant.kind is Prior.ZERO_SUM:
        rows, flags = _zero_sum_loop(g, d, cfg, params, expert, evaluator, rng)
    else:
        rows = _adversarial_loop(g, d, cfg, params, tuple(range(g.num_agents)), evaluator, rng)
    pi = params.policy()
    _final_rows(rows, cfg.iterations, pi, evaluator, range(g.num_agents))
    return RunRecord(rows, pi, cfg.to_dict(), cfg.seed, flags)


def train_gail_baseline(g: GameDynamics, d: DemonstrationSet, cfg: MagailConfig,
                        observations: ObservationMap | None = None,
                        evaluator: Evaluator | None = None) -> RunRecord:
    """Independent single-agent imitation: agent i learns while the rest stay at BC.

    Each agent uses its own decentralized discriminator; the separately trained
    tables are assembled into one joint policy at the end.
    """
    g = _dynamics_only(g)
    require_valid(g)
    if d.num_agents != g.num_agents or d.num_states != g.num_states:
        raise ValueError("demonstrations do not match the game")
    if observations is None:
        observations = ObservationMap.identity(g.num_agents, g.num_states)
    variant = PriorVariant(Prior.DECENTRALIZED, observations)
    sub = replace(cfg, variant=variant)
    base = _init_params(g, d, sub, observations)
    rows, tables = [], []
    for i in range(g.num_agents):
        params = base.copy()
        rows += _adversarial_loop(g, d, sub, params, (i,), evaluator,
                                  RngConfig(cfg.seed, f"gail/agent{i}"))
        tables.append(params.logits[i])
    assembled = PolicyParams(tables, observations).policy()
    rows.sort(key=lambda x: (x["iter"], x["agent"]))
    _final_rows(rows, cfg.iterations, assembled, evaluator, range(g.num_agents))
    config = sub.to_dict()
    config["prior"] = "gail"
    return RunRecord(rows, assembled, config, cfg.seed)
