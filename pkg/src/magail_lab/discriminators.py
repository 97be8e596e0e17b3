"""Tabular logistic discriminators for the three reward priors.

Centralized: one shared table over (state, joint action).
Decentralized: one table per agent over (o_i(s), a_i).
Zero-sum: an unbounded value head over (state, joint action) used directly as
agent one's reward; the other agent receives its negation.

Training follows the adversarial loop's convention: policy pairs are pushed
toward D = 1 and expert pairs toward D = 0, and the generator reward is -log D.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .game_core import GameDynamics, ObservationMap

EPS_D = 1e-6
LOGIT_BOUND = float(np.log((1 - EPS_D) / EPS_D))
VALUE_BOUND = 10.0


class Prior(enum.Enum):
    CENTRALIZED = "centralized"
    DECENTRALIZED = "decentralized"
    ZERO_SUM = "zero_sum"


@dataclass(frozen=True)
class PriorVariant:
    kind: Prior
    observations: ObservationMap | None = None
    agent_one: int = 0

    def check(self, g: GameDynamics) -> None:
        if self.kind is Prior.ZERO_SUM and g.num_agents != 2:
            raise ValueError(f"zero-sum prior needs 2 agents, got {g.num_agents}")
        if self.kind is Prior.DECENTRALIZED:
            if self.observations is None or self.observations.num_agents != g.num_agents:
                raise ValueError("decentralized prior needs an observation map per agent")


@dataclass
class DiscriminatorParams:
    weights: list  # Centralized/ZeroSum: [(S, J)]; Decentralized: [(O_i, A_i)] per agent
    action_counts: tuple
    eps: float = EPS_D


@dataclass
class DiscBatch:
    """Policy-side pairs (chi) and expert-side pairs (chi_E): states (K,), actions (K, N)."""

    states: np.ndarray
    actions: np.ndarray
    expert_states: np.ndarray
    expert_actions: np.ndarray

    def check(self):
        if len(self.states) == 0 or len(self.expert_states) == 0:
            raise ValueError("both sides of a discriminator batch must be non-empty")


def init_discriminator(g: GameDynamics, variant: PriorVariant) -> DiscriminatorParams:
    variant.check(g)
    if variant.kind is Prior.DECENTRALIZED:
        w = [np.zeros((c, a)) for a, c in zip(g.action_counts, variant.observations.counts)]
    else:
        w = [np.zeros((g.num_states, g.num_joint))]
    return DiscriminatorParams(w, tuple(g.action_counts))


def _joint(action_counts, actions: np.ndarray) -> np.ndarray:
    if len(action_counts) == 1:
        return actions[..., 0]
    return np.ravel_multi_index(tuple(np.moveaxis(actions, -1, 0)), tuple(action_counts))


def _cells(params: DiscriminatorParams, variant: PriorVariant, states, actions):
    """Per-table (row, column) indices for a batch of pairs."""
    states, actions = np.asarray(states), np.asarray(actions)
    if variant.kind is Prior.DECENTRALIZED:
        return [(variant.observations.maps[i][states], actions[..., i])
                for i in range(len(params.action_counts))]
    return [(states, _joint(params.action_counts, actions))]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def disc_scores(params: DiscriminatorParams, variant: PriorVariant, states, actions) -> np.ndarray:
    """Scores D_i in [eps, 1 - eps] for every agent, shape (N,) + batch shape."""
    N = len(params.action_counts)
    out = [_sigmoid(w[c]) for w, c in zip(params.weights, _cells(params, variant, states, actions))]
    if variant.kind is not Prior.DECENTRALIZED:
        out = out * N
    return np.clip(np.stack(out), params.eps, 1 - params.eps)


def disc_forward(params: DiscriminatorParams, variant: PriorVariant, s: int, a) -> np.ndarray:
    a = np.asarray(a)
    for i, (ai, n) in enumerate(zip(a, params.action_counts)):
        if not 0 <= ai < n:
            raise IndexError(f"action {ai} out of range for agent {i}")
    return disc_scores(params, variant, np.array([s]), a[None])[:, 0]


def policy_reward(params: DiscriminatorParams, variant: PriorVariant, states, actions) -> np.ndarray:
    """Generator reward per agent, shape (N,) + batch shape.

    -log D for the centralized and decentralized priors; for zero-sum the value
    head v for agent one and -v for the other.
    """
    if variant.kind is Prior.ZERO_SUM:
        (rows, cols), = _cells(params, variant, states, actions)
        v = params.weights[0][rows, cols]
        out = np.empty((2,) + v.shape)
        out[variant.agent_one], out[1 - variant.agent_one] = v, -v
        return out
    return -np.log(disc_scores(params, variant, states, actions))


# ---------------------------------------------------------------------------
# Logistic objective


def _side_counts(params, variant, states, actions):
    n = len(states)
    out = []
    for w, (r, c) in zip(params.weights, _cells(params, variant, states, actions)):
        cnt = np.zeros(w.size)
        np.add.at(cnt, r * w.shape[1] + c, 1.0)
        out.append(cnt.reshape(w.shape) / n)
    return out


def disc_objective(params: DiscriminatorParams, variant: PriorVariant, batch: DiscBatch) -> np.ndarray:
    """E_chi[log D_i] + E_chiE[log(1 - D_i)] for each table (one entry for shared tables)."""
    batch.check()
    pol = _side_counts(params, variant, batch.states, batch.actions)
    exp = _side_counts(params, variant, batch.expert_states, batch.expert_actions)
    out = []
    for w, p, e in zip(params.weights, pol, exp):
        D = np.clip(_sigmoid(w), params.eps, 1 - params.eps)
        out.append(float((p * np.log(D)).sum() + (e * np.log(1 - D)).sum()))
    return np.array(out)


def disc_gradient(params: DiscriminatorParams, variant: PriorVariant, batch: DiscBatch) -> list:
    """Gradient of the objective with respect to each weight table (unclamped logits)."""
    pol = _side_counts(params, variant, batch.states, batch.actions)
    exp = _side_counts(params, variant, batch.expert_states, batch.expert_actions)
    return [p * (1 - _sigmoid(w)) - e * _sigmoid(w) for w, p, e in zip(params.weights, pol, exp)]


def disc_update(params: DiscriminatorParams, variant: PriorVariant, batch: DiscBatch,
                lr: float = 1.0, steps: int = 1) -> tuple[DiscriminatorParams, np.ndarray]:
    """Ascent on the logistic objective, each cell's step scaled by its curvature.

    The objective separates over one-hot cells, so dividing a cell's gradient by
    its own curvature (p + e) D (1 - D) is a diagonal Newton step; with lr = 1
    it reaches the count-ratio optimum in a handful of steps.  Logits stay within
    the clamp bound.
    """
    batch.check()
    pol = _side_counts(params, variant, batch.states, batch.actions)
    exp = _side_counts(params, variant, batch.expert_states, batch.expert_actions)
    weights = [w.copy() for w in params.weights]
    for _ in range(steps):
        for k, (w, p, e) in enumerate(zip(weights, pol, exp)):
            D = _sigmoid(w)
            grad = p * (1 - D) - e * D
            curv = (p + e) * D * (1 - D)
            seen = (p + e) > 0
            w[seen] += lr * grad[seen] / np.maximum(curv[seen], 1e-12)
            np.clip(w, -LOGIT_BOUND, LOGIT_BOUND, out=w)
    new = DiscriminatorParams(weights, params.action_counts, params.eps)
    return new, disc_objective(new, variant, batch)


def zero_sum_objective(params: DiscriminatorParams, side_a, side_b) -> float:
    (sa, aa), (sb, ab) = side_a, side_b
    w = params.weights[0]
    ja, jb = _joint(params.action_counts, np.asarray(aa)), _joint(params.action_counts, np.asarray(ab))
    return float(w[np.asarray(sa), ja].mean() - w[np.asarray(sb), jb].mean())


def zero_sum_disc_update(params: DiscriminatorParams, side_a, side_b, lr: float = 0.1,
                         steps: int = 1, bound: float = VALUE_BOUND
                         ) -> tuple[DiscriminatorParams, float]:
    """Raise the value head on side A pairs, lower it on side B pairs.

    side_a: (states, actions) from (expert 1, learner 2) rollouts;
    side_b: (states, actions) from (learner 1, expert 2) rollouts.
    The head is kept within [-bound, bound].
    """
    if len(params.action_counts) != 2:
        raise ValueError("zero-sum discriminator needs 2 agents")
    (sa, aa), (sb, ab) = side_a, side_b
    if len(sa) == 0 or len(sb) == 0:
        raise ValueError("both sides must be non-empty")
    w = params.weights[0].copy()
    grad = np.zeros(w.size)
    np.add.at(grad, np.asarray(sa) * w.shape[1] + _joint(params.action_counts, np.asarray(aa)),
              1.0 / len(sa))
    np.add.at(grad, np.asarray(sb) * w.shape[1] + _joint(params.action_counts, np.asarray(ab)),
              -1.0 / len(sb))
    grad = grad.reshape(w.shape)
    for _ in range(steps):
        w = np.clip(w + lr * grad, -bound, bound)
    new = DiscriminatorParams([w], params.action_counts, params.eps)
    return new, zero_sum_objective(new, side_a, side_b)


# ---------------------------------------------------------------------------
# Checkpoint file: "agent obs action weight" per line


def encode_discriminator(params: DiscriminatorParams, variant: PriorVariant) -> str:
    lines = [f"# {variant.kind.value} {' '.join(map(str, params.action_counts))}"]
    for k, w in enumerate(params.weights):
        for o in range(w.shape[0]):
            for a in range(w.shape[1]):
                lines.append(f"{k} {o} {a} {w[o, a]:.12g}")
    return "\n".join(lines) + "\n"


def decode_discriminator(text: str, template: DiscriminatorParams) -> DiscriminatorParams:
    weights = [np.zeros_like(w) for w in template.weights]
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {ln}: expected 'agent obs action weight'")
        k, o, a = (int(x) for x in parts[:3])
        weights[k][o, a] = float(parts[3])
    return DiscriminatorParams(weights, template.action_counts, template.eps)
