"""Exact tabular quantities for finite Markov games.

Values, agent Q-functions, Nash constraint checks (one-step and t-step), the
Lagrangian dual built from trajectory weights, occupancy measures, causal
entropies and the closed-form GAIL regularizer conjugate.

Conventions: a t-step prefix for agent i is ``t`` (state, action_i) pairs
``(s^0, a^0), ..., (s^{t-1}, a^{t-1})``, so ``t = 1`` is the ordinary one-step
constraint ``v_i(s) >= q_i(s, a_i)``.  All logs are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .game_core import GameDynamics, JointPolicy, MarkovGame, compose_policy, require_valid

ENUMERATION_BUDGET = 10**7
LOG2 = float(np.log(2.0))


class BudgetExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Policy-induced chain


def policy_transition(g: GameDynamics, pi: JointPolicy) -> sp.csr_matrix:
    """State-to-state matrix P_pi(s, s') = sum_a pi(a|s) T(s'|s, a)."""
    S, J = g.num_states, g.num_joint
    w = pi.joint_probs().ravel()
    agg = sp.csr_matrix((w, (np.repeat(np.arange(S), J), np.arange(S * J))), shape=(S, S * J))
    return (agg @ g.transition).tocsr()


def _solve(g: GameDynamics, P: sp.csr_matrix, rhs: np.ndarray, transpose=False) -> np.ndarray:
    S = g.num_states
    A = sp.identity(S, format="csc") - g.discount * (P.T if transpose else P).tocsc()
    x = spla.splu(A).solve(rhs)
    resid = np.abs(A @ x - rhs).max() if rhs.size else 0.0
    scale = max(1.0, float(np.abs(x).max()) if x.size else 1.0)
    assert resid <= 1e-10 * scale, f"linear solve residual {resid:.3g}"
    return x


def policy_rewards(g: MarkovGame, pi: JointPolicy) -> np.ndarray:
    """Expected one-step reward E_pi[r_i(s, a)] as (N, S)."""
    return np.einsum("nsj,sj->ns", g.rewards, pi.joint_probs())


def bellman_values(g: MarkovGame, pi: JointPolicy) -> np.ndarray:
    """Per-agent state values v_i(s; pi) as an (N, S) array."""
    require_valid(g)
    P = policy_transition(g, pi)
    return _solve(g, P, policy_rewards(g, pi).T.copy()).T.copy()


def joint_q(g: MarkovGame, v: np.ndarray) -> np.ndarray:
    """r_i(s, a) + gamma * sum_s' T(s'|s, a) v_i(s') as (N, S, J)."""
    S, J = g.num_states, g.num_joint
    nxt = (g.transition @ v.T).T.reshape(g.num_agents, S, J)
    return g.rewards + g.discount * nxt


def _marginalize_to_agent(x: np.ndarray, counts, i: int) -> np.ndarray:
    """Sum an (S, J) array over every joint-action digit except agent i's."""
    S = x.shape[0]
    full = x.reshape((S,) + tuple(counts))
    axes = tuple(1 + k for k in range(len(counts)) if k != i)
    return full.sum(axis=axes) if axes else full


def q_values(g: MarkovGame, pi: JointPolicy, v: np.ndarray) -> list[np.ndarray]:
    """q_i(s, a_i) = E_{pi_{-i}}[r_i + gamma T v_i], one (S, A_i) array per agent."""
    if v.shape != (g.num_agents, g.num_states):
        raise ValueError(f"value table shape {v.shape} does not match game")
    Q = joint_q(g, v)
    return [_marginalize_to_agent(Q[i] * pi.joint_probs(exclude=i), g.action_counts, i)
            for i in range(g.num_agents)]


def nash_residual(g: MarkovGame, pi: JointPolicy) -> float:
    """sum_i sum_s (v_i(s) - E_{pi_i} q_i(s, .)); zero for every policy."""
    v = bellman_values(g, pi)
    q = q_values(g, pi, v)
    return float(sum((v[i] - (pi.state_probs(i) * q[i]).sum(axis=1)).sum()
                     for i in range(g.num_agents)))


@dataclass(frozen=True)
class NashReport:
    is_nash: bool
    max_violation: float
    witness: tuple | None

    def __iter__(self):
        return iter((self.is_nash, self.max_violation, self.witness))


def nash_check(g: MarkovGame, pi: JointPolicy, tol: float = 1e-8) -> NashReport:
    """Check v_i(s) >= q_i(s, a_i) - tol for every agent, state and action."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = bellman_values(g, pi)
    q = q_values(g, pi, v)
    best, witness = -np.inf, None
    for i in range(g.num_agents):
        gap = q[i] - v[i][:, None]
        s, a = np.unravel_index(int(np.argmax(gap)), gap.shape)
        if gap[s, a] > best:
            best, witness = float(gap[s, a]), (i, int(s), int(a))
    ok = best <= tol
    return NashReport(ok, best, None if ok else witness)


# ---------------------------------------------------------------------------
# Single-agent view against fixed opponents


@dataclass(frozen=True)
class AgentView:
    """Agent i's induced MDP when everyone else plays a fixed policy."""

    P: np.ndarray      # (S, A_i, S)
    r: np.ndarray      # (S, A_i) expected reward
    r_cond: np.ndarray  # (S, A_i, S) expected reward given the next state
    pi: np.ndarray     # (S, A_i) agent i's own policy
    v: np.ndarray      # (S,) agent i's value under the joint policy
    q: np.ndarray      # (S, A_i)


def agent_view(g: MarkovGame, pi: JointPolicy, i: int) -> AgentView:
    counts = g.action_counts
    T = g.dense_transition()
    w = pi.joint_probs(exclude=i)  # (S, J)
    P = _agent_kernel(T, w, counts, i)
    wr = w * g.rewards[i]
    r = _marginalize_to_agent(wr, counts, i)
    rt = _agent_kernel(T, wr, counts, i)
    with np.errstate(invalid="ignore", divide="ignore"):
        r_cond = np.where(P > 0, rt / np.where(P > 0, P, 1.0), 0.0)
    v = bellman_values(g, pi)
    return AgentView(P, r, r_cond, pi.state_probs(i), v[i], q_values(g, pi, v)[i])


def _agent_kernel(T: np.ndarray, w: np.ndarray, counts, i: int) -> np.ndarray:
    S = T.shape[0]
    full = (w[:, :, None] * T).reshape((S,) + tuple(counts) + (S,))
    axes = tuple(1 + k for k in range(len(counts)) if k != i)
    return full.sum(axis=axes) if axes else full


# ---------------------------------------------------------------------------
# t-step constraints


def _check_budget(count: int) -> None:
    if count > ENUMERATION_BUDGET:
        raise BudgetExceeded(f"{count} prefixes exceeds budget {ENUMERATION_BUDGET}")


@dataclass(frozen=True)
class TStepValue:
    value: float
    zero_probability: bool


def tstep_q(g: MarkovGame, pi: JointPolicy, states, actions, i: int,
            semantics: str = "conditional") -> TStepValue:
    """Q_i^(t) of the prefix ``(states[j], actions[j])_{j<t}`` for agent i.

    ``conditional``: expected discounted return of agent i given that the state
    path and agent i's actions are exactly the prefix, other agents drawn from
    pi_{-i}; rewards of step j are averaged over the a_{-i} posterior given the
    transition to states[j+1].  Branches of probability zero contribute zero
    weight and set ``zero_probability``.

    ``intervention``: return of the plan "at step j, if the state is states[j]
    play actions[j], otherwise follow pi_i", then pi_i after step t-1.
    """
    states, actions = np.asarray(states, int), np.asarray(actions, int)
    t = len(states)
    if t < 1 or len(actions) != t:
        raise ValueError("prefix needs t >= 1 matching states and actions")
    if (states < 0).any() or (states >= g.num_states).any() \
            or (actions < 0).any() or (actions >= g.action_counts[i]).any():
        raise IndexError("prefix index out of range")
    view = agent_view(g, pi, i)
    gamma = g.discount
    if semantics == "conditional":
        total, zero = 0.0, False
        for j in range(t - 1):
            s, a, s2 = states[j], actions[j], states[j + 1]
            if view.P[s, a, s2] <= 0:
                zero = True
                continue
            total += gamma**j * view.r_cond[s, a, s2]
        total += gamma ** (t - 1) * view.q[states[-1], actions[-1]]
        return TStepValue(float(total), zero)
    if semantics == "intervention":
        V = view.v.copy()
        for j in range(t - 1, -1, -1):
            q = view.r + gamma * view.P @ V
            W = (view.pi * q).sum(axis=1)
            W[states[j]] = q[states[j], actions[j]]
            V = W
        return TStepValue(float(V[states[0]]), False)
    raise ValueError(f"unknown semantics {semantics!r}")


def _intervention_table(view: AgentView, gamma: float, t: int) -> np.ndarray:
    """Plan values for every prefix, shape (S, A)^t flattened as (s0, a0, s1, a1, ...)."""
    S, A = view.r.shape
    V = view.v[None, :]  # (K, S) with K suffixes so far
    for j in range(t - 1, 0, -1):
        q = view.r[None] + gamma * np.einsum("sat,kt->ksa", view.P, V)
        W = (view.pi[None] * q).sum(axis=2)  # (K, S)
        K = V.shape[0]
        new = np.broadcast_to(W[None, None], (S, A, K, S)).copy()
        idx = np.arange(S)
        new[idx, :, :, idx] = np.transpose(q, (1, 2, 0))[idx]  # (S, A, K)
        V = new.reshape(S * A * K, S)
    q = view.r[None] + gamma * np.einsum("sat,kt->ksa", view.P, V)  # (K, S, A)
    return np.transpose(q, (1, 2, 0)).reshape(-1)


def _conditional_table(view: AgentView, gamma: float, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Conditional Q for every prefix plus a reachability mask, both flat over (s0, a0, ...)."""
    S, A = view.r.shape
    Q = np.zeros([S, A] * t)
    ok = np.ones([S, A] * t, dtype=bool)
    for j in range(t - 1):
        shape = [1, 1] * t
        shape[2 * j], shape[2 * j + 1], shape[2 * j + 2] = S, A, S
        Q = Q + (gamma**j * view.r_cond).reshape(shape)
        ok = ok & (view.P > 0).reshape(shape)
    shape = [1, 1] * t
    shape[2 * t - 2], shape[2 * t - 1] = S, A
    Q = Q + (gamma ** (t - 1) * view.q).reshape(shape)
    return Q.reshape(-1), ok.reshape(-1)


def _decode_prefix(flat_index: int, S: int, A: int, t: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    digits = np.unravel_index(flat_index, [S, A] * t)
    return tuple(int(d) for d in digits[0::2]), tuple(int(d) for d in digits[1::2])


def prefix_count(g: GameDynamics, t: int) -> int:
    return sum((g.num_states * a) ** t for a in g.action_counts)


@dataclass(frozen=True)
class TStepReport:
    is_nash: bool
    max_violation: float
    witness: tuple | None  # (agent, states, actions)

    def __iter__(self):
        return iter((self.is_nash, self.max_violation, self.witness))


def tstep_nash_check(g: MarkovGame, pi: JointPolicy, t: int, tol: float = 1e-8,
                     semantics: str = "intervention") -> TStepReport:
    """Check v_i(s^0) >= Q_i^(t)(prefix) - tol over every agent and length-t prefix.

    Exhaustive; refuses when the number of prefixes exceeds ``ENUMERATION_BUDGET``.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    _check_budget(prefix_count(g, t))
    best, witness = -np.inf, None
    S = g.num_states
    for i in range(g.num_agents):
        view = agent_view(g, pi, i)
        A = g.action_counts[i]
        if semantics == "intervention":
            Q = _intervention_table(view, g.discount, t)
            reach = np.ones_like(Q, dtype=bool)
        else:
            Q, reach = _conditional_table(view, g.discount, t)
        v0 = np.repeat(view.v, A * (S * A) ** (t - 1))
        gap = np.where(reach, Q - v0, -np.inf)
        k = int(np.argmax(gap))
        if gap[k] > best:
            best = float(gap[k])
            witness = (i,) + _decode_prefix(k, S, A, t)
    ok = best <= tol
    return TStepReport(ok, best, None if ok else witness)


# ---------------------------------------------------------------------------
# Lagrangian dual with trajectory-probability multipliers


@dataclass(frozen=True)
class DualWeights:
    agent: int
    t: int
    states: np.ndarray   # (K, t)
    actions: np.ndarray  # (K, t)
    weights: np.ndarray  # (K,)


def _mixed_kernel(g: MarkovGame, others: JointPolicy, i: int) -> np.ndarray:
    """P(s' | s, a_i) with the other agents drawn from ``others``."""
    return _agent_kernel(g.dense_transition(), others.joint_probs(exclude=i), g.action_counts, i)


def build_dual_weights(g: MarkovGame, pi: JointPolicy, pi_star: JointPolicy, i: int,
                       t: int) -> DualWeights:
    """lambda(tau_i): probability of agent i's prefix when i plays pi and the rest pi_star."""
    if t < 1:
        raise ValueError("t must be >= 1")
    S, A = g.num_states, g.action_counts[i]
    _check_budget((S * A) ** t)
    own = pi.state_probs(i)
    P = _mixed_kernel(g, pi_star, i)
    lam = (g.initial_dist[:, None] * own).reshape([S, A] + [1, 1] * (t - 1))
    for j in range(1, t):
        shape = [1, 1] * t
        shape[2 * j - 2], shape[2 * j - 1], shape[2 * j] = S, A, S
        step = P.reshape(shape)
        shape2 = [1, 1] * t
        shape2[2 * j], shape2[2 * j + 1] = S, A
        lam = lam * step * own.reshape(shape2)
    digits = np.indices([S, A] * t).reshape(2 * t, -1)
    return DualWeights(i, t, digits[0::2].T.copy(), digits[1::2].T.copy(), lam.reshape(-1))


def dual_value_enumerated(g: MarkovGame, pi_star: JointPolicy, pi: JointPolicy, t: int) -> float:
    """L^(t)(pi_star, lambda_pi) summed term by term over every prefix."""
    total = 0.0
    for i in range(g.num_agents):
        w = build_dual_weights(g, pi, pi_star, i, t)
        view = agent_view(g, pi_star, i)
        Q, _ = _conditional_table(view, g.discount, t)
        v0 = view.v[w.states[:, 0]]
        total += float(np.dot(w.weights, Q - v0))
    return total


def dual_value(g: MarkovGame, pi_star: JointPolicy, pi: JointPolicy, t: int) -> float:
    """L^(t)(pi_star, lambda_pi) by forward recursion over prefix marginals.

    Uses that lambda is a product of per-step factors and the conditional Q is a
    sum of per-step terms, so the prefix sum factorizes without enumeration.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    gamma = g.discount
    total = 0.0
    for i in range(g.num_agents):
        own = pi.state_probs(i)
        view = agent_view(g, pi_star, i)
        mu = g.initial_dist[:, None] * own  # (S, A) prefix marginal at step j
        acc = 0.0
        for j in range(t - 1):
            acc += gamma**j * float((mu * view.r).sum())
            mu = np.einsum("sa,sat->t", mu, view.P)[:, None] * own
        acc += gamma ** (t - 1) * float((mu * view.q).sum())
        total += acc - float(g.initial_dist @ view.v)
    return total


def mixed_gap(g: MarkovGame, pi_star: JointPolicy, pi: JointPolicy) -> float:
    """sum_i E_eta[v_i(pi_i, pi*_{-i}) - v_i(pi*)], the limit of the dual as t grows."""
    base = g.initial_dist @ bellman_values(g, pi_star).T
    total = 0.0
    for i in range(g.num_agents):
        table, omap = pi.agent_view(i)
        mixed = compose_policy(table, i, pi_star, omap)
        total += float(g.initial_dist @ bellman_values(g, mixed)[i] - base[i])
    return total


# ---------------------------------------------------------------------------
# Occupancy, returns, entropies


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    """Discounted visitation rho(s, joint_a); total mass 1 / (1 - gamma)."""

    joint: np.ndarray  # (S, J)
    action_counts: tuple[int, ...]
    discount: float

    @property
    def state(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def agent_marginal(self, i: int) -> np.ndarray:
        return _marginalize_to_agent(self.joint, self.action_counts, i)

    def normalized(self) -> np.ndarray:
        return self.joint * (1.0 - self.discount)


def state_occupancy(g: GameDynamics, pi: JointPolicy) -> np.ndarray:
    return _solve(g, policy_transition(g, pi), np.asarray(g.initial_dist, float), transpose=True)


def occupancy_measure(g: GameDynamics, pi: JointPolicy) -> OccupancyTable:
    require_valid(g)
    d = state_occupancy(g, pi)
    return OccupancyTable(d[:, None] * pi.joint_probs(), g.action_counts, g.discount)


def expected_return(g: MarkovGame, pi: JointPolicy, i: int) -> float:
    rho = occupancy_measure(g, pi)
    return float((rho.joint * g.rewards[i]).sum())


def expected_returns(g: MarkovGame, pi: JointPolicy) -> np.ndarray:
    rho = occupancy_measure(g, pi)
    return np.einsum("sj,nsj->n", rho.joint, g.rewards)


def finite_horizon_returns(g: MarkovGame, pi: JointPolicy, horizon: int) -> np.ndarray:
    """Exact E[sum_{t<H} gamma^t r_i(s_t, a_t)] per agent."""
    P = policy_transition(g, pi).T.tocsr()
    r = policy_rewards(g, pi)
    d = np.asarray(g.initial_dist, float)
    out = np.zeros(g.num_agents)
    for t in range(horizon):
        out += g.discount**t * (r @ d)
        d = P @ d
    return out


def _neg_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(p > 0, -np.log(np.where(p > 0, p, 1.0)), 0.0)


def causal_entropy(g: GameDynamics, pi: JointPolicy) -> float:
    rho = occupancy_measure(g, pi)
    return float((rho.joint * _neg_log(pi.joint_probs())).sum())


def agent_causal_entropy(g: GameDynamics, pi_i: np.ndarray, others: JointPolicy, i: int,
                         obs_map: np.ndarray | None = None) -> float:
    """Discounted causal entropy of agent i's policy while the others play ``others``."""
    mixed = compose_policy(pi_i, i, others, obs_map)
    rho = occupancy_measure(g, mixed)
    return float((rho.agent_marginal(i) * _neg_log(mixed.state_probs(i))).sum())


# ---------------------------------------------------------------------------
# GA regularizer conjugate


def _as_distribution(x) -> np.ndarray:
    arr = x.normalized() if isinstance(x, OccupancyTable) else np.asarray(x, dtype=float)
    if (arr < 0).any():
        raise ValueError("occupancy entries must be non-negative")
    total = arr.sum()
    if total <= 0:
        raise ValueError("all-zero occupancy")
    return arr / total


def psi_star_ga(rho_a, rho_b) -> float:
    """max_D E_b[log D] + E_a[log(1 - D)], attained at D = rho_b / (rho_a + rho_b).

    Equals 2 JS(rho_a, rho_b) - 2 log 2 on the normalized inputs.
    """
    a, b = _as_distribution(rho_a), _as_distribution(rho_b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    m = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = np.where(b > 0, b * np.log(np.where(b > 0, b / m, 1.0)), 0.0)
        ta = np.where(a > 0, a * np.log(np.where(a > 0, a / m, 1.0)), 0.0)
    return float(tb.sum() + ta.sum())


def psi_star_ga_numeric(rho_a, rho_b, steps: int = 5000, lr: float = 1.0,
                        clamp: float = 1e-8) -> float:
    """Inner maximization over a tabular D by gradient ascent on its logits."""
    a, b = _as_distribution(rho_a).ravel(), _as_distribution(rho_b).ravel()
    lo, hi = np.log(clamp / (1 - clamp)), np.log((1 - clamp) / clamp)
    w = np.zeros_like(a)
    scale = np.maximum(a + b, 1e-300)
    for _ in range(steps):
        D = 1.0 / (1.0 + np.exp(-w))
        grad = b * (1 - D) - a * D
        w = np.clip(w + lr * grad / scale, lo, hi)
    D = np.clip(1.0 / (1.0 + np.exp(-w)), clamp, 1 - clamp)
    return float(b @ np.log(D) + a @ np.log(1 - D))
