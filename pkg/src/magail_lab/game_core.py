"""Finite Markov games, joint policies, trajectory sampling and demonstration files.

Joint actions are mixed-radix encoded with agent 0 as the most significant digit,
so ``joint = ((a_0 * A_1) + a_1) * A_2 + a_2`` for three agents.  Transitions are
stored as a CSR matrix of shape ``(S * J, S)`` whose row ``s * J + j`` is the
next-state distribution for state ``s`` under joint action ``j``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

STOCHASTIC_ATOL = 1e-12


class DecodeError(ValueError):
    """A demonstration file could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# RNG streams


@dataclass(frozen=True)
class RngConfig:
    """A seed plus a named stream; equal (seed, stream) pairs give equal draws."""

    seed: int
    stream: str = "default"

    def generator(self) -> np.random.Generator:
        key = zlib.crc32(self.stream.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence([self.seed & (2**64 - 1), key]))

    def child(self, name: str) -> "RngConfig":
        return RngConfig(self.seed, f"{self.stream}/{name}")


# ---------------------------------------------------------------------------
# Games


def joint_action_table(action_counts: Sequence[int]) -> np.ndarray:
    """All joint actions as rows of per-agent indices, in mixed-radix order."""
    grids = np.indices(tuple(action_counts)).reshape(len(action_counts), -1)
    return grids.T.copy()


def encode_joint(action_counts: Sequence[int], actions) -> np.ndarray | int:
    actions = np.asarray(actions)
    idx = np.ravel_multi_index(tuple(np.moveaxis(actions, -1, 0)), tuple(action_counts))
    return int(idx) if np.ndim(idx) == 0 else idx


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GameDynamics:
    """Everything about a game except its rewards.

    Imitation learners receive this view; it deliberately has no reward accessor.
    """

    action_counts: tuple[int, ...]
    transition: sp.csr_matrix
    initial_dist: np.ndarray
    discount: float
    game_id: str = "game"

    @property
    def num_agents(self) -> int:
        return len(self.action_counts)

    @property
    def num_states(self) -> int:
        return self.initial_dist.shape[0]

    @property
    def num_joint(self) -> int:
        return int(np.prod(self.action_counts))

    @property
    def joint_actions(self) -> np.ndarray:
        return joint_action_table(self.action_counts)

    def dense_transition(self) -> np.ndarray:
        """Transition tensor of shape (S, J, S); only sensible for small games."""
        S, J = self.num_states, self.num_joint
        return self.transition.toarray().reshape(S, J, S)


@dataclass(frozen=True, eq=False)
class MarkovGame(GameDynamics):
    """A finite N-agent Markov game with per-agent rewards r_i(s, joint_a)."""

    rewards: np.ndarray = field(default=None)  # (N, S, J)
    reward_bound: float = 1.0

    def __post_init__(self):
        if self.rewards is None:
            raise ValueError("MarkovGame needs a reward tensor")

    @property
    def dynamics(self) -> GameDynamics:
        return GameDynamics(self.action_counts, self.transition, self.initial_dist,
                            self.discount, self.game_id)


def make_game(transition, rewards, initial_dist, discount, action_counts=None,
              reward_bound=None, game_id="game") -> MarkovGame:
    """Build a game from a dense (S, J, S) tensor or a (S*J, S) sparse matrix.

    ``rewards`` has shape (N, S, J) or (N, S, A_1, ..., A_N).
    """
    initial_dist = np.asarray(initial_dist, dtype=float)
    S = initial_dist.shape[0]
    rewards = np.asarray(rewards, dtype=float)
    if action_counts is None:
        if rewards.ndim < 3 or rewards.ndim != 2 + rewards.shape[0]:
            raise ValueError("action_counts required for flat (N, S, J) rewards")
        action_counts = rewards.shape[2:]
    action_counts = tuple(int(a) for a in action_counts)
    N, J = len(action_counts), int(np.prod(action_counts))
    rewards = rewards.reshape(N, S, J).copy()
    if sp.issparse(transition):
        T = sp.csr_matrix(transition, dtype=float)
    else:
        T = sp.csr_matrix(np.asarray(transition, dtype=float).reshape(S * J, S))
    T.eliminate_zeros()
    T.sort_indices()
    if T.shape != (S * J, S):
        raise ValueError(f"transition shape {T.shape} != {(S * J, S)}")
    if reward_bound is None:
        reward_bound = float(np.abs(rewards).max()) if rewards.size else 0.0
    return MarkovGame(action_counts, T, _freeze(initial_dist.copy()), float(discount),
                      game_id, _freeze(rewards), float(reward_bound))


@dataclass(frozen=True)
class Violation:
    field: str
    index: tuple
    magnitude: float

    def __str__(self):
        return f"{self.field}{list(self.index)}: {self.magnitude:.3g}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_game(g: GameDynamics) -> ValidationReport:
    out = []
    S, J = g.num_states, g.num_joint
    T = g.transition
    if T.shape != (S * J, S):
        out.append(Violation("transition_shape", T.shape, float("nan")))
    else:
        if T.nnz and T.data.min() < 0:
            for r in np.unique(T.nonzero()[0][T.data < 0]):
                out.append(Violation("transition_negative", divmod(int(r), J), float(T[r].min())))
        sums = np.asarray(T.sum(axis=1)).ravel()
        for r in np.flatnonzero(np.abs(sums - 1) > STOCHASTIC_ATOL):
            out.append(Violation("transition_row_sum", divmod(int(r), J), float(sums[r])))
    eta = g.initial_dist
    if (eta < 0).any():
        out.append(Violation("initial_dist_negative", (int(np.argmin(eta)),), float(eta.min())))
    if abs(eta.sum() - 1) > STOCHASTIC_ATOL:
        out.append(Violation("initial_dist_sum", (), float(eta.sum())))
    if not 0 <= g.discount < 1:
        out.append(Violation("discount", (), float(g.discount)))
    if any(a < 1 for a in g.action_counts):
        out.append(Violation("action_counts", (), float(min(g.action_counts))))
    rewards = getattr(g, "rewards", None)
    if rewards is not None:
        if rewards.shape != (g.num_agents, S, J):
            out.append(Violation("rewards_shape", rewards.shape, float("nan")))
        elif not np.isfinite(rewards).all():
            out.append(Violation("rewards_finite", (), float("nan")))
        elif rewards.size and np.abs(rewards).max() > g.reward_bound + 1e-12:
            idx = np.unravel_index(np.argmax(np.abs(rewards)), rewards.shape)
            out.append(Violation("reward_bound", tuple(int(i) for i in idx),
                                 float(np.abs(rewards).max())))
    return ValidationReport(tuple(out))


def require_valid(g: GameDynamics) -> None:
    report = validate_game(g)
    if not report.ok:
        raise ValueError("invalid game: " + "; ".join(map(str, report.violations[:5])))


# ---------------------------------------------------------------------------
# Observations and policies


@dataclass(frozen=True, eq=False)
class ObservationMap:
    """Deterministic per-agent projections o_i: state -> observation."""

    maps: tuple[np.ndarray, ...]
    counts: tuple[int, ...]

    @classmethod
    def identity(cls, num_agents: int, num_states: int) -> "ObservationMap":
        ident = _freeze(np.arange(num_states))
        return cls(tuple(ident for _ in range(num_agents)), (num_states,) * num_agents)

    @classmethod
    def from_arrays(cls, maps: Iterable[Sequence[int]], counts=None) -> "ObservationMap":
        maps = tuple(_freeze(np.asarray(m, dtype=np.int64).copy()) for m in maps)
        if counts is None:
            counts = tuple(int(m.max()) + 1 for m in maps)
        counts = tuple(int(c) for c in counts)
        for m, c in zip(maps, counts):
            if m.min() < 0 or m.max() >= c:
                raise ValueError("observation index out of range")
        return cls(maps, counts)

    @property
    def num_agents(self) -> int:
        return len(self.maps)


def _check_rows(table: np.ndarray, atol: float = 1e-12) -> None:
    if table.ndim != 2 or (table < 0).any() or np.abs(table.sum(axis=1) - 1).max() > atol:
        raise ValueError("policy rows must be probability vectors")


@dataclass(frozen=True, eq=False)
class JointPolicy:
    """Product of per-agent policies pi_i(a_i | o_i(s))."""

    tables: tuple[np.ndarray, ...]
    observations: ObservationMap

    def __post_init__(self):
        if len(self.tables) != self.observations.num_agents:
            raise ValueError("one policy table per agent required")
        for t, c in zip(self.tables, self.observations.counts):
            if t.shape[0] != c:
                raise ValueError(f"policy has {t.shape[0]} rows for {c} observations")
            _check_rows(t, 1e-9)

    @classmethod
    def from_tables(cls, tables, observations: ObservationMap | None = None,
                    num_states: int | None = None) -> "JointPolicy":
        tables = tuple(_freeze(np.array(t, dtype=float)) for t in tables)
        if observations is None:
            num_states = tables[0].shape[0] if num_states is None else num_states
            observations = ObservationMap.identity(len(tables), num_states)
        return cls(tables, observations)

    @classmethod
    def uniform(cls, action_counts, observations: ObservationMap) -> "JointPolicy":
        return cls.from_tables([np.full((c, a), 1.0 / a)
                                for a, c in zip(action_counts, observations.counts)],
                               observations)

    @property
    def num_agents(self) -> int:
        return len(self.tables)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return tuple(t.shape[1] for t in self.tables)

    def state_probs(self, i: int) -> np.ndarray:
        """pi_i(a_i | o_i(s)) as an (S, A_i) array."""
        return self.tables[i][self.observations.maps[i]]

    def joint_probs(self, exclude: int | None = None) -> np.ndarray:
        """Joint action probabilities (S, J); with ``exclude`` the factor of that agent is 1."""
        counts = self.action_counts
        out = None
        for i in range(self.num_agents):
            p = self.state_probs(i)
            if i == exclude:
                p = np.ones_like(p)
            shape = [p.shape[0]] + [1] * len(counts)
            shape[1 + i] = counts[i]
            p = p.reshape(shape)
            out = p if out is None else out * p
        return out.reshape(out.shape[0], -1) if out.ndim > 2 else out

    def replace(self, i: int, table: np.ndarray, obs_map: np.ndarray | None = None) -> "JointPolicy":
        """Swap in agent i's table; used to build (pi_i, pi'_{-i}) mixtures."""
        tables = list(self.tables)
        tables[i] = _freeze(np.array(table, dtype=float))
        maps, counts = list(self.observations.maps), list(self.observations.counts)
        if obs_map is not None:
            maps[i] = _freeze(np.asarray(obs_map, dtype=np.int64).copy())
            counts[i] = tables[i].shape[0]
        return JointPolicy(tuple(tables), ObservationMap(tuple(maps), tuple(counts)))

    def agent_view(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.tables[i], self.observations.maps[i]


def joint_policy_prob(pi: JointPolicy, s: int, a: Sequence[int]) -> float:
    if len(a) != pi.num_agents:
        raise IndexError("joint action has wrong length")
    prob = 1.0
    for i, ai in enumerate(a):
        table, omap = pi.agent_view(i)
        if not 0 <= ai < table.shape[1]:
            raise IndexError(f"action {ai} out of range for agent {i}")
        prob *= float(table[omap[s], ai])
    return prob


def compose_policy(pi_i: np.ndarray, i: int, others: JointPolicy,
                   obs_map: np.ndarray | None = None) -> JointPolicy:
    """Joint policy with agent i playing ``pi_i`` and everyone else from ``others``."""
    if others.num_agents == 1 and i == 0 and obs_map is None:
        return others.replace(0, pi_i)
    if pi_i.shape[1] != others.action_counts[i]:
        raise ValueError("action count mismatch")
    if obs_map is None and pi_i.shape[0] != others.observations.counts[i]:
        raise ValueError("observation count mismatch")
    return others.replace(i, pi_i, obs_map)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray   # (H,)
    actions: np.ndarray  # (H, N)

    @property
    def horizon(self) -> int:
        return len(self.states)

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions))


@dataclass(frozen=True, eq=False)
class DemonstrationSet:
    trajectories: tuple[Trajectory, ...]
    game_id: str
    num_agents: int
    num_states: int
    horizon: int
    seed: int

    @property
    def episodes(self) -> int:
        return len(self.trajectories)

    def __eq__(self, other):
        return (isinstance(other, DemonstrationSet)
                and (self.game_id, self.num_agents, self.num_states, self.horizon, self.seed)
                == (other.game_id, other.num_agents, other.num_states, other.horizon, other.seed)
                and self.trajectories == other.trajectories)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """States (M, H) and actions (M, H, N)."""
        if not self.trajectories:
            return (np.zeros((0, self.horizon), np.int64),
                    np.zeros((0, self.horizon, self.num_agents), np.int64))
        return (np.stack([t.states for t in self.trajectories]),
                np.stack([t.actions for t in self.trajectories]))


@dataclass(frozen=True, eq=False)
class Rollouts:
    """A batch of sampled episodes, including the state reached after the last step."""

    states: np.ndarray   # (B, H + 1)
    actions: np.ndarray  # (B, H, N)
    joint: np.ndarray    # (B, H)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


def _sample_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    idx = (u[:, None] >= cum).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


class _TransitionSampler:
    def __init__(self, T: sp.csr_matrix):
        self.indptr = T.indptr
        self.indices = T.indices
        self.cum = np.cumsum(T.data)
        self.start = np.concatenate([[0.0], self.cum])[T.indptr[:-1]]

    def __call__(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        lo, hi = self.indptr[rows], self.indptr[rows + 1]
        mass = self.cum[hi - 1] - self.start[rows]
        k = np.searchsorted(self.cum, self.start[rows] + u * mass, side="right")
        k = np.clip(k, lo, hi - 1)
        return self.indices[k]


def sample_rollouts(g: GameDynamics, pi: JointPolicy, episodes: int, horizon: int,
                    rng: RngConfig | np.random.Generator) -> Rollouts:
    """Sample ``episodes`` trajectories of exactly ``horizon`` steps in lockstep."""
    gen = rng.generator() if isinstance(rng, RngConfig) else rng
    N, J = g.num_agents, g.num_joint
    sampler = _TransitionSampler(g.transition)
    states = np.empty((episodes, horizon + 1), dtype=np.int64)
    actions = np.empty((episodes, horizon, N), dtype=np.int64)
    states[:, 0] = _sample_categorical(np.broadcast_to(g.initial_dist, (episodes, g.num_states)),
                                       gen.random(episodes))
    for t in range(horizon):
        s = states[:, t]
        u = gen.random((N + 1, episodes))
        for i in range(N):
            actions[:, t, i] = _sample_categorical(pi.state_probs(i)[s], u[i])
        j = encode_joint(g.action_counts, actions[:, t]) if N > 1 else actions[:, t, 0]
        states[:, t + 1] = sampler(s * J + j, u[N])
    joint = encode_joint(g.action_counts, actions) if N > 1 else actions[..., 0].copy()
    return Rollouts(states, actions, np.asarray(joint, dtype=np.int64))


def sample_trajectory(g: GameDynamics, pi: JointPolicy, horizon: int, rng: RngConfig) -> Trajectory:
    require_valid(g)
    if horizon < 1:
        raise ValueError("horizon must be positive")
    r = sample_rollouts(g, pi, 1, horizon, rng)
    return Trajectory(_freeze(r.states[0, :-1].copy()), _freeze(r.actions[0].copy()))


def collect_demonstrations(g: GameDynamics, pi_expert: JointPolicy, episodes: int,
                           horizon: int = 50, rng: RngConfig = RngConfig(0, "sampling")
                           ) -> DemonstrationSet:
    require_valid(g)
    if episodes < 1:
        raise ValueError("need at least one episode")
    r = sample_rollouts(g, pi_expert, episodes, horizon, rng)
    trajs = tuple(Trajectory(_freeze(r.states[m, :-1].copy()), _freeze(r.actions[m].copy()))
                  for m in range(episodes))
    return DemonstrationSet(trajs, g.game_id, g.num_agents, g.num_states, horizon, rng.seed)


# ---------------------------------------------------------------------------
# Demonstration codec
#
# header:  game_id N |S| horizon M seed
# record:  s_0 a_0^1 .. a_0^N s_1 a_1^1 .. a_1^N ...


def encode_demonstrations(d: DemonstrationSet) -> str:
    if " " in d.game_id or not d.game_id:
        raise ValueError("game_id must be a non-empty token without spaces")
    lines = [f"{d.game_id} {d.num_agents} {d.num_states} {d.horizon} {d.episodes} {d.seed}"]
    for t in d.trajectories:
        flat = np.concatenate([t.states[:, None], t.actions], axis=1).ravel()
        lines.append(" ".join(map(str, flat.tolist())))
    return "\n".join(lines) + "\n"


def decode_demonstrations(text: str) -> DemonstrationSet:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DecodeError(1, "missing header")
    head = lines[0].split(" ")
    if len(head) != 6:
        raise DecodeError(1, "header needs 'game_id N |S| horizon M seed'")
    try:
        game_id = head[0]
        N, S, H, M, seed = (int(x) for x in head[1:])
    except ValueError:
        raise DecodeError(1, "non-integer header field") from None
    if len(lines) - 1 != M:
        raise DecodeError(len(lines) + 1 if len(lines) - 1 < M else M + 2,
                          f"expected {M} records, found {len(lines) - 1}")
    trajs = []
    for ln, line in enumerate(lines[1:], start=2):
        try:
            flat = np.array([int(x) for x in line.split(" ")], dtype=np.int64)
        except ValueError:
            raise DecodeError(ln, "non-integer token") from None
        if flat.size != H * (N + 1):
            raise DecodeError(ln, f"expected {H * (N + 1)} integers, found {flat.size}")
        rows = flat.reshape(H, N + 1)
        if (rows < 0).any() or (rows[:, 0] >= S).any():
            raise DecodeError(ln, "index out of range")
        trajs.append(Trajectory(_freeze(rows[:, 0].copy()), _freeze(rows[:, 1:].copy())))
    return DemonstrationSet(tuple(trajs), game_id, N, S, H, seed)


def save_demonstrations(d: DemonstrationSet, path: str | Path) -> None:
    Path(path).write_text(encode_demonstrations(d))


def load_demonstrations(path: str | Path) -> DemonstrationSet:
    return decode_demonstrations(Path(path).read_text())


def demo_codec_roundtrip(d: DemonstrationSet) -> DemonstrationSet:
    return decode_demonstrations(encode_demonstrations(d))


# ---------------------------------------------------------------------------
# Random instances (used by tests and the theory harness)


def random_game(rng: np.random.Generator, num_agents=2, num_states=3, action_counts=None,
                discount=0.9, branching=None, reward_scale=1.0, game_id="random") -> MarkovGame:
    if action_counts is None:
        action_counts = (2,) * num_agents
    action_counts = tuple(action_counts)
    J = int(np.prod(action_counts))
    S = num_states
    T = np.zeros((S, J, S))
    b = S if branching is None else branching
    for s in range(S):
        for j in range(J):
            nxt = rng.choice(S, size=b, replace=False)
            T[s, j, nxt] = rng.dirichlet(np.ones(b))
    T /= T.sum(axis=2, keepdims=True)
    R = rng.uniform(-reward_scale, reward_scale, size=(len(action_counts), S, J))
    eta = rng.dirichlet(np.ones(S))
    return make_game(T, R, eta, discount, action_counts, reward_bound=reward_scale,
                     game_id=game_id)


def random_policy(rng: np.random.Generator, action_counts, num_states,
                  observations: ObservationMap | None = None, concentration=1.0) -> JointPolicy:
    if observations is None:
        observations = ObservationMap.identity(len(action_counts), num_states)
    tables = [rng.dirichlet(np.full(a, concentration), size=c)
              for a, c in zip(action_counts, observations.counts)]
    return JointPolicy.from_tables(tables, observations)


def deterministic_policy(choices: Sequence[Sequence[int]], action_counts,
                         observations: ObservationMap) -> JointPolicy:
    tables = []
    for ch, a in zip(choices, action_counts):
        t = np.zeros((len(ch), a))
        t[np.arange(len(ch)), ch] = 1.0
        tables.append(t)
    return JointPolicy.from_tables(tables, observations)


# ---------------------------------------------------------------------------
# Policy table codec
#
# policy N |S|
# agent i O_i A_i
# <observation index of every state>
# <O_i rows of A_i probabilities, 12 significant digits>


def encode_policy(pi: JointPolicy) -> str:
    S = len(pi.observations.maps[0])
    lines = [f"policy {pi.num_agents} {S}"]
    for i, (table, omap) in enumerate(zip(pi.tables, pi.observations.maps)):
        lines.append(f"agent {i} {table.shape[0]} {table.shape[1]}")
        lines.append(" ".join(map(str, omap.tolist())))
        lines.extend(" ".join(f"{p:.12g}" for p in row) for row in table)
    return "\n".join(lines) + "\n"


def decode_policy(text: str) -> JointPolicy:
    lines = text.splitlines()
    pos = 0

    def take(n_fields=None):
        nonlocal pos
        if pos >= len(lines):
            raise DecodeError(pos + 1, "unexpected end of file")
        parts = lines[pos].split()
        pos += 1
        if n_fields is not None and len(parts) != n_fields:
            raise DecodeError(pos, f"expected {n_fields} fields, found {len(parts)}")
        return parts

    head = take(3)
    if head[0] != "policy":
        raise DecodeError(1, "missing 'policy' header")
    try:
        N, S = int(head[1]), int(head[2])
        tables, maps = [], []
        for i in range(N):
            tag, idx, O, A = take(4)
            if tag != "agent" or int(idx) != i:
                raise DecodeError(pos, f"expected header for agent {i}")
            O, A = int(O), int(A)
            maps.append([int(x) for x in take(S)])
            rows = [[float(x) for x in take(A)] for _ in range(O)]
            t = np.array(rows, dtype=float).reshape(O, A)
            if (t < 0).any():
                raise DecodeError(pos, "negative probability")
            tables.append(t / t.sum(axis=1, keepdims=True))
    except ValueError as e:
        if isinstance(e, DecodeError):
            raise
        raise DecodeError(pos, f"malformed number: {e}") from None
    if pos != len(lines):
        raise DecodeError(pos + 1, "trailing content")
    counts = [t.shape[0] for t in tables]
    return JointPolicy.from_tables(tables, ObservationMap.from_arrays(maps, counts))
