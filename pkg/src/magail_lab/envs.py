"""Small grid analogs of four particle tasks, built as exact Markov games.

Every builder enumerates a factored state space, tabulates a transition for
each (state, joint action) and returns a MarkovGame together with the
per-agent ObservationMap describing what each agent sees.  Randomized layouts
live inside the state and are drawn by the initial distribution, so one
stationary game covers every episode.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .game_core import MarkovGame, ObservationMap, make_game, require_valid

STATE_BUDGET = 50_000

# stay, up, down, left, right as (dx, dy)
MOVES_2D = ((0, 0), (0, -1), (0, 1), (-1, 0), (1, 0))
MOVES_1D = (-1, 0, 1)


class EnvBudgetExceeded(ValueError):
    pass


@dataclass
class GridSpec:
    """Discretization parameters shared by all builders; unused fields are ignored."""

    width: int = 3
    height: int = 1
    num_agents: int = 2
    num_landmarks: int = 3
    collision_penalty: float = 1.0
    step_penalty: float = 0.0
    goal_reward: float = 1.0
    discount: float = 0.9
    randomized_layout: bool = True
    seed: int = 0
    message_cost: float = 0.1
    distance_scale: float = 0.25
    touch_reward: float = 1.0
    move_prob: float = 0.5
    obstacles: tuple = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if not 0 < self.move_prob <= 1:
            raise ValueError("move_prob must lie in (0, 1]")
        self.obstacles = tuple(tuple(int(v) for v in c) for c in self.obstacles)
        for v in (self.collision_penalty, self.step_penalty, self.goal_reward,
                  self.message_cost, self.distance_scale, self.touch_reward):
            if not np.isfinite(v):
                raise ValueError("reward parameters must be finite")

    @property
    def cells(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obstacles"] = [list(c) for c in self.obstacles]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grid spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "GridSpec":
        return cls.from_dict(json.loads(text))


def _check_budget(num_states: int) -> None:
    if num_states > STATE_BUDGET:
        raise EnvBudgetExceeded(f"{num_states} states exceed the budget of {STATE_BUDGET}")


def _tabulate(states: list[tuple], action_counts: tuple, step: Callable, reward: Callable,
              eta: np.ndarray, discount: float, game_id: str) -> MarkovGame:
    """Build a game from Python callbacks over enumerated factored states.

    step(state, joint) -> list of (next_state, prob); reward(state, joint) -> (N,).
    """
    index = {s: k for k, s in enumerate(states)}
    S, N = len(states), len(action_counts)
    joints = list(itertools.product(*(range(a) for a in action_counts)))
    J = len(joints)
    rows, cols, vals = [], [], []
    R = np.zeros((N, S, J))
    for k, s in enumerate(states):
        for j, a in enumerate(joints):
            for nxt, p in step(s, a):
                rows.append(k * J + j)
                cols.append(index[nxt])
                vals.append(p)
            R[:, k, j] = reward(s, a)
    T = sp.coo_matrix((vals, (rows, cols)), shape=(S * J, S)).tocsr()
    T.sum_duplicates()
    g = make_game(T, R, eta, discount, action_counts, game_id=game_id)
    require_valid(g)
    return g


# ---------------------------------------------------------------------------
# Cooperative communication


def build_coop_comm(spec: GridSpec | None = None) -> tuple[MarkovGame, ObservationMap]:
    """Speaker sees the goal color and can only emit a symbol; listener moves.

    State (listener cell, goal, last message) with message index C meaning "none".
    Landmark k sits at cell round(k * (width - 1) / (C - 1)).  The team earns
    goal_reward while the listener stands on the goal landmark, pays
    step_penalty every step and message_cost whenever the symbol differs from
    the goal (which makes the truthful code the unique optimal speaker).
    """
    spec = spec or GridSpec()
    W, C = spec.width, spec.num_landmarks
    if C < 1 or C > W:
        raise ValueError("need 1 <= num_landmarks <= width")
    _check_budget(W * C * (C + 1))
    landmark = [int(round(k * (W - 1) / max(C - 1, 1))) for k in range(C)]
    states = list(itertools.product(range(W), range(C), range(C + 1)))

    def step(s, a):
        cell, goal, _ = s
        msg, move = a
        return [((min(max(cell + MOVES_1D[move], 0), W - 1), goal, msg), 1.0)]

    def reward(s, a):
        cell, goal, _ = s
        r = (spec.goal_reward if cell == landmark[goal] else 0.0) - spec.step_penalty
        r -= spec.message_cost * (a[0] != goal)
        return (r, r)

    eta = np.array([1.0 if m == C else 0.0 for (_, _, m) in states])
    g = _tabulate(states, (C, 3), step, reward, eta / eta.sum(), spec.discount, "coop_comm")
    speaker = [goal for (_, goal, _) in states]
    listener = [cell * (C + 1) + m for (cell, _, m) in states]
    return g, ObservationMap.from_arrays([speaker, listener], (C, W * (C + 1)))


# ---------------------------------------------------------------------------
# Cooperative navigation


def _grid_cells(spec: GridSpec) -> list[tuple[int, int]]:
    blocked = set(spec.obstacles)
    return [(x, y) for y in range(spec.height) for x in range(spec.width)
            if (x, y) not in blocked]


def _move(cell, move, free: set) -> tuple[int, int]:
    dx, dy = MOVES_2D[move]
    nxt = (cell[0] + dx, cell[1] + dy)
    return nxt if nxt in free else cell


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _collisions(positions) -> int:
    return sum(p == q for p, q in itertools.combinations(positions, 2))


def build_coop_nav(spec: GridSpec | None = None) -> tuple[MarkovGame, ObservationMap]:
    """Agents spread over landmarks; landmark layout is part of the state.

    State (agent cells..., landmark layout) where the layout is a set of
    distinct cells.  Shared reward depends on the current state only:
    -(sum over landmarks of the distance to the nearest agent)
    - collision_penalty * (number of co-located agent pairs).
    With ``randomized_layout`` the initial distribution is uniform over all
    layouts; otherwise a single layout drawn from ``seed`` is used.
    """
    spec = spec or GridSpec(width=3, height=2, num_agents=2, num_landmarks=2)
    cells = _grid_cells(spec)
    free = set(cells)
    N, L = spec.num_agents, spec.num_landmarks
    if not 1 <= L <= len(cells):
        raise ValueError("landmark count must fit the free cells")
    layouts = list(itertools.combinations(range(len(cells)), L))
    if not spec.randomized_layout:
        pick = np.random.default_rng(spec.seed).integers(len(layouts))
        layouts = [layouts[pick]]
    _check_budget(len(cells) ** N * len(layouts))
    states = [pos + (lay,) for lay in layouts
              for pos in itertools.product(cells, repeat=N)]

    def step(s, a):
        return [(tuple(_move(c, m, free) for c, m in zip(s[:N], a)) + (s[N],), 1.0)]

    def reward(s, a):
        pos = s[:N]
        dist = sum(min(_manhattan(cells[l], p) for p in pos) for l in s[N])
        r = -dist - spec.collision_penalty * _collisions(pos)
        return (r,) * N

    eta = np.full(len(states), 1.0 / len(states))
    g = _tabulate(states, (5,) * N, step, reward, eta, spec.discount, "coop_nav")
    return g, ObservationMap.identity(N, g.num_states)


# ---------------------------------------------------------------------------
# Keep-away


def build_keep_away(spec: GridSpec | None = None) -> tuple[MarkovGame, ObservationMap]:
    """Two-agent zero-sum corridor; the adversary does not observe the target.

    State (pos1, pos2, target) with targets at the two corridor ends.  Both
    agents step left/stay/right; if they land on the same cell, agent one is
    pushed one cell away from its target.  r_1 = goal_reward on the target and
    -distance_scale * distance otherwise; r_2 = -r_1.
    """
    spec = spec or GridSpec(width=5, num_agents=2)
    W = spec.width
    if W < 2:
        raise ValueError("keep-away needs a corridor of at least 2 cells")
    _check_budget(W * W * 2)
    targets = (0, W - 1)
    states = list(itertools.product(range(W), range(W), range(2)))

    def clip(x):
        return min(max(x, 0), W - 1)

    def step(s, a):
        p1, p2, tg = s
        n1, n2 = clip(p1 + MOVES_1D[a[0]]), clip(p2 + MOVES_1D[a[1]])
        if n1 == n2:
            away = -1 if targets[tg] > n1 else 1
            n1 = clip(n1 + away)
        return [((n1, n2, tg), 1.0)]

    def reward(s, a):
        p1, _, tg = s
        d = abs(p1 - targets[tg])
        r = spec.goal_reward if d == 0 else -spec.distance_scale * d
        return (r, -r)

    eta = np.full(len(states), 1.0 / len(states))
    g = _tabulate(states, (3, 3), step, reward, eta, spec.discount, "keep_away")
    agent1 = list(range(len(states)))
    adversary = [p1 * W + p2 for (p1, p2, _) in states]
    return g, ObservationMap.from_arrays([agent1, adversary], (len(states), W * W))


# ---------------------------------------------------------------------------
# Predator-prey


def build_predator_prey(spec: GridSpec | None = None) -> tuple[MarkovGame, ObservationMap]:
    """Slow predators chase a fast prey; the prey is the last agent.

    Each predator's chosen move takes effect with probability ``move_prob``
    (otherwise it stays); the prey always moves.  While any predator shares the
    prey's cell, every predator earns touch_reward and the prey loses
    touch_reward, so r_prey = -r_predator entrywise.  Episodes start with no
    predator on the prey.
    """
    spec = spec or GridSpec(width=3, height=3, num_agents=3)
    cells = _grid_cells(spec)
    free = set(cells)
    K = spec.num_agents - 1
    if K < 1:
        raise ValueError("need at least one predator")
    _check_budget(len(cells) ** (K + 1))
    states = list(itertools.product(cells, repeat=K + 1))
    q = spec.move_prob

    def step(s, a):
        prey = _move(s[K], a[K], free)
        options = [((c,), (_move(c, m, free),)) for c, m in zip(s[:K], a[:K])]
        out = []
        for moved in itertools.product((False, True), repeat=K):
            p = 1.0
            pos = []
            for k, flag in enumerate(moved):
                p *= q if flag else 1 - q
                pos.append(options[k][1][0] if flag else options[k][0][0])
            if p > 0:
                out.append((tuple(pos) + (prey,), p))
        return out

    def reward(s, a):
        c = spec.touch_reward * any(p == s[K] for p in s[:K])
        return (c,) * K + (-c,)

    eta = np.array([0.0 if any(p == s[K] for p in s[:K]) else 1.0 for s in states])
    g = _tabulate(states, (5,) * (K + 1), step, reward, eta / eta.sum(), spec.discount,
                  "predator_prey")
    return g, ObservationMap.identity(K + 1, g.num_states)


# ---------------------------------------------------------------------------
# Registry


@dataclass(frozen=True)
class EnvEntry:
    builder: Callable
    kind: str  # "team" | "zero_sum" | "general"
    default: GridSpec = field(default_factory=GridSpec)


REGISTRY = {
    "coop_comm": EnvEntry(build_coop_comm, "team", GridSpec(width=3, num_landmarks=3)),
    "coop_nav": EnvEntry(build_coop_nav, "team",
                         GridSpec(width=3, height=2, num_agents=2, num_landmarks=2)),
    "keep_away": EnvEntry(build_keep_away, "zero_sum", GridSpec(width=5, num_agents=2)),
    "predator_prey": EnvEntry(build_predator_prey, "general",
                              GridSpec(width=3, height=3, num_agents=3)),
}


def build_env(tag: str, overrides: dict | None = None) -> tuple[MarkovGame, ObservationMap]:
    """Build a registered environment, applying JSON-style overrides to its default spec."""
    if tag not in REGISTRY:
        raise KeyError(f"unknown environment {tag!r}; known: {sorted(REGISTRY)}")
    entry = REGISTRY[tag]
    d = entry.default.to_dict()
    d.update(overrides or {})
    return entry.builder(GridSpec.from_dict(d))
