"""Seeded property sweeps over small random games, one result row per check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .equilibria import solve_team_vi
from .exact_solvers import (dual_value, mixed_gap, nash_check, nash_residual, occupancy_measure,
                            psi_star_ga, psi_star_ga_numeric, tstep_nash_check)
from .game_core import (MarkovGame, make_game, random_game, random_policy, validate_game)


@dataclass(frozen=True)
class CheckRow:
    suite: str
    check: str
    value: float
    threshold: float
    passed: bool
    gating: bool = True  # informational rows never fail a run
    instance: int = -1   # worst or first offending instance, -1 when none

    @property
    def name(self) -> str:
        return f"{self.suite}.{self.check}"


def _rng(seed: int, suite: str, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k, sum(map(ord, suite))])


def _instance(rng, max_agents=3, max_states=5, max_actions=3, discount=0.9) -> MarkovGame:
    N = int(rng.integers(1, max_agents + 1))
    S = int(rng.integers(2, max_states + 1))
    A = tuple(int(a) for a in rng.integers(2, max_actions + 1, size=N))
    return random_game(rng, N, S, A, discount)


def team_version(g: MarkovGame) -> MarkovGame:
    """The same dynamics with every agent receiving agent 0's reward."""
    R = np.broadcast_to(g.rewards[0], g.rewards.shape)
    return make_game(g.transition, R, g.initial_dist, g.discount, g.action_counts,
                     game_id=g.game_id)


def corrupt(g: MarkovGame) -> MarkovGame:
    """Copy of ``g`` whose first transition row sums to 1.5."""
    T = g.transition.tolil(copy=True)
    T[0, 0] = T[0, 0] + 0.5
    return MarkovGame(g.action_counts, sp.csr_matrix(T), g.initial_dist, g.discount,
                      g.game_id, g.rewards, g.reward_bound)


def check_validation(seed: int, budget: int, corrupted: bool = False) -> list[CheckRow]:
    bad, first = 0, -1
    for k in range(budget):
        g = _instance(_rng(seed, "validation", k))
        if corrupted and k == 0:
            g = corrupt(g)
        if not validate_game(g).ok:
            bad += 1
            first = k if first < 0 else first
    return [CheckRow("validation", "invalid_games", bad, 0, bad == 0, instance=first)]


def check_residual(seed: int, budget: int, tol: float = 1e-8) -> list[CheckRow]:
    res = []
    for k in range(budget):
        rng = _rng(seed, "residual", k)
        g = _instance(rng)
        pi = random_policy(rng, g.action_counts, g.num_states)
        res.append(abs(nash_residual(g, pi)))
    k = int(np.argmax(res))
    return [CheckRow("residual", "max_abs_residual", res[k], tol, res[k] <= tol, instance=k)]


def tstep_instances(seed: int, count: int):
    """Alternating certified-Nash (team optimum) and random (non-Nash) pairs."""
    out = []
    for k in range(count):
        rng = _rng(seed, "tstep", k)
        g = _instance(rng, max_agents=2, max_states=3, max_actions=2)
        if k % 2 == 0:
            g = team_version(g)
            pi, _ = solve_team_vi(g, tol=1e-12)
        else:
            pi = random_policy(rng, g.action_counts, g.num_states)
        out.append((g, pi))
    return out


def check_tstep(seed: int, budget: int, tol: float = 1e-6, ts=(2, 3)) -> list[CheckRow]:
    mismatches = nash = 0
    first = -1
    for k, (g, pi) in enumerate(tstep_instances(seed, budget)):
        one = nash_check(g, pi, tol).is_nash
        nash += one
        for t in ts:
            if tstep_nash_check(g, pi, t, tol).is_nash != one:
                mismatches += 1
                first = k if first < 0 else first
    return [CheckRow("tstep", "verdict_mismatches", mismatches, 0, mismatches == 0,
                     instance=first),
            CheckRow("tstep", "nash_instances", nash, 1, 0 < nash < budget)]


def dual_errors(g: MarkovGame, pi_star, pi, ts) -> np.ndarray:
    gap = mixed_gap(g, pi_star, pi)
    return np.array([abs(dual_value(g, pi_star, pi, t) - gap) for t in ts])


def check_dual(seed: int, budget: int, ts=range(1, 9), slack: float = 1e-9
                   ) -> list[CheckRow]:
    ts = list(ts)
    over_bound = increases = 0
    first_over = first_rise = -1
    worst_zero = 0.0
    for k in range(budget):
        rng = _rng(seed, "dual", k)
        g = _instance(rng, max_states=4)
        pi_star = random_policy(rng, g.action_counts, g.num_states)
        pi = random_policy(rng, g.action_counts, g.num_states)
        err = dual_errors(g, pi_star, pi, ts)
        bound = np.array([2 * g.num_agents * g.reward_bound * g.discount**t / (1 - g.discount)
                          for t in ts])
        over = int((err > bound).sum())
        rise = int((np.diff(err) > slack).sum())
        over_bound += over
        increases += rise
        first_over = k if over and first_over < 0 else first_over
        first_rise = k if rise and first_rise < 0 else first_rise
        worst_zero = max(worst_zero, max(abs(dual_value(g, pi_star, pi_star, t)) for t in ts))
    return [CheckRow("dual", "bound_violations", over_bound, 0, over_bound == 0,
                     instance=first_over),
            # the error bound decays geometrically but e_t itself can rise for a few steps
            CheckRow("dual", "error_increases", increases, 0, increases == 0, gating=False,
                     instance=first_rise),
            CheckRow("dual", "max_abs_dual_at_expert", worst_zero, 1e-10,
                     worst_zero <= 1e-10)]


def check_occupancy(seed: int, budget: int, tol: float = 1e-9) -> list[CheckRow]:
    worst = 0.0
    for k in range(budget):
        rng = _rng(seed, "occupancy", k)
        g = _instance(rng)
        pi = random_policy(rng, g.action_counts, g.num_states)
        worst = max(worst, abs(occupancy_measure(g, pi).joint.sum() - 1 / (1 - g.discount)))
    return [CheckRow("occupancy", "max_mass_error", float(worst), tol, bool(worst <= tol))]


def check_psi_star(seed: int, budget: int, tol: float = 1e-4) -> list[CheckRow]:
    worst = worst_same = 0.0
    for k in range(budget):
        rng = _rng(seed, "psi_star", k)
        n = int(rng.integers(2, 12))
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        worst = max(worst, abs(psi_star_ga(a, b) - psi_star_ga_numeric(a, b)))
        worst_same = max(worst_same, abs(psi_star_ga(a, a) + 2 * np.log(2)))
    return [CheckRow("psi_star", "closed_vs_numeric", worst, tol, worst <= tol),
            CheckRow("psi_star", "identical_inputs", float(worst_same), 1e-12,
                     bool(worst_same <= 1e-12))]


SUITES = {
    "validation": check_validation,
    "residual": check_residual,
    "tstep": check_tstep,
    "dual": check_dual,
    "occupancy": check_occupancy,
    "psi_star": check_psi_star,
}


def run_suites(names, seed: int = 0, budget: int = 20, corrupted: bool = False) -> list[CheckRow]:
    rows = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f"unknown suite {name!r}")
        if name == "validation":
            rows += check_validation(seed, budget, corrupted)
        else:
            rows += SUITES[name](seed, budget)
    return rows
