"""Expert construction with certified equilibria.

Team games are solved by value iteration on the joint-action MDP; two-player
zero-sum games by Shapley iteration with regret-matching matrix subgames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game_core import JointPolicy, MarkovGame, ObservationMap, require_valid


class SolverError(RuntimeError):
    pass


class MatrixGameNotConverged(SolverError):
    def __init__(self, message, row, col, value, exploitability):
        super().__init__(message)
        self.row, self.col, self.value, self.exploitability = row, col, value, exploitability


@dataclass
class SolverReport:
    iterations: int
    residual: float
    tolerance: float
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.residual <= self.tolerance


def _first_difference(a: np.ndarray, b: np.ndarray, atol=0.0):
    bad = np.argwhere(np.abs(a - b) > atol)
    return tuple(int(x) for x in bad[0]) if len(bad) else None


def check_team(g: MarkovGame) -> None:
    for i in range(1, g.num_agents):
        where = _first_difference(g.rewards[0], g.rewards[i])
        if where is not None:
            raise SolverError(f"rewards of agent 0 and agent {i} differ at (state, joint) {where}")


def check_zero_sum(g: MarkovGame) -> None:
    if g.num_agents != 2:
        raise SolverError(f"zero-sum solver needs 2 agents, got {g.num_agents}")
    where = _first_difference(g.rewards[0], -g.rewards[1], 1e-12)
    if where is not None:
        raise SolverError(f"r_1 != -r_2 at (state, joint) {where}")


def solve_team_vi(g: MarkovGame, tol: float = 1e-8, max_iters: int = 100_000
                  ) -> tuple[JointPolicy, SolverReport]:
    """Optimal deterministic joint policy of a common-reward game.

    Value iteration starts from the pessimistic bound min r / (1 - gamma), so the
    iterates (and the recorded eta-weighted values) are non-decreasing.  Greedy
    ties go to the lowest joint-action index.
    """
    require_valid(g)
    check_team(g)
    S, J, gamma = g.num_states, g.num_joint, g.discount
    r = g.rewards[0]
    v = np.full(S, r.min() / (1 - gamma))
    history = [float(g.initial_dist @ v)]
    # stop when the greedy policy is within tol of optimal: ||v' - v|| * gamma / (1 - gamma) <= tol
    stop = tol * (1 - gamma) / max(gamma, 1e-12)
    residual = np.inf
    for it in range(1, max_iters + 1):
        q = r + gamma * (g.transition @ v).reshape(S, J)
        v_new = q.max(axis=1)
        residual = float(np.abs(v_new - v).max())
        v = v_new
        history.append(float(g.initial_dist @ v))
        if residual <= stop:
            break
    q = r + gamma * (g.transition @ v).reshape(S, J)
    greedy = q.argmax(axis=1)
    choices = np.unravel_index(greedy, g.action_counts)
    tables = []
    for i, a in enumerate(g.action_counts):
        t = np.zeros((S, a))
        t[np.arange(S), choices[i]] = 1.0
        tables.append(t)
    policy = JointPolicy.from_tables(tables, ObservationMap.identity(g.num_agents, S))
    return policy, SolverReport(it, residual * gamma / (1 - gamma), tol, history)


# ---------------------------------------------------------------------------
# Matrix games


@dataclass(frozen=True)
class MatrixGame:
    payoff: np.ndarray  # row player's payoff; column player receives the negation

    def __post_init__(self):
        if not np.isfinite(self.payoff).all():
            raise ValueError("payoffs must be finite")


def _rm_plus_batched(U: np.ndarray, tol: float, max_iters: int, check_every: int = 10,
                     warm=None, polish_every: int | None = 50):
    """Alternating regret matching+ with linear averaging on a batch (K, m, n) of games.

    Returns (row, col, exploitability, iterations, regrets) for every game.
    """
    K, m, n = U.shape
    if warm is None:
        Rr, Rc = np.zeros((K, m)), np.zeros((K, n))
    else:
        Rr, Rc = warm[0].copy(), warm[1].copy()
    sum_r, sum_c = np.zeros((K, m)), np.zeros((K, n))
    active = np.ones(K, dtype=bool)

    def strat(R, size):
        pos = np.maximum(R, 0)
        tot = pos.sum(axis=1, keepdims=True)
        return np.where(tot > 0, pos / np.where(tot > 0, tot, 1), 1.0 / size)

    def exploit(x, y):
        return (np.einsum("kmn,kn->km", U, y).max(axis=1)
                - np.einsum("km,kmn->kn", x, U).min(axis=1))

    x, y = strat(Rr, m), strat(Rc, n)
    best_x, best_y = x.copy(), y.copy()
    best_e = exploit(x, y)
    it = 0
    while it < max_iters and active.any():
        it += 1
        x = strat(Rr, m)
        ux = np.einsum("kmn,kn->km", U, y)
        Rr = np.maximum(Rr + ux - (x * ux).sum(axis=1, keepdims=True), 0)
        x = strat(Rr, m)
        sum_r += it * x
        uy = -np.einsum("km,kmn->kn", x, U)
        Rc = np.maximum(Rc + uy - (y * uy).sum(axis=1, keepdims=True), 0)
        y = strat(Rc, n)
        sum_c += it * y
        if it % check_every == 0 or it == max_iters:
            ax = sum_r / sum_r.sum(axis=1, keepdims=True)
            ay = sum_c / sum_c.sum(axis=1, keepdims=True)
            e = exploit(ax, ay)
            better = e < best_e
            best_x[better], best_y[better], best_e[better] = ax[better], ay[better], e[better]
            if polish_every and it % polish_every == 0:
                for k in np.flatnonzero(best_e > tol):
                    pe, px, py = _polish(U[k], best_x[k], best_y[k])
                    if pe < best_e[k]:
                        best_x[k], best_y[k], best_e[k] = px, py, pe
            active = best_e > tol
    return best_x, best_y, best_e, it, (Rr, Rc)


def _exploitability(U, x, y) -> float:
    return float((U @ y).max() - (x @ U).min())


def _equalize(Usub: np.ndarray):
    """Strategy over the columns of ``Usub`` making every row indifferent, plus the value."""
    k, l = Usub.shape
    A = np.zeros((k + 1, l + 1))
    A[:k, :l], A[:k, l], A[k, :l] = Usub, -1.0, 1.0
    b = np.zeros(k + 1)
    b[k] = 1.0
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    return sol[:l], sol[l]


def _polish(U: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Exact saddle point on supports guessed from an approximate solution.

    Tries the supports {x > c * max x} for a ladder of cut-offs and solves the
    indifference equations on each; returns the best candidate found.
    """
    m, n = U.shape
    best = (_exploitability(U, x, y), x, y)
    for cut in (0.5, 0.1, 1e-2, 1e-3, 1e-4, 1e-6):
        I = np.flatnonzero(x >= cut * x.max())
        Jc = np.flatnonzero(y >= cut * y.max())
        yJ, _ = _equalize(U[np.ix_(I, Jc)])
        xI, _ = _equalize(-U[np.ix_(I, Jc)].T)
        if (yJ < -1e-12).any() or (xI < -1e-12).any():
            continue
        cx, cy = np.zeros(m), np.zeros(n)
        cx[I], cy[Jc] = np.maximum(xI, 0), np.maximum(yJ, 0)
        if cx.sum() <= 0 or cy.sum() <= 0:
            continue
        cx, cy = cx / cx.sum(), cy / cy.sum()
        e = _exploitability(U, cx, cy)
        if e < best[0]:
            best = (e, cx, cy)
    return best


def solve_matrix_game(m: MatrixGame | np.ndarray, tol: float = 1e-4, max_iters: int = 200_000,
                      polish_every: int = 50):
    """Mixed saddle point of a zero-sum matrix game by regret matching+.

    Every ``polish_every`` iterations the averaged strategies of unconverged
    games are polished on their apparent supports (see ``_polish``).

    Returns (row strategy, column strategy, value, SolverReport); raises
    MatrixGameNotConverged carrying the best pair found when the budget runs out.
    """
    U = np.asarray(m.payoff if isinstance(m, MatrixGame) else m, dtype=float)
    MatrixGame(U)
    x, y, e, it, _ = _rm_plus_batched(U[None], tol, max_iters, polish_every=polish_every)
    x, y, e = x[0], y[0], float(e[0])
    value = float(x @ U @ y)
    if e > tol:
        raise MatrixGameNotConverged(f"exploitability {e:.3g} > {tol} after {it} iterations",
                                     x, y, value, e)
    return x, y, value, SolverReport(it, e, tol)


def solve_zero_sum_shapley(g: MarkovGame, tol: float = 1e-4, max_sweeps: int = 10_000,
                           max_inner: int = 200_000) -> tuple[JointPolicy, SolverReport]:
    """Shapley iteration: per state solve the matrix game r_1(s, .) + gamma E[v(s')].

    The per-state subgames of a sweep are solved together; their regrets warm
    start the next sweep.  Outer stopping uses the value residual, and the final
    subgames are re-solved to exploitability tol * (1 - gamma) / 4.
    """
    require_valid(g)
    check_zero_sum(g)
    S, gamma = g.num_states, g.discount
    m, n = g.action_counts
    r = g.rewards[0].reshape(S, m, n)
    v = np.zeros(S)
    warm = None
    history = []
    inner_tol = tol * (1 - gamma) / 4
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        U = r + gamma * (g.transition @ v).reshape(S, m, n)
        x, y, e, _, warm = _rm_plus_batched(U, inner_tol, max_inner, warm=warm)
        v_new = np.einsum("km,kmn,kn->k", x, U, y)
        residual = float(np.abs(v_new - v).max())
        v = v_new
        history.append(residual)
        if residual * gamma / (1 - gamma) <= tol / 4:
            break
    if (e > inner_tol).any():
        raise SolverError(f"matrix subgames did not reach {inner_tol:.3g} (worst {e.max():.3g})")
    policy = JointPolicy.from_tables([x, y], ObservationMap.identity(2, S))
    return policy, SolverReport(sweep, residual * gamma / (1 - gamma), tol, history)
