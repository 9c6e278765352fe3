"""Stage games of the switching recursion, stopping games and signal draws.

In the switching game each player's stage action is *stay* (0) or *switch*
(1).  Given the continuation value ``Y_i(zeta')`` of every candidate next
regime, the cell for actions ``(a1, a2)`` pays player ``i`` the continuation
of the regime reached, less ``i``'s switching cost when ``a_i = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matrix_game import ce_slacks, select_ce_batch

_CONSTRAINTS = ("p1-told-0", "p1-told-1", "p2-told-0", "p2-told-1")


def switch_costs(pp, current):
    """Cost for a producer of leaving ``current`` regime (0/1 array)."""
    return np.where(np.asarray(current) == 0, pp.K01, pp.K10)


def cell_regimes(zeta):
    """Regime index reached from ``zeta`` for each action pair, shape ``(..., 2, 2)``."""
    zeta = np.asarray(zeta)
    z1, z2 = zeta // 2, zeta % 2
    out = np.empty(zeta.shape + (2, 2), dtype=np.int64)
    for a1 in (0, 1):
        for a2 in (0, 1):
            out[..., a1, a2] = 2 * (z1 ^ a1) + (z2 ^ a2)
    return out


def build_stage_game(cont, zeta, pp1, pp2):
    """Assemble the stage bimatrix game(s).

    Parameters
    ----------
    cont : array ``(..., 2, 4)``
        ``cont[..., i, r]`` is player ``i``'s continuation value (next-stage
        expectation plus this stage's spread) if the joint regime chosen for
        this stage is ``r``.
    zeta : int or int array broadcastable to ``cont.shape[:-2]``
        Current (inherited) joint regime index.

    Returns
    -------
    array ``(..., 2, 2, 2)`` indexed ``[player, a1, a2]``.
    """
    cont = np.asarray(cont, dtype=float)
    shape = np.broadcast_shapes(cont.shape[:-2], np.shape(zeta))
    cont = np.broadcast_to(cont, shape + cont.shape[-2:]).reshape(-1, 2, 4)
    zeta = np.broadcast_to(np.asarray(zeta), shape).reshape(-1)
    M = len(zeta)
    # the cell (a1, a2) reaches regime zeta ^ (2 a1 + a2)
    idx = np.arange(M)[:, None, None] * 8 + np.arange(2)[:, None] * 4 + (zeta[:, None, None] ^ np.arange(4))
    game = cont.reshape(-1).take(idx).reshape(M, 2, 2, 2)
    game[:, 0, 1, :] -= switch_costs(pp1, zeta // 2)[:, None]
    game[:, 1, :, 1] -= switch_costs(pp2, zeta % 2)[:, None]
    game = game.reshape(shape + (2, 2, 2))
    return game


def emission_weights(zeta, pp1, pp2):
    """Allowances consumed in the regime reached by each action pair, ``(..., 4)``."""
    reached = cell_regimes(np.asarray(zeta)).reshape(np.shape(zeta) + (4,))
    return pp1.b * (reached // 2) + pp2.b * (reached % 2)


# ----------------------------------------------------------------------------
# stopping games
# ----------------------------------------------------------------------------

@dataclass
class StoppingSolution:
    values: np.ndarray   # (T+1, 2, n)
    gammas: np.ndarray   # (T, n, 4)
    games: np.ndarray    # (T, n, 2, 2, 2)
    kinds: np.ndarray    # (T, n)


def stopping_game_values(Z, law, transition=None):
    """Backward recursion for a two-player stopping game on a finite state space.

    ``Z`` has shape ``(T+1, 2, 2, 2, n)``: ``Z[t, i, j, k]`` is player ``i``'s
    payoff at stage ``t`` when player 1 takes action ``j`` and player 2 action
    ``k`` (0 = continue, 1 = stop), over ``n`` states.  ``Z[t, i, 0, 0]`` is the
    running reward for continuing.  ``transition`` is an ``(n, n)``
    row-stochastic matrix (identity for a deterministic single-state game).
    Terminal values are ``Z11(T)``.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 5 or Z.shape[1:4] != (2, 2, 2):
        raise ValueError("Z must have shape (T+1, 2, 2, 2, n)")
    T = Z.shape[0] - 1
    if T < 1:
        raise ValueError("horizon must be at least one stage")
    n = Z.shape[-1]
    Q = np.eye(n) if transition is None else transition
    V = np.empty((T + 1, 2, n))
    V[T] = Z[T, :, 1, 1]
    gammas = np.empty((T, n, 4))
    games = np.empty((T, n, 2, 2, 2))
    kinds = np.empty((T, n), dtype=np.int8)
    for t in range(T - 1, -1, -1):
        game = np.moveaxis(Z[t], -1, 0).copy()
        for i in (0, 1):
            game[:, i, 0, 0] += Q @ V[t + 1, i]
        g, v, k = select_ce_batch(game, law)
        V[t] = v.T
        gammas[t], games[t], kinds[t] = g, game, k
    return StoppingSolution(V, gammas, games, kinds)


def stopping_payoff(Z, tau1, tau2, s=0):
    """Realised reward pair of a deterministic stopping game for stop times ``tau1, tau2``.

    ``Z`` is ``(T+1, 2, 2, 2)`` (single state).
    """
    first = min(tau1, tau2)
    j, k = int(tau1 == first), int(tau2 == first)
    out = Z[first, :, j, k].copy()
    # accumulate backwards, in the same order as the value recursion
    for t in range(first - 1, s - 1, -1):
        out = Z[t, :, 0, 0] + out
    return out


@dataclass(frozen=True)
class Violation:
    stage: int
    node: int
    constraint: str
    slack: float


def verify_stage_rationality(games, gammas, tol=1e-9):
    """Check the four stagewise incentive inequalities everywhere.

    ``games`` is ``(T, ..., 2, 2, 2)`` and ``gammas`` ``(T, ..., 4)``.  Returns
    the list of violations (slack below ``-tol``); node indices refer to the
    flattened trailing state axes.
    """
    games = np.asarray(games, dtype=float)
    T = games.shape[0]
    g = np.asarray(gammas, dtype=float).reshape(T, -1, 4)
    slack = ce_slacks(games.reshape(T, -1, 2, 2, 2), g)
    out = []
    for t, node, c in zip(*np.nonzero(slack < -tol)):
        out.append(Violation(int(t), int(node), _CONSTRAINTS[c], float(slack[t, node, c])))
    return out


# ----------------------------------------------------------------------------
# randomisation machinery
# ----------------------------------------------------------------------------

def draw_signals(gamma, u):
    """Map uniforms to recommended action pairs ``(mu1, mu2)``.

    ``[0, 1)`` is cut into consecutive intervals of lengths g00, g01, g10,
    g11; the pair whose interval contains ``u`` is returned.  Works on a
    single distribution or broadcasts over leading axes.
    """
    g = np.asarray(gamma, dtype=float)
    u = np.asarray(u, dtype=float)
    c = np.cumsum(g, axis=-1)
    tail = np.cumsum(g[..., ::-1], axis=-1)[..., ::-1]
    idx = np.zeros(np.broadcast_shapes(g.shape[:-1], u.shape), dtype=np.int64)
    for k in (1, 2, 3):
        thresh = np.where(tail[..., k] > 0, c[..., k - 1], np.inf)
        idx += u >= thresh
    if idx.ndim == 0:
        return int(idx) // 2, int(idx) % 2
    return idx // 2, idx % 2


def implied_conditional(gamma, my_signal, player):
    """Posterior over the opponent's action given a player's own recommendation."""
    g = np.asarray(gamma, dtype=float).reshape(2, 2)
    if player == 1:
        w = g[my_signal, :]
    elif player == 2:
        w = g[:, my_signal]
    else:
        raise ValueError("player must be 1 or 2")
    total = w.sum()
    if total <= 0:
        raise ValueError(f"signal {my_signal} has zero probability for player {player}")
    return tuple(float(v) for v in w / total)


def randomized_stop(p, u):
    """First stage ``t`` with ``u[t] <= p[t]``; ``len(p)`` if there is none."""
    p = np.asarray(p, dtype=float)
    hit = np.nonzero(np.asarray(u, dtype=float)[: len(p)] <= p)[0]
    return int(hit[0]) if hit.size else len(p)
