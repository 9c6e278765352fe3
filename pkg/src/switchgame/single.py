"""Single-producer optimal switching on the lattice.

One producer chooses on/off while the opponent's regime is frozen (either a
constant or a prescribed feedback rule).  This is the boundary case of the
two-player game and doubles as an oracle for the game engines.

Backward induction on the two-mode system, with ``V`` the value when the
producer enters the stage on and ``W`` when it enters off::

    on  = psi dt + E^on[V(t+1)]        off = E^off[W(t+1)]
    V(t) = max(on, off - K10)          W(t) = max(off, on - K01)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mca import spreads_on


@dataclass
class SinglePlayerSolution:
    V: np.ndarray            # (T+1, n) value entering on
    W: np.ndarray            # (T+1, n) value entering off
    policy_on: np.ndarray    # (T, n) True where an on producer switches off
    policy_off: np.ndarray   # (T, n) True where an off producer switches on
    player: int
    opponent: np.ndarray     # (T, n) opponent regime during each stage

    def value_at(self, lat, p, x, on=False, t=0):
        node = lat.node_of(p, x)
        return float((self.V if on else self.W)[t, node])

    def mode_after(self, t, on):
        """Regime (0/1) each node ends up in at stage ``t`` from the given entry mode."""
        if on:
            return (~self.policy_on[t]).astype(np.int64)
        return self.policy_off[t].astype(np.int64)


def _opponent_path(opponent, T, n):
    opp = np.asarray(opponent)
    if opp.ndim == 0:
        if int(opp) not in (0, 1):
            raise ValueError("a fixed opponent regime must be 0 or 1")
        return np.full((T, n), int(opp), dtype=np.int64)
    if opp.shape != (T, n):
        raise ValueError(f"opponent policy must have shape {(T, n)}, got {opp.shape}")
    return opp.astype(np.int64)


def _expect(lat, player, own, opp_t, values):
    """``E[values(t+1)]`` with the producer in mode ``own`` and the opponent in ``opp_t``."""
    if player == 1:
        regimes = 2 * own + opp_t
    else:
        regimes = 2 * opp_t + own
    out = np.empty(lat.n)
    for r in np.unique(regimes):
        sel = regimes == r
        out[sel] = (lat.Q[r] @ values)[sel]
    return out


def solve_single(lat, player, opponent=0, max_switches=None, horizon=None):
    """Optimal switching for ``player`` (1 or 2) against a frozen opponent.

    ``opponent`` is a fixed regime (0/1) or a ``(T, n)`` array giving the
    opponent's regime at each stage and node.  ``max_switches`` caps the
    number of switches (``None`` means unlimited); ``0`` forbids switching.
    """
    if player not in (1, 2):
        raise ValueError("player must be 1 or 2")
    T = lat.mp.T if horizon is None else horizon
    n = lat.n
    opp = _opponent_path(opponent, T, n)
    pp = lat.pp1 if player == 1 else lat.pp2
    psi = spreads_on(lat)[player - 1] * lat.mp.dt
    levels = 1 if max_switches is None else max_switches + 1
    V = np.zeros((levels, T + 1, n))
    W = np.zeros((levels, T + 1, n))
    pol_on = np.zeros((T, n), dtype=bool)
    pol_off = np.zeros((T, n), dtype=bool)
    for t in range(T - 1, -1, -1):
        for k in range(levels):
            on = psi + _expect(lat, player, 1, opp[t], V[k, t + 1])
            off = _expect(lat, player, 0, opp[t], W[k, t + 1])
            if max_switches is None:
                go_off, go_on = off - pp.K10, on - pp.K01
            elif k == 0:
                go_off = go_on = np.full(n, -np.inf)
            else:
                # a switch now uses one of the remaining k
                go_off = _expect(lat, player, 0, opp[t], W[k - 1, t + 1]) - pp.K10
                go_on = psi + _expect(lat, player, 1, opp[t], V[k - 1, t + 1]) - pp.K01
            V[k, t] = np.maximum(on, go_off)
            W[k, t] = np.maximum(off, go_on)
            if k == levels - 1:
                pol_on[t] = go_off > on
                pol_off[t] = go_on > off
    return SinglePlayerSolution(V[-1], W[-1], pol_on, pol_off, player, opp)


def opponent_value(lat, sol, start_on=False):
    """Frozen opponent's expected payoff along the producer's optimal policy.

    The opponent never switches, so it earns ``psi_opp * zeta_opp * dt`` each
    stage; the producer's decisions still move the allowance price.  Returns
    ``(T+1, n)`` values for the producer entering in the given mode.
    """
    T = sol.policy_on.shape[0]
    opp_player = 2 if sol.player == 1 else 1
    psi = spreads_on(lat)[opp_player - 1] * lat.mp.dt
    U = np.zeros((2, T + 1, lat.n))    # [producer entry mode, t, node]
    for t in range(T - 1, -1, -1):
        earn = psi * sol.opponent[t]
        for mode in (0, 1):
            after = sol.mode_after(t, bool(mode))
            e_on = _expect(lat, sol.player, 1, sol.opponent[t], U[1, t + 1])
            e_off = _expect(lat, sol.player, 0, sol.opponent[t], U[0, t + 1])
            U[mode, t] = earn + np.where(after == 1, e_on, e_off)
    return U[1 if start_on else 0]
