"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from switchgame.market import PRODUCER1, PRODUCER2, REGIMES, regime_levels, spread, step_log
from switchgame.matrix_game import select_ce
from switchgame.mca import spreads_on
from switchgame.stage_game import build_stage_game, stopping_payoff


def grid_best_response_gain(z, p1, p2, eps=1e-3):
    """Largest unilateral improvement found on an eps grid of mixed strategies."""
    a = np.arange(0.0, 1.0 + eps / 2, eps)

    def value(i, q1, q2):
        return ((1 - q1) * ((1 - q2) * z[i, 0, 0] + q2 * z[i, 0, 1])
                + q1 * ((1 - q2) * z[i, 1, 0] + q2 * z[i, 1, 1]))

    base1, base2 = value(0, p1, p2), value(1, p1, p2)
    dev1 = value(0, a, p2).max()
    dev2 = value(1, p1, a).max()
    return dev1 - base1, dev2 - base2


def stop_times(sol):
    """Each player's pure stopping time: first stage whose selected action is 'stop'.

    In a deterministic game these feedback rules are ordinary stopping times,
    including off the realised path.
    """
    T = sol.gammas.shape[0]
    tau = [T, T]
    for t in range(T):
        g = sol.gammas[t, 0]
        assert g.max() == 1.0
        j, k = divmod(int(g.argmax()), 2)
        if j and tau[0] == T:
            tau[0] = t
        if k and tau[1] == T:
            tau[1] = t
    return tau


def brute_force_equilibria(Z):
    T = Z.shape[0] - 1
    pay = {(a, b): stopping_payoff(Z, a, b) for a in range(T + 1) for b in range(T + 1)}
    out = []
    for (a, b), v in pay.items():
        if all(pay[(a2, b)][0] <= v[0] + 1e-12 for a2 in range(T + 1)) and \
                all(pay[(a, b2)][1] <= v[1] + 1e-12 for b2 in range(T + 1)):
            out.append(((a, b), v))
    return out


def spread_sums(mp, regime, noise):
    """Accumulated spreads with the regime held fixed, by direct simulation."""
    eps_p, eps_perp = noise
    N = eps_p.shape[0]
    z1, z2 = divmod(regime, 2)
    f = regime_levels(mp, PRODUCER1, PRODUCER2)[regime]
    lp, lx = np.full(N, np.log(mp.p0)), np.full(N, np.log(mp.x0))
    tot = np.zeros((N, 2))
    for t in range(mp.T):
        p, x = np.exp(lp), np.exp(lx)
        tot[:, 0] += z1 * spread(PRODUCER1, p, x, 1e6) * mp.dt
        tot[:, 1] += z2 * spread(PRODUCER2, p, x, 1e6) * mp.dt
        lp, lx = step_log(lp, lx, f, mp, eps_p[:, t], eps_perp[:, t])
    return tot


def deterministic_dp(lat, law, T):
    """Plain-loop backward induction along the zero-noise drift, rounded to the nearest node."""
    mp = lat.mp
    lp_axis, w_axis = lat.logp_axis, lat.w_axis
    levels = regime_levels(mp, lat.pp1, lat.pp2)
    psi = spreads_on(lat)
    n = lat.n

    def successor(node, r):
        i, j = divmod(node, len(w_axis))
        lp, w = lp_axis[i], w_axis[j]
        lx = w + lat.beta * lp
        lp1 = lp + mp.kappaP * (np.log(mp.Pbar) - lp) * mp.dt
        lx1 = lx + mp.kappaX * (levels[r] - lx) * mp.dt
        i1 = int(np.abs(lp_axis - lp1).argmin())
        j1 = int(np.abs(w_axis - (lx1 - lat.beta * lp1)).argmin())
        return i1 * len(w_axis) + j1

    nxt = [[successor(node, r) for r in range(4)] for node in range(n)]
    V = np.zeros((T + 1, 2, n, 4))
    for t in range(T - 1, -1, -1):
        for node in range(n):
            Y = np.array([[V[t + 1, i, nxt[node][r], r] + psi[i, node] * REGIMES[r][i] * mp.dt for r in range(4)]
                          for i in range(2)])
            for zeta in range(4):
                sol = select_ce(build_stage_game(Y, zeta, lat.pp1, lat.pp2), law)
                V[t, 0, node, zeta], V[t, 1, node, zeta] = sol.v1, sol.v2
    return V
