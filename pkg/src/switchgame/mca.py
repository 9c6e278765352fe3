"""Markov chain approximation of (P, X) and the lattice backward recursion.

The lattice is regular in ``(log P, w)`` with ``w = log X - beta log P`` and
``beta = rho sigmaX / sigmaP``.  In those coordinates the two log-increments
are independent, so each regime's transition is a product of two 1-D
three-point stencils (a 3x3 stencil on the lattice) and the correlation is
carried by the shear.  Each 1-D stencil is centred on the node nearest the
drift target and uses points ``+-k`` nodes away with ``k ~ sqrt(3) sigma / h``,
the three-point Gauss-Hermite spacing; the weights match the conditional
mean and variance exactly.  Targets falling off the grid are moved onto the
boundary node.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .market import DEFAULT_CAP, REGIMES, regime_levels, spread
from .matrix_game import KIND_NAMES, select_ce_batch
from .stage_game import build_stage_game, cell_regimes, emission_weights


def stencil_1d(mean, std, h):
    """Three-point stencil matching ``mean`` and ``std`` on a grid of spacing ``h``.

    Returns integer offsets ``(..., 3)`` and probabilities ``(..., 3)``.
    """
    m = np.asarray(mean, dtype=float) / h
    s = np.broadcast_to(np.asarray(std, dtype=float) / h, m.shape)
    c = np.rint(m)
    d = m - c
    k = np.maximum(1.0, np.rint(np.sqrt(3.0) * s))
    m2 = (s**2 + d**2) / k**2
    qp = 0.5 * (m2 + d / k)
    qm = 0.5 * (m2 - d / k)
    q0 = 1.0 - m2
    # Too little variance to carry the rounding residual: keep the mean exact.
    weak = (qp < 0) | (qm < 0)
    qp = np.where(weak, np.maximum(d, 0.0), qp)
    qm = np.where(weak, np.maximum(-d, 0.0), qm)
    q0 = np.where(weak, 1.0 - np.abs(d), q0)
    k = np.where(weak, 1.0, k)
    # Deterministic limit: a point mass on the nearest node.
    zero = s == 0
    qp, qm, q0 = np.where(zero, 0.0, qp), np.where(zero, 0.0, qm), np.where(zero, 1.0, q0)
    if np.any(q0 < -1e-12):
        raise ConfigError("lattice transition probabilities went negative; "
                          "use a coarser grid or a smaller dt")
    offsets = np.stack([c - k, c, c + k], axis=-1).astype(np.int64)
    probs = np.stack([qm, np.clip(q0, 0.0, None), qp], axis=-1)
    return offsets, probs


@dataclass
class Lattice:
    mp: object
    pp1: object
    pp2: object
    logp_axis: np.ndarray
    w_axis: np.ndarray
    beta: float
    Q: list = field(repr=False)
    cap: float = DEFAULT_CAP

    @property
    def shape(self):
        return len(self.logp_axis), len(self.w_axis)

    @property
    def n(self):
        return len(self.logp_axis) * len(self.w_axis)

    @property
    def h(self):
        return self.logp_axis[1] - self.logp_axis[0], self.w_axis[1] - self.w_axis[0]

    def coords(self):
        """Node coordinates ``(log p, log x)`` as flat arrays."""
        lp, w = np.meshgrid(self.logp_axis, self.w_axis, indexing="ij")
        return lp.ravel(), (w + self.beta * lp).ravel()

    def prices(self):
        lp, lx = self.coords()
        return np.exp(lp), np.exp(lx)

    def node_of(self, p, x):
        """Flat index of the node nearest to ``(p, x)``."""
        lp = np.log(p)
        w = np.log(x) - self.beta * lp
        i = int(np.clip(np.rint((lp - self.logp_axis[0]) / self.h[0]), 0, self.shape[0] - 1))
        j = int(np.clip(np.rint((w - self.w_axis[0]) / self.h[1]), 0, self.shape[1] - 1))
        return i * self.shape[1] + j


def _stationary_box(mp, levels, bounds):
    """Coordinate ranges (log p and w) covering +-bounds stationary std devs."""
    s = mp.shock_scale
    phi = np.array([1.0 - mp.kappaP * mp.dt, 1.0 - mp.kappaX * mp.dt])
    cov = s**2 * np.array([[mp.sigmaP**2, mp.rho * mp.sigmaP * mp.sigmaX],
                           [mp.rho * mp.sigmaP * mp.sigmaX, mp.sigmaX**2]])
    outer = np.outer(phi, phi)
    if np.all(np.abs(phi) < 1):
        S = cov / (1.0 - outer)
    else:
        # no stationary law: use the spread accumulated over the horizon
        S = cov * mp.T
    beta = mp.rho * mp.sigmaX / mp.sigmaP if mp.sigmaP > 0 else 0.0
    lpbar, lp0, lx0 = np.log(mp.Pbar), np.log(mp.p0), np.log(mp.x0)
    sd_p = np.sqrt(S[0, 0])
    sd_w = np.sqrt(max(S[1, 1] - 2 * beta * S[0, 1] + beta**2 * S[0, 0], 0.0))
    p_lo = min(lpbar - bounds * sd_p, lp0)
    p_hi = max(lpbar + bounds * sd_p, lp0)
    w_centres = np.append(levels - beta * lpbar, lx0 - beta * lp0)
    w_lo = w_centres.min() - bounds * sd_w
    w_hi = w_centres.max() + bounds * sd_w
    return (p_lo, p_hi), (w_lo, w_hi), beta


def _axis(lo, hi, size, anchor):
    """Regular axis of ``size`` points spanning ``[lo, hi]`` with ``anchor`` on a node."""
    if hi - lo < 1e-6:
        lo, hi = lo - 0.05, hi + 0.05
    h = (hi - lo) / (size - 1)
    shift = (anchor - lo) / h - np.floor((anchor - lo) / h)
    lo = lo + shift * h if shift < 0.5 else lo - (1.0 - shift) * h
    return lo + h * np.arange(size)


def build_lattice(mp, pp1, pp2, bounds=4.0, sizes=(141, 141), cap=DEFAULT_CAP):
    """Build the four regime transition matrices on a regular lattice."""
    Np, Nw = sizes
    if Np < 3 or Nw < 3:
        raise ConfigError("lattice sizes must be at least 3")
    levels = regime_levels(mp, pp1, pp2)
    (p_lo, p_hi), (w_lo, w_hi), beta = _stationary_box(mp, levels, bounds)
    lp0 = np.log(mp.p0)
    logp_axis = _axis(p_lo, p_hi, Np, lp0)
    w_axis = _axis(w_lo, w_hi, Nw, np.log(mp.x0) - beta * lp0)
    h1, h2 = logp_axis[1] - logp_axis[0], w_axis[1] - w_axis[0]

    s = mp.shock_scale
    lp, w = np.meshgrid(logp_axis, w_axis, indexing="ij")
    lx = w + beta * lp
    drift_p = mp.kappaP * (np.log(mp.Pbar) - lp) * mp.dt
    off_p, pr_p = stencil_1d(drift_p, mp.sigmaP * s, h1)
    ii = np.clip(np.arange(Np)[:, None, None] + off_p, 0, Np - 1)  # (Np, Nw, 3)
    std_w = mp.sigmaX * np.sqrt(max(1.0 - mp.rho**2, 0.0)) * s
    rows = np.arange(Np * Nw).reshape(Np, Nw)

    Q = []
    for level in levels:
        drift_w = mp.kappaX * (level - lx) * mp.dt - beta * drift_p
        off_w, pr_w = stencil_1d(drift_w, std_w, h2)
        jj = np.clip(np.arange(Nw)[None, :, None] + off_w, 0, Nw - 1)
        cols = ii[..., :, None] * Nw + jj[..., None, :]           # (Np, Nw, 3, 3)
        vals = pr_p[..., :, None] * pr_w[..., None, :]
        r = np.broadcast_to(rows[..., None, None], cols.shape)
        mat = sp.csr_matrix((vals.ravel(), (r.ravel(), cols.ravel())), shape=(Np * Nw, Np * Nw))
        mat.sum_duplicates()
        mat.eliminate_zeros()
        Q.append(mat)
    return Lattice(mp, pp1, pp2, logp_axis, w_axis, beta, Q, cap)


# ----------------------------------------------------------------------------
# backward recursion
# ----------------------------------------------------------------------------

@dataclass
class ValueSurface:
    lattice: Lattice
    law: object
    values: np.ndarray   # (T+1, 2, n, 4): [t, player, node, regime]
    gammas: np.ndarray   # (T, n, 4, 4): [t, node, regime, action pair]
    kinds: np.ndarray    # (T, n, 4)

    def value_at(self, p, x, zeta=0, t=0):
        """Game values ``(v1, v2)`` at the node nearest ``(p, x)``."""
        node = self.lattice.node_of(p, x)
        return tuple(float(v) for v in self.values[t, :, node, zeta])

    def stage_games(self, t):
        """Stage games ``(n, 4, 2, 2, 2)`` rebuilt from the stored values."""
        return _stage_games(self.lattice, self.values[t + 1], self.lattice.cap)


def spreads_on(lat):
    p, x = lat.prices()
    return np.stack([spread(lat.pp1, p, x, lat.cap), spread(lat.pp2, p, x, lat.cap)])


def continuation(lat, v_next, psi=None):
    """``Y[node, player, regime] = E^r[V(t+1, r)] + psi * zeta_i * dt``."""
    if psi is None:
        psi = spreads_on(lat)
    dt = lat.mp.dt
    Y = np.empty((lat.n, 2, 4))
    for r, (z1, z2) in enumerate(REGIMES):
        ev = lat.Q[r] @ v_next[:, :, r].T          # (n, 2)
        Y[:, 0, r] = ev[:, 0] + psi[0] * z1 * dt
        Y[:, 1, r] = ev[:, 1] + psi[1] * z2 * dt
    return Y


def _stage_games(lat, v_next, cap, psi=None):
    Y = continuation(lat, v_next, psi)
    zeta = np.arange(4)[None, :]
    return build_stage_game(Y[:, None, :, :], zeta, lat.pp1, lat.pp2)


def solve_mca(lat, law, horizon=None):
    """Solve the switching game by backward recursion on the lattice.

    Terminal values are zero.  Returns a :class:`ValueSurface`.
    """
    T = lat.mp.T if horizon is None else horizon
    n = lat.n
    psi = spreads_on(lat)
    values = np.zeros((T + 1, 2, n, 4))
    gammas = np.empty((T, n, 4, 4))
    kinds = np.empty((T, n, 4), dtype=np.int8)
    emissions = np.broadcast_to(emission_weights(np.arange(4), lat.pp1, lat.pp2), (n, 4, 4))
    for t in range(T - 1, -1, -1):
        games = _stage_games(lat, values[t + 1], lat.cap, psi).reshape(n * 4, 2, 2, 2)
        g, v, k = select_ce_batch(games, law, emissions.reshape(n * 4, 4))
        values[t] = v.reshape(n, 4, 2).transpose(2, 0, 1)
        gammas[t] = g.reshape(n, 4, 4)
        kinds[t] = k.reshape(n, 4)
    return ValueSurface(lat, law, values, gammas, kinds)


def solve_mca_capped(lat, law, caps, horizon=None):
    """Switching game where player ``i`` may switch at most ``caps[i]`` times.

    Returns values of shape ``(T+1, n1+1, n2+1, 2, nodes, 4)`` indexed by the
    number of switches each player has left.  A player with none left has
    its switch action replaced by a copy of staying, so the stage game keeps
    its 2x2 shape and the extra action is payoff-equivalent.
    """
    T = lat.mp.T if horizon is None else horizon
    n1, n2 = caps
    n = lat.n
    psi = spreads_on(lat)
    reached = cell_regimes(np.arange(4))                   # (4, 2, 2)
    k1 = lat.pp1.switch_cost(np.arange(4) // 2)
    k2 = lat.pp2.switch_cost(np.arange(4) % 2)
    emissions = np.broadcast_to(emission_weights(np.arange(4), lat.pp1, lat.pp2), (n, 4, 4))
    V = np.zeros((T + 1, n1 + 1, n2 + 1, 2, n, 4))
    for t in range(T - 1, -1, -1):
        Y = np.empty((n1 + 1, n2 + 1, n, 2, 4))
        for l1 in range(n1 + 1):
            for l2 in range(n2 + 1):
                Y[l1, l2] = continuation(lat, V[t + 1, l1, l2], psi)
        for m1 in range(n1 + 1):
            for m2 in range(n2 + 1):
                games = np.empty((n, 4, 2, 2, 2))
                for a1 in (0, 1):
                    for a2 in (0, 1):
                        e1, e2 = a1 * (m1 > 0), a2 * (m2 > 0)
                        y = Y[m1 - e1, m2 - e2]
                        r = reached[:, e1, e2]
                        games[:, :, 0, a1, a2] = y[:, 0, r] - e1 * k1
                        games[:, :, 1, a1, a2] = y[:, 1, r] - e2 * k2
                _, v, _ = select_ce_batch(games.reshape(n * 4, 2, 2, 2), law,
                                          emissions.reshape(n * 4, 4))
                V[t, m1, m2] = v.reshape(n, 4, 2).transpose(2, 0, 1)
    return V


def region_map(vs, t, zeta):
    """Per-node equilibrium classification and selected action pair at stage ``t``.

    Returns a dict of flat arrays: ``p``, ``x``, ``kind`` (code), ``gamma``
    ``(n, 4)`` and ``action`` (index of the selected pure action pair, or -1
    when the selection is randomised).
    """
    if not 0 <= t < vs.gammas.shape[0]:
        raise ValueError(f"stage {t} outside [0, {vs.gammas.shape[0]})")
    p, x = vs.lattice.prices()
    g = vs.gammas[t, :, zeta]
    pure = g.max(axis=-1) > 1 - 1e-12
    action = np.where(pure, g.argmax(axis=-1), -1)
    return {"p": p, "x": x, "kind": vs.kinds[t, :, zeta], "gamma": g, "action": action}


def _fmt(v):
    return f"{v:.17g}"


def write_region_map(path, rm):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "x", "class", "action", "g00", "g01", "g10", "g11"])
        for i in range(len(rm["p"])):
            w.writerow([_fmt(rm["p"][i]), _fmt(rm["x"][i]), KIND_NAMES[rm["kind"][i]],
                        int(rm["action"][i])] + [_fmt(v) for v in rm["gamma"][i]])


def write_surface(path, vs):
    """Export a value surface as CSV (one row per stage, node and regime)."""
    lp, lx = vs.lattice.coords()
    T = vs.gammas.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "logp", "logx", "regime", "v1", "v2", "g00", "g01", "g10", "g11", "class"])
        for t in range(T):
            for node in range(vs.lattice.n):
                for r in range(4):
                    w.writerow([t, _fmt(lp[node]), _fmt(lx[node]), r,
                                _fmt(vs.values[t, 0, node, r]), _fmt(vs.values[t, 1, node, r])]
                               + [_fmt(v) for v in vs.gammas[t, node, r]]
                               + [KIND_NAMES[vs.kinds[t, node, r]]])
