"""2x2 bimatrix games: Nash equilibria, correlated equilibria, selection.

A game is an array ``z`` of shape ``(2, 2, 2)`` (or ``(..., 2, 2, 2)`` for a
batch) where ``z[i, j, k]`` is the payoff to player ``i`` (0-based) when
player 1 plays row ``j`` and player 2 plays column ``k``.  Joint distributions
are length-4 vectors in the order ``(g00, g01, g10, g11)``.

Correlated equilibria are selected by exact vertex enumeration of the
correlated-equilibrium polytope, which lives in a 3-dimensional slice of the
4-simplex.  Every vertex is the intersection of three active constraints with
the simplex plane, i.e. the (normalised) null vector of a 3x4 system, which
is computed in closed form by cofactor expansion so a whole batch of games
is handled with array arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

KIND_NAMES = ("unique-pure", "coordination", "anti-coordination", "competitive", "degenerate")
UNIQUE_PURE, COORDINATION, ANTI_COORDINATION, COMPETITIVE, DEGENERATE = range(5)

_FEAS_TOL = 1e-10
_LEX_TOL = 1e-12


def bimatrix(z1, z2):
    """Stack the two payoff matrices into a ``(2, 2, 2)`` game array."""
    return np.stack([np.asarray(z1, dtype=float), np.asarray(z2, dtype=float)])


@dataclass(frozen=True)
class JointDistribution:
    g00: float
    g01: float
    g10: float
    g11: float

    def __post_init__(self):
        g = np.array([self.g00, self.g01, self.g10, self.g11], dtype=float)
        if np.any(g < -1e-12) or g.sum() <= 0:
            raise ValueError(f"not a probability vector: {g}")
        g = np.clip(g, 0.0, None) / np.clip(g, 0.0, None).sum()
        for name, value in zip(("g00", "g01", "g10", "g11"), g):
            object.__setattr__(self, name, float(value))

    @classmethod
    def from_array(cls, g):
        return cls(*np.asarray(g, dtype=float).ravel())

    def as_array(self):
        return np.array([self.g00, self.g01, self.g10, self.g11])


# ----------------------------------------------------------------------------
# correlation laws
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Utilitarian:
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if min(self.w1, self.w2) < 0 or self.w1 + self.w2 <= 0 or not np.isfinite(self.w1 + self.w2):
            raise ValueError("utilitarian weights must be finite, non-negative and not both zero")

    @property
    def name(self):
        return "utilitarian" if self.w1 == self.w2 else f"utilitarian({self.w1:g},{self.w2:g})"


@dataclass(frozen=True)
class Egalitarian:
    name = "egalitarian"


@dataclass(frozen=True)
class Preferential:
    player: int

    def __post_init__(self):
        if self.player not in (1, 2):
            raise ValueError("preferential player must be 1 or 2")

    @property
    def name(self):
        return f"preferential{self.player}"


@dataclass(frozen=True)
class Green:
    """Minimise expected emissions; ``weights`` are per action pair (00, 01, 10, 11)."""

    weights: tuple = (0.0, 1.0, 2.0, 3.0)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (4,) or np.any(w < 0) or not np.all(np.isfinite(w)) or not np.any(w > 0):
            raise ValueError("green weights must be 4 finite non-negative numbers, not all zero")

    name = "green"


@dataclass(frozen=True)
class LexFirst:
    name = "lexfirst"


LAW_NAMES = ("utilitarian", "egalitarian", "preferential1", "preferential2", "green", "lexfirst")


def parse_law(name, green_weights=None):
    """Build a correlation law from its command-line name."""
    key = name.strip().lower().replace("-", "").replace("_", "")
    if key == "utilitarian":
        return Utilitarian()
    if key == "egalitarian":
        return Egalitarian()
    if key in ("preferential1", "pref1"):
        return Preferential(1)
    if key in ("preferential2", "pref2"):
        return Preferential(2)
    if key == "green":
        return Green(tuple(green_weights)) if green_weights is not None else Green()
    if key == "lexfirst":
        return LexFirst()
    raise ValueError(f"unknown correlation law {name!r}; expected one of {', '.join(LAW_NAMES)}")


# ----------------------------------------------------------------------------
# basic game quantities
# ----------------------------------------------------------------------------

def _gaps(z):
    """Best-response gaps.

    ``A0, A1``: player 1's gain from row 0 over row 1 against column 0 / 1.
    ``B0, B1``: player 2's gain from column 0 over column 1 against row 0 / 1.
    """
    z1, z2 = z[..., 0, :, :], z[..., 1, :, :]
    A0 = z1[..., 0, 0] - z1[..., 1, 0]
    A1 = z1[..., 0, 1] - z1[..., 1, 1]
    B0 = z2[..., 0, 0] - z2[..., 0, 1]
    B1 = z2[..., 1, 0] - z2[..., 1, 1]
    return A0, A1, B0, B1


def _player_tol(z):
    a = np.abs(z)
    s1 = np.maximum(np.maximum(a[..., 0, 0, 0], a[..., 0, 0, 1]), np.maximum(a[..., 0, 1, 0], a[..., 0, 1, 1]))
    s2 = np.maximum(np.maximum(a[..., 1, 0, 0], a[..., 1, 0, 1]), np.maximum(a[..., 1, 1, 0], a[..., 1, 1, 1]))
    return 1e-12 * np.maximum(1.0, s1), 1e-12 * np.maximum(1.0, s2)


def incentive_rows(z):
    """Rows ``r`` of the four CE incentive constraints ``r @ gamma >= 0``.

    Order: player 1 told 0, player 1 told 1, player 2 told 0, player 2 told 1.
    """
    A0, A1, B0, B1 = _gaps(np.asarray(z, dtype=float))
    zero = np.zeros_like(A0)
    rows = np.stack([
        np.stack([A0, A1, zero, zero], axis=-1),
        np.stack([zero, zero, -A0, -A1], axis=-1),
        np.stack([B0, zero, B1, zero], axis=-1),
        np.stack([zero, -B0, zero, -B1], axis=-1),
    ], axis=-2)
    return rows


def ce_slacks(z, gamma):
    """Slack of each incentive constraint; negative entries are violations."""
    return np.einsum("...ij,...j->...i", incentive_rows(z), np.asarray(gamma, dtype=float))


def is_ce(z, gamma, tol=1e-9):
    """True iff ``gamma`` satisfies the four incentive constraints within ``tol``."""
    return bool(np.all(ce_slacks(z, gamma) >= -tol))


def game_value(z, gamma):
    """Expected payoffs ``(v1, v2)`` under the joint distribution ``gamma``."""
    z = np.asarray(z, dtype=float)
    g = np.asarray(gamma, dtype=float)
    flat = z.reshape(z.shape[:-2] + (4,))
    return np.einsum("...ij,...j->...i", flat, g)


def pure_nash(z):
    """All pure Nash equilibria ``(j, k)`` (weak best-response inequalities)."""
    z = np.asarray(z, dtype=float)
    out = []
    for j in (0, 1):
        for k in (0, 1):
            if z[0, j, k] >= z[0, 1 - j, k] and z[1, j, k] >= z[1, j, 1 - k]:
                out.append((j, k))
    return out


def mixed_nash(z):
    """Interior indifference equilibrium, or ``None``.

    Returns ``(p1, p2)``, each player's probability of playing action 1.  The
    solution is reported only when both indifference equations have non-zero
    denominators and their solutions lie in ``[0, 1]``.
    """
    A0, A1, B0, B1 = _gaps(np.asarray(z, dtype=float))
    den2, den1 = A0 - A1, B0 - B1
    if den1 == 0 or den2 == 0:
        return None
    p2 = A0 / den2
    p1 = B0 / den1
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        return None
    return float(p1), float(p2)


def classify(z):
    """Equilibrium structure code of each game in a batch (see ``KIND_NAMES``)."""
    z = np.asarray(z, dtype=float)
    return _classify(_gaps(z), _player_tol(z))


def _classify(gaps, tols):
    A0, A1, B0, B1 = gaps
    tol1, tol2 = tols
    degenerate = ((np.abs(A0) <= tol1) | (np.abs(A1) <= tol1)
                  | (np.abs(B0) <= tol2) | (np.abs(B1) <= tol2))
    n00 = (A0 > 0) & (B0 > 0)
    n01 = (A1 > 0) & (B0 < 0)
    n10 = (A0 < 0) & (B1 > 0)
    n11 = (A1 < 0) & (B1 < 0)
    count = n00.astype(int) + n01 + n10 + n11
    kind = np.full(A0.shape, COMPETITIVE, dtype=np.int8)
    kind[count == 1] = UNIQUE_PURE
    kind[(count == 2) & n00 & n11] = COORDINATION
    kind[(count == 2) & n01 & n10] = ANTI_COORDINATION
    kind[degenerate] = DEGENERATE
    return kind


# ----------------------------------------------------------------------------
# correlated equilibrium selection
# ----------------------------------------------------------------------------

def _det3(c0, c1, c2):
    """Determinant of 3x3 matrices given as three column arrays ``(..., 3)``."""
    return (c0[..., 0] * (c1[..., 1] * c2[..., 2] - c1[..., 2] * c2[..., 1])
            - c1[..., 0] * (c0[..., 1] * c2[..., 2] - c0[..., 2] * c2[..., 1])
            + c2[..., 0] * (c0[..., 1] * c1[..., 2] - c0[..., 2] * c1[..., 1]))


def _null_vectors(rows3):
    """Null vector of each 3x4 system, ``rows3`` shaped ``(..., 3, 4)``."""
    cols = [rows3[..., :, j] for j in range(4)]
    x = np.stack([
        _det3(cols[1], cols[2], cols[3]),
        -_det3(cols[0], cols[2], cols[3]),
        _det3(cols[0], cols[1], cols[3]),
        -_det3(cols[0], cols[1], cols[2]),
    ], axis=-1)
    return x


_COMBOS = {m: np.array(list(combinations(range(m), 3))) for m in (8, 9)}


def polytope_vertices(z, extra_row=None):
    """Candidate vertices of the CE polytope of each game.

    Returns ``(x, ok)`` with ``x`` of shape ``(M, C, 4)`` and a feasibility
    mask ``ok`` of shape ``(M, C)``.  ``extra_row`` (shape ``(M, 4)``) adds an
    optional hyperplane ``extra_row @ gamma = 0`` whose intersections with the
    polytope's edges are included as extra candidates.
    """
    z = np.asarray(z, dtype=float)
    M = z.shape[0]
    inc = incentive_rows(z)
    scale = np.abs(inc).max(axis=-1, keepdims=True)
    inc = np.divide(inc, scale, out=np.zeros_like(inc), where=scale > 0)
    parts = [inc, np.broadcast_to(np.eye(4), (M, 4, 4))]
    if extra_row is not None:
        e = np.asarray(extra_row, dtype=float)[:, None, :]
        es = np.abs(e).max(axis=-1, keepdims=True)
        parts.append(np.divide(e, es, out=np.zeros_like(e), where=es > 0))
    rows = np.concatenate(parts, axis=1)
    combos = _COMBOS[rows.shape[1]]
    x = _null_vectors(rows[:, combos, :])
    total = x.sum(axis=-1)
    ok = np.abs(total) > 1e-13
    x = np.divide(x, total[..., None], out=np.zeros_like(x), where=ok[..., None])
    ok &= np.all(x >= -_FEAS_TOL, axis=-1)
    ok &= np.all(np.einsum("mij,mcj->mci", inc, x) >= -_FEAS_TOL, axis=-1)
    x = np.clip(x, 0.0, None)
    x /= np.where(ok, x.sum(axis=-1), 1.0)[..., None]
    return x, ok


def _lex_pick(x, candidate):
    """Index of the lexicographically largest candidate vertex per game."""
    mask = candidate.copy()
    for j in range(4):
        col = np.where(mask, x[..., j], -np.inf)
        best = col.max(axis=-1, keepdims=True)
        mask &= col >= best - _LEX_TOL
    return mask.argmax(axis=-1)


def _objective(z, law, emissions):
    flat = z.reshape(z.shape[0], 2, 4)
    if isinstance(law, Utilitarian):
        return law.w1 * flat[:, 0] + law.w2 * flat[:, 1]
    if isinstance(law, Preferential):
        return flat[:, law.player - 1]
    if isinstance(law, Green):
        w = np.asarray(law.weights if emissions is None else emissions, dtype=float)
        return -np.broadcast_to(w, (z.shape[0], 4))
    if isinstance(law, LexFirst):
        return np.zeros((z.shape[0], 4))
    raise TypeError(f"unsupported correlation law {law!r}")


def _select_general(z, law, emissions):
    flat = z.reshape(z.shape[0], 2, 4)
    if isinstance(law, Egalitarian):
        x, ok = polytope_vertices(z, extra_row=flat[:, 0] - flat[:, 1])
        v = np.einsum("mpj,mcj->mcp", flat, x)
        obj = v.min(axis=-1)
        scale = np.abs(flat).max(axis=(-2, -1))
    else:
        x, ok = polytope_vertices(z)
        c = _objective(z, law, emissions)
        obj = np.einsum("mj,mcj->mc", c, x)
        scale = np.abs(c).max(axis=-1)
    obj = np.where(ok, obj, -np.inf)
    best = obj.max(axis=-1, keepdims=True)
    tie = ok & (obj >= best - 1e-11 * np.maximum(1.0, scale)[:, None])
    idx = _lex_pick(x, tie)
    return x[np.arange(z.shape[0]), idx]


def select_ce_batch(z, law, emissions=None):
    """Select one correlated equilibrium for every game in a batch.

    Parameters
    ----------
    z : array ``(M, 2, 2, 2)``
    law : correlation law instance
    emissions : optional ``(M, 4)`` per-game emission weights for :class:`Green`

    Returns
    -------
    gamma : ``(M, 4)`` selected joint distributions
    values : ``(M, 2)`` expected payoffs
    kind : ``(M,)`` structure codes from :func:`classify`
    """
    z = np.asarray(z, dtype=float)
    M = z.shape[0]
    A0, A1, B0, B1 = gaps = _gaps(z)
    tol1, tol2 = tols = _player_tol(z)
    gamma = np.zeros((M, 4))

    # A strictly dominant action for one player plus a strict reply by the
    # other makes the CE polytope a single point.
    row = np.where((A0 > tol1) & (A1 > tol1), 0, np.where((A0 < -tol1) & (A1 < -tol1), 1, -1))
    col = np.where((B0 > tol2) & (B1 > tol2), 0, np.where((B0 < -tol2) & (B1 < -tol2), 1, -1))
    b_at_row = np.where(row == 0, B0, B1)
    a_at_col = np.where(col == 0, A0, A1)
    fast1 = (row >= 0) & (np.abs(b_at_row) > tol2)
    fast2 = ~fast1 & (col >= 0) & (np.abs(a_at_col) > tol1)
    reply_col = np.where(b_at_row > 0, 0, 1)
    reply_row = np.where(a_at_col > 0, 0, 1)
    idx1 = 2 * row + reply_col
    idx2 = 2 * reply_row + col
    gamma[fast1, idx1[fast1]] = 1.0
    gamma[fast2, idx2[fast2]] = 1.0

    hard = ~(fast1 | fast2)
    if np.any(hard):
        em = None
        if emissions is not None:
            em = np.broadcast_to(np.asarray(emissions, dtype=float), (M, 4))[hard]
        gamma[hard] = _select_general(z[hard], law, em)

    values = game_value(z, gamma)
    return gamma, values, _classify(gaps, tols)


@dataclass(frozen=True)
class EquilibriumSolution:
    gamma: JointDistribution
    v1: float
    v2: float
    kind: str


def select_ce(z, law, emissions=None):
    """Select a correlated equilibrium of a single game under ``law``."""
    z = np.asarray(z, dtype=float)[None]
    em = None if emissions is None else np.asarray(emissions, dtype=float)[None]
    gamma, values, kind = select_ce_batch(z, law, em)
    return EquilibriumSolution(JointDistribution.from_array(gamma[0]),
                               float(values[0, 0]), float(values[0, 1]), KIND_NAMES[kind[0]])
