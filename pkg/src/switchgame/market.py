"""Electricity / allowance price dynamics with producer price impact.

Prices evolve in log space.  The electricity price reverts to ``log(Pbar)``;
the allowance price reverts to a level that depends on which producers are
currently emitting::

    log P' = log P + kappaP (log Pbar - log P) dt + sigmaP sqrt(dt) eps_P
    log X' = log X + kappaX (f(zeta) - log X) dt + sigmaX sqrt(dt) eps_X
    f(zeta) = log(Xbar + g1 zeta1 + g2 zeta2)
    eps_X = rho eps_P + sqrt(1 - rho^2) eps_perp
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError

#: Joint regimes in index order: 0 -> (0,0), 1 -> (0,1), 2 -> (1,0), 3 -> (1,1).
REGIMES = ((0, 0), (0, 1), (1, 0), (1, 1))

DEFAULT_CAP = 1.0e6


def regime_index(zeta1, zeta2):
    """Encode a joint regime as an index in ``0..3`` (vectorised)."""
    return 2 * np.asarray(zeta1) + np.asarray(zeta2)


def regime_pair(index):
    """Decode ``0..3`` back to ``(zeta1, zeta2)`` (vectorised)."""
    index = np.asarray(index)
    return index // 2, index % 2


@dataclass(frozen=True)
class MarketParams:
    kappaP: float = 2.0
    kappaX: float = 3.0
    sigmaP: float = 0.4
    sigmaX: float = 0.25
    Pbar: float = 45.0
    Xbar: float = 12.0
    rho: float = 0.6
    dt: float = 1.0 / 26.0
    T: int = 26
    p0: float = 45.0
    x0: float = 15.0
    sqrt_dt_scaling: bool = True

    def __post_init__(self):
        if self.sigmaP < 0 or self.sigmaX < 0:
            raise ConfigError("volatilities must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError(f"T must be a positive integer, got {self.T}")
        for name in ("p0", "x0", "Pbar", "Xbar"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def shock_scale(self):
        """Multiplier turning annualised volatilities into per-step shocks."""
        return np.sqrt(self.dt) if self.sqrt_dt_scaling else 1.0


@dataclass(frozen=True)
class ProducerParams:
    """One producer: output ``a``, allowance use ``b``, fixed cost ``c``,
    price impact ``g`` and switching costs ``K01`` (off->on), ``K10`` (on->off)."""

    a: float
    b: float
    c: float
    g: float
    K01: float = 0.2
    K10: float = 0.2

    def __post_init__(self):
        if self.K01 < 0 or self.K10 < 0:
            raise ConfigError("switching costs must be non-negative")

    def switch_cost(self, current):
        """Cost of leaving regime ``current`` (vectorised over 0/1 arrays)."""
        return np.where(np.asarray(current) == 0, self.K01, self.K10)


# Default producers: a "coal" producer 1 and a "gas" producer 2.
PRODUCER1 = ProducerParams(a=1.0, b=2.0, c=10.0, g=8.0, K01=0.2, K10=0.2)
PRODUCER2 = ProducerParams(a=2.0, b=1.0, c=80.0, g=4.0, K01=0.2, K10=0.2)


def spread(producer, p, x, cap=DEFAULT_CAP):
    """Clean spread per unit time, ``min(a p - b x - c, cap)``."""
    return np.minimum(producer.a * p - producer.b * x - producer.c, cap)


def mean_level(xbar, g1, g2, zeta):
    """Log mean-reversion level of the allowance price in regime ``zeta``."""
    z1, z2 = zeta
    level = xbar + g1 * np.asarray(z1) + g2 * np.asarray(z2)
    if np.any(level <= 0):
        raise ConfigError("Xbar + g1*zeta1 + g2*zeta2 must be positive for every regime")
    return np.log(level)


def regime_levels(mp, pp1, pp2):
    """``f(zeta)`` for the four regimes, in regime-index order."""
    return np.array([mean_level(mp.Xbar, pp1.g, pp2.g, z) for z in REGIMES])


@dataclass(frozen=True)
class MarketState:
    t: int
    p: float
    x: float


def step_log(logp, logx, level, mp, eps_p, eps_perp):
    """One transition in log space; ``level`` is ``f(zeta)`` (broadcasts)."""
    s = mp.shock_scale
    eps_x = mp.rho * eps_p + np.sqrt(1.0 - mp.rho**2) * eps_perp
    logp_next = logp + mp.kappaP * (np.log(mp.Pbar) - logp) * mp.dt + mp.sigmaP * s * eps_p
    logx_next = logx + mp.kappaX * (level - logx) * mp.dt + mp.sigmaX * s * eps_x
    return logp_next, logx_next


def step(state, zeta, mp, pp1, pp2, noise):
    """Advance a :class:`MarketState` one period under joint regime ``zeta``.

    ``noise`` is the pair ``(eps_P, eps_perp)`` of independent standard normals.
    """
    level = mean_level(mp.Xbar, pp1.g, pp2.g, zeta)
    lp, lx = step_log(np.log(state.p), np.log(state.x), level, mp, *noise)
    return MarketState(state.t + 1, float(np.exp(lp)), float(np.exp(lx)))


class NoiseStream:
    """Counter-addressed random numbers for Monte Carlo paths.

    Every ``(path, stage)`` pair owns one Philox counter block of four 64-bit
    words, so the numbers drawn for a path never depend on how many other
    paths are simulated or in which order chunks are evaluated.  The words are
    mapped to uniforms on (0, 1); the first two become the Gaussian pair
    ``(eps_P, eps_perp)`` by inverse CDF and the third is the uniform used for
    signal randomisation.
    """

    def __init__(self, seed, n_stages, stream=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.n_stages = int(n_stages)

    def uniforms(self, start, stop):
        """Uniforms of shape ``(stop - start, n_stages, 4)`` for paths ``[start, stop)``."""
        bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        bg.advance(start * self.n_stages)
        raw = bg.random_raw((stop - start) * self.n_stages * 4)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(stop - start, self.n_stages, 4)

    def block(self, start, stop):
        """Return ``(eps_P, eps_perp, u_signal)`` arrays of shape ``(paths, n_stages)``."""
        u = self.uniforms(start, stop)
        gauss = ndtri(u[..., :2])
        return gauss[..., 0], gauss[..., 1], u[..., 2]

    def pair(self, path, stage):
        """Gaussian pair for a single ``(path, stage)`` address."""
        eps_p, eps_perp, _ = self.block(path, path + 1)
        return float(eps_p[0, stage]), float(eps_perp[0, stage])
