"""Least squares Monte Carlo engine for the switching game.

Continuation values ``E[V_i(t+1, zeta') | P_t, X_t]`` are approximated by
cross-sectional regressions of realised pathwise cashflows on basis
functions of the stage-``t`` state.  The backward pass works as follows for
each stage ``t``:

1. every path of the state cloud is stepped one period under each candidate
   regime ``zeta'`` with the path's own stage-``t`` noise;
2. from there the path is replayed forward to ``T`` with the already fitted
   models of stages ``t+1..T-1`` (equilibrium decisions, signal
   randomisation, cashflow accrual), giving ``theta_i(t+1, zeta')``;
3. ``theta`` is regressed on the basis evaluated at the stage-``t`` cloud.

The state cloud is simulated from ``(p0, x0)`` under an anterior profile,
myopic on the first outer iteration and the previous iteration's
equilibrium afterwards.  Paths are processed in fixed-size chunks with
counter-addressed noise, so results do not depend on the number of worker
threads.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .market import DEFAULT_CAP, REGIMES, NoiseStream, regime_levels, spread, step_log
from .matrix_game import select_ce_batch
from .stage_game import build_stage_game, draw_signals, emission_weights, switch_costs

log = logging.getLogger(__name__)

CHUNK = 2048
SAMPLE_STREAM = 1 << 32
_Z1 = np.array([z[0] for z in REGIMES])
_Z2 = np.array([z[1] for z in REGIMES])


@dataclass(frozen=True)
class BasisSpec:
    """Regression basis: monomials ``p**a * x**b`` and hinges ``(al*p + be*x + de)_+``."""

    monomials: tuple = ((0, 0), (1, 0), (0, 1), (0, 2))
    hinges: tuple = ((2.0, -1.0, -80.0), (1.0, -2.0, -10.0))

    def __post_init__(self):
        if len(self.monomials) + len(self.hinges) < 1:
            raise ConfigError("basis needs at least one function")
        for a, b in self.monomials:
            if a < 0 or b < 0 or int(a) != a or int(b) != b:
                raise ConfigError(f"monomial exponents must be non-negative integers, got {(a, b)}")

    @property
    def r(self):
        return len(self.monomials) + len(self.hinges)

    @property
    def intercept(self):
        """Column index of the constant monomial, or ``None``."""
        for j, m in enumerate(self.monomials):
            if tuple(m) == (0, 0):
                return j
        return None

    def names(self):
        out = [f"p^{a}x^{b}" for a, b in self.monomials]
        out += [f"({al:g}p{be:+g}x{de:+g})+" for al, be, de in self.hinges]
        return out

    def evaluate(self, p, x):
        p = np.asarray(p, dtype=float)
        x = np.asarray(x, dtype=float)
        cols = [p**a * x**b for a, b in self.monomials]
        cols += [np.maximum(al * p + be * x + de, 0.0) for al, be, de in self.hinges]
        return np.stack(cols, axis=-1)


@dataclass
class StageFit:
    coef: np.ndarray
    rank_deficient: bool
    resid_se: float


def fit_stage(features, targets, intercept=None, rcond=1e-10):
    """Least squares fit of ``targets`` on ``features`` (N x r).

    Columns are standardised before solving (centred too when ``intercept``
    names the constant column) and the coefficients mapped back to the raw
    basis.  A rank-deficient design yields the minimum-norm solution and is
    flagged.
    """
    B = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    N, r = B.shape
    if N < r:
        raise ValueError(f"need at least as many samples as basis functions ({N} < {r})")
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite regression targets")
    mu = B.mean(axis=0)
    if intercept is not None:
        sd = B.std(axis=0)
        varying = sd > 1e-12 * (np.abs(mu) + 1.0)
        varying[intercept] = False
        Z = np.zeros_like(B)
        Z[:, varying] = (B[:, varying] - mu[varying]) / sd[varying]
        Z[:, intercept] = 1.0
        used = varying.copy()
        used[intercept] = True
    else:
        sd = np.sqrt((B**2).mean(axis=0))
        used = sd > 0
        Z = np.zeros_like(B)
        Z[:, used] = B[:, used] / sd[used]
    beta, _, rank, _ = np.linalg.lstsq(Z[:, used], y, rcond=rcond)
    full = np.zeros(r)
    full[used] = beta
    coef = np.zeros(r)
    if intercept is not None:
        coef[varying] = full[varying] / sd[varying]
        coef[intercept] = (full[intercept] - np.sum(full[varying] * mu[varying] / sd[varying])) / B[0, intercept]
    else:
        coef[used] = full[used] / sd[used]
    resid = y - B @ coef
    dof = max(N - rank, 1)
    deficient = bool(rank < r)
    return StageFit(coef, deficient, float(np.sqrt(resid @ resid / dof)))


@dataclass
class RegressionModel:
    """Fitted continuation coefficients ``coef[t, zeta', player, l]`` in the raw basis."""

    mp: object
    pp1: object
    pp2: object
    basis: BasisSpec
    coef: np.ndarray
    rank_deficient: np.ndarray = None    # (T, 4)
    resid_se: np.ndarray = None          # (T, 4, 2)
    cap: float = DEFAULT_CAP

    @classmethod
    def zeros(cls, mp, pp1, pp2, basis, cap=DEFAULT_CAP):
        T = mp.T
        return cls(mp, pp1, pp2, basis, np.zeros((T, 4, 2, basis.r)),
                   np.zeros((T, 4), dtype=bool), np.zeros((T, 4, 2)), cap)

    def continuation(self, t, p, x):
        """Predicted ``E[V_i(t+1, zeta')]``, shape ``(M, 2, 4)``."""
        B = self.basis.evaluate(p, x)
        return np.einsum("mr,zir->miz", B, self.coef[t])


@dataclass
class ValueEstimate:
    mean: np.ndarray     # (2, 4): player x initial regime
    se: np.ndarray       # (2, 4)
    n_paths: int
    history: list = field(default_factory=list)   # mean (2, 4) after each outer iteration
    stabilized: bool = True

    def check_stabilization(self):
        """Last outer-iteration change shrank, or stayed within 2 SE, for every value."""
        if len(self.history) < 2:
            return True
        last = np.abs(self.history[-1] - self.history[-2])
        ok = last <= 2 * self.se
        if len(self.history) >= 3:
            ok |= last <= np.abs(self.history[-2] - self.history[-3])
        return bool(np.all(ok))

    def value(self, zeta=0):
        return tuple(float(v) for v in self.mean[:, zeta])

    def stderr(self, zeta=0):
        return tuple(float(v) for v in self.se[:, zeta])


@dataclass
class LsmcResult:
    model: RegressionModel
    estimate: ValueEstimate
    law: object
    cloud_x: np.ndarray = None     # (N, T) allowance prices of the final cloud


# ----------------------------------------------------------------------------
# forward simulation
# ----------------------------------------------------------------------------

class _Engine:
    """Per-run constants shared by the forward simulation routines."""

    def __init__(self, model, law):
        self.model = model
        self.law = law
        mp = model.mp
        self.mp = mp
        self.levels = regime_levels(mp, model.pp1, model.pp2)
        self.emissions = emission_weights(np.arange(4), model.pp1, model.pp2)

    def spreads(self, p, x):
        m = self.model
        return (spread(m.pp1, p, x, m.cap), spread(m.pp2, p, x, m.cap))

    def decide(self, t, logp, logx, regime, u):
        """Equilibrium decision at stage ``t``: new regime and cashflows."""
        m = self.model
        dt = self.mp.dt
        p, x = np.exp(logp), np.exp(logx)
        s1, s2 = self.spreads(p, x)
        Y = m.continuation(t, p, x)
        if not np.all(np.isfinite(Y)):
            raise NumericalError(f"non-finite continuation values at stage {t}")
        Y[:, 0, :] += s1[:, None] * _Z1 * dt
        Y[:, 1, :] += s2[:, None] * _Z2 * dt
        games = build_stage_game(Y, regime, m.pp1, m.pp2)
        gamma, _, kind = select_ce_batch(games, self.law, self.emissions[regime])
        a1, a2 = draw_signals(gamma, u)
        z1, z2 = regime // 2, regime % 2
        n1, n2 = z1 ^ a1, z2 ^ a2
        cash1 = s1 * n1 * dt - a1 * switch_costs(m.pp1, z1)
        cash2 = s2 * n2 * dt - a2 * switch_costs(m.pp2, z2)
        return 2 * n1 + n2, cash1, cash2, kind

    def myopic(self, logp, logx, regime):
        p, x = np.exp(logp), np.exp(logx)
        s1, s2 = self.spreads(p, x)
        return 2 * (s1 > 0).astype(np.int64) + (s2 > 0)

    def step(self, logp, logx, regime, eps_p, eps_perp):
        return step_log(logp, logx, self.levels[regime], self.mp, eps_p, eps_perp)

    def replay(self, t0, logp, logx, regime, noise, record=False):
        """Run the equilibrium forward from stage ``t0`` to ``T``.

        ``noise`` is ``(eps_p, eps_perp, u)`` with shape ``(M, T)`` each, rows
        aligned with the states.  Returns the cashflows ``(M, 2)`` and, if
        ``record``, the per-stage record arrays.
        """
        T = self.mp.T
        eps_p, eps_perp, u = noise
        theta = np.zeros((len(logp), 2))
        rec = [] if record else None
        for s in range(t0, T):
            new, c1, c2, kind = self.decide(s, logp, logx, regime, u[:, s])
            theta[:, 0] += c1
            theta[:, 1] += c2
            if record:
                rec.append((s, logp.copy(), logx.copy(), new.copy(), c1, c2))
            regime = new
            logp, logx = self.step(logp, logx, regime, eps_p[:, s], eps_perp[:, s])
        if not np.all(np.isfinite(theta)):
            raise NumericalError("non-finite cashflows in forward simulation")
        return theta, rec


def _noise_rows(noise, rows):
    return tuple(a[rows] for a in noise)


def _simulate_cloud(eng, noise, start, stop, anterior):
    """States ``(logp, logx)`` entering each stage for paths ``[start, stop)``."""
    mp = eng.mp
    T = mp.T
    M = stop - start
    eps_p, eps_perp, u = (a[start:stop] for a in noise)
    lp = np.full(M, np.log(mp.p0))
    lx = np.full(M, np.log(mp.x0))
    regime = np.zeros(M, dtype=np.int64)
    LP = np.empty((M, T))
    LX = np.empty((M, T))
    for t in range(T):
        LP[:, t], LX[:, t] = lp, lx
        if anterior:
            regime = eng.myopic(lp, lx, regime)
        else:
            regime = eng.decide(t, lp, lx, regime, u[:, t])[0]
        lp, lx = eng.step(lp, lx, regime, eps_p[:, t], eps_perp[:, t])
    return LP, LX


def _chunks(N):
    return [(s, min(s + CHUNK, N)) for s in range(0, N, CHUNK)]


def _map(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def _targets(eng, noise, LP, LX, t, start, stop):
    """``theta(t+1, zeta')`` for every candidate regime, shape ``(4, M, 2)``."""
    M = stop - start
    rows = np.tile(np.arange(start, stop), 4)
    regime = np.repeat(np.arange(4), M)
    eps_p, eps_perp, _ = noise
    lp, lx = eng.step(np.tile(LP[start:stop, t], 4), np.tile(LX[start:stop, t], 4), regime,
                      eps_p[rows, t], eps_perp[rows, t])
    if t + 1 >= eng.mp.T:
        return np.zeros((4, M, 2))
    theta, _ = eng.replay(t + 1, lp, lx, regime, _noise_rows(noise, rows))
    return theta.reshape(4, M, 2)


def _initial_values(eng, noise, start, stop):
    M = stop - start
    rows = np.tile(np.arange(start, stop), 4)
    regime = np.repeat(np.arange(4), M)
    lp = np.full(4 * M, np.log(eng.mp.p0))
    lx = np.full(4 * M, np.log(eng.mp.x0))
    theta, _ = eng.replay(0, lp, lx, regime, _noise_rows(noise, rows))
    return theta.reshape(4, M, 2)


def solve_lsmc(mp, pp1, pp2, law, n_paths=40000, basis=None, outer_iters=3, seed=0,
               threads=1, cap=DEFAULT_CAP):
    """Solve the switching game by least squares Monte Carlo.

    Returns an :class:`LsmcResult` holding the fitted model and the value
    estimate at ``(p0, x0)`` for each initial regime.
    """
    basis = BasisSpec() if basis is None else basis
    if n_paths < basis.r:
        raise ConfigError(f"n_paths must be at least the basis size {basis.r}")
    if outer_iters < 1:
        raise ConfigError("outer_iters must be at least 1")
    T = mp.T
    model = RegressionModel.zeros(mp, pp1, pp2, basis, cap)
    history = []
    jobs = _chunks(n_paths)
    for it in range(outer_iters):
        stream = NoiseStream(seed, T, stream=it)
        noise = stream.block(0, n_paths)
        prev = _Engine(model, law)
        parts = _map(lambda a, b: _simulate_cloud(prev, noise, a, b, it == 0), jobs, threads)
        LP = np.concatenate([p[0] for p in parts])
        LX = np.concatenate([p[1] for p in parts])

        new = RegressionModel.zeros(mp, pp1, pp2, basis, cap)
        eng = _Engine(new, law)
        for t in range(T - 1, -1, -1):
            theta = np.concatenate(
                _map(lambda a, b: _targets(eng, noise, LP, LX, t, a, b), jobs, threads), axis=1)
            B = basis.evaluate(np.exp(LP[:, t]), np.exp(LX[:, t]))
            for z in range(4):
                for i in range(2):
                    fit = fit_stage(B, theta[z, :, i], basis.intercept)
                    new.coef[t, z, i] = fit.coef
                    new.resid_se[t, z, i] = fit.resid_se
                    new.rank_deficient[t, z] |= fit.rank_deficient
        if not np.all(np.isfinite(new.coef)):
            raise NumericalError("non-finite regression coefficients")
        flagged = np.argwhere(new.rank_deficient[1:])
        if len(flagged):
            log.warning("rank-deficient regressions at %d (stage, regime) pairs", len(flagged))
        model = new
        theta0 = np.concatenate(_map(lambda a, b: _initial_values(eng, noise, a, b), jobs, threads),
                                axis=1)
        mean = theta0.mean(axis=1).T
        se = theta0.std(axis=1, ddof=1).T / np.sqrt(n_paths) if n_paths > 1 else np.zeros((2, 4))
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(se))):
            raise NumericalError("non-finite value estimate")
        history.append(mean)
        log.info("outer iteration %d: V1=%.4f V2=%.4f", it + 1, mean[0, 0], mean[1, 0])
    est = ValueEstimate(mean, se, n_paths, history)
    est.stabilized = est.check_stabilization()
    if not est.stabilized:
        log.warning("outer iterations have not stabilised: last change exceeds both 2 SE and the previous change")
    return LsmcResult(model, est, law, np.exp(LX))


def simulate_cashflow_path(model, law, start, noise):
    """Simulate one equilibrium path from ``start = (t, p, x, regime)``.

    ``noise`` is ``(eps_p, eps_perp, u)`` arrays of length ``T``.  Returns the
    cashflows ``(theta1, theta2)`` and a list of per-stage records ``(t, p, x,
    regime, cash1, cash2)`` where ``regime`` is the regime held during stage
    ``t``.
    """
    t0, p, x, regime = start
    eng = _Engine(model, law)
    nz = tuple(np.asarray(a, dtype=float).reshape(1, -1) for a in noise)
    theta, rec = eng.replay(t0, np.array([np.log(p)]), np.array([np.log(x)]),
                            np.array([regime], dtype=np.int64), nz, record=True)
    rows = [(s, float(np.exp(lp[0])), float(np.exp(lx[0])), int(r[0]), float(c1[0]), float(c2[0]))
            for s, lp, lx, r, c1, c2 in rec]
    return float(theta[0, 0]), float(theta[0, 1]), rows


def sample_equilibrium_path(model, law, seed, path=0, regime=0):
    """Per-stage record of one equilibrium path for reporting.

    Returns a dict of arrays: ``t, p, x, regime`` (1..4, regime held during
    the stage), ``spread1, spread2`` and cumulative ``pnl1, pnl2``.
    """
    mp = model.mp
    stream = NoiseStream(seed, mp.T, stream=SAMPLE_STREAM)
    eps_p, eps_perp, u = stream.block(path, path + 1)
    _, _, rows = simulate_cashflow_path(model, law, (0, mp.p0, mp.x0, regime),
                                        (eps_p[0], eps_perp[0], u[0]))
    t = np.array([r[0] for r in rows])
    p = np.array([r[1] for r in rows])
    x = np.array([r[2] for r in rows])
    reg = np.array([r[3] for r in rows])
    s1 = spread(model.pp1, p, x, model.cap)
    s2 = spread(model.pp2, p, x, model.cap)
    return {"t": t, "p": p, "x": x, "regime": reg + 1, "spread1": s1, "spread2": s2,
            "pnl1": np.cumsum([r[4] for r in rows]), "pnl2": np.cumsum([r[5] for r in rows])}


# ----------------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------------

def _fmt(v):
    return f"{v:.17g}"


def write_path(fh, rec):
    w = csv.writer(fh)
    w.writerow(["t", "p", "x", "regime", "spread1", "spread2", "pnl1", "pnl2"])
    for k in range(len(rec["t"])):
        w.writerow([int(rec["t"][k]), _fmt(rec["p"][k]), _fmt(rec["x"][k]), int(rec["regime"][k]),
                    _fmt(rec["spread1"][k]), _fmt(rec["spread2"][k]),
                    _fmt(rec["pnl1"][k]), _fmt(rec["pnl2"][k])])


def write_coefficients(fh, model):
    w = csv.writer(fh)
    w.writerow(["t", "regime", "player"] + model.basis.names())
    T = model.coef.shape[0]
    for t in range(T):
        for z in range(4):
            for i in range(2):
                w.writerow([t, z, i + 1] + [_fmt(c) for c in model.coef[t, z, i]])
