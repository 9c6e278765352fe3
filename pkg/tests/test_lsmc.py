import dataclasses
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from switchgame.errors import ConfigError, NumericalError
from switchgame.market import PRODUCER1, PRODUCER2, MarketParams, NoiseStream
from switchgame.matrix_game import Preferential, Utilitarian
from switchgame.mca import build_lattice
from switchgame.lsmc import (SAMPLE_STREAM, BasisSpec, RegressionModel, ValueEstimate, fit_stage,
                             sample_equilibrium_path, simulate_cashflow_path, solve_lsmc, write_coefficients,
                             write_path)
from switchgame.single import solve_single

from oracles import spread_sums

MP = MarketParams()
COSTLY1 = dataclasses.replace(PRODUCER1, K01=1e9, K10=1e9)
COSTLY2 = dataclasses.replace(PRODUCER2, K01=1e9, K10=1e9)


# ----------------------------------------------------------------------------
# regression
# ----------------------------------------------------------------------------

def test_basis_evaluation():
    b = BasisSpec()
    assert b.r == 6 and b.intercept == 0
    row = b.evaluate(50.0, 15.0)
    assert row.tolist() == [1.0, 50.0, 15.0, 225.0, 5.0, 10.0]
    assert b.evaluate(30.0, 15.0)[4:].tolist() == [0.0, 0.0]
    assert b.names()[0] == "p^0x^0"
    with pytest.raises(ConfigError):
        BasisSpec(monomials=(), hinges=())
    with pytest.raises(ConfigError):
        BasisSpec(monomials=((0.5, 0),))


def test_fit_recovers_exact_linear_targets():
    rng = np.random.default_rng(0)
    p, x = rng.uniform(30, 60, 500), rng.uniform(5, 30, 500)
    B = BasisSpec().evaluate(p, x)
    coef = np.array([3.0, -0.2, 0.5, 0.01, 0.3, -0.1])
    fit = fit_stage(B, B @ coef, intercept=0)
    np.testing.assert_allclose(fit.coef, coef, rtol=1e-8, atol=1e-10)
    assert fit.resid_se < 1e-9 and not fit.rank_deficient


def test_fit_constant_targets():
    rng = np.random.default_rng(1)
    B = BasisSpec().evaluate(rng.uniform(30, 60, 300), rng.uniform(5, 30, 300))
    fit = fit_stage(B, np.full(300, 7.0), intercept=0)
    assert fit.coef[0] == pytest.approx(7.0, abs=1e-10)
    np.testing.assert_allclose(fit.coef[1:], 0, atol=1e-10)


def test_fit_on_identical_samples_keeps_only_the_intercept():
    B = np.tile(BasisSpec().evaluate(45.0, 15.0), (50, 1))
    fit = fit_stage(B, np.full(50, 2.5), intercept=0)
    assert fit.coef[0] == pytest.approx(2.5, rel=1e-15)
    assert fit.coef[1:].tolist() == [0, 0, 0, 0, 0]


@pytest.mark.parametrize("intercept", [None, 0])
def test_fit_synthetic_gaussian_design(intercept):
    rng = np.random.default_rng(2)
    N, r, noise = 1000, 6, 0.1
    B = rng.normal(size=(N, r))
    if intercept is not None:
        B[:, 0] = 1.0
    truth = rng.normal(size=r)
    y = B @ truth + noise * rng.normal(size=N)
    fit = fit_stage(B, y, intercept=intercept)
    se = noise * np.sqrt(np.diag(np.linalg.inv(B.T @ B)))
    assert np.all(np.abs(fit.coef - truth) <= 3 * se)
    assert fit.resid_se == pytest.approx(noise, rel=0.1)


def test_fit_flags_collinear_design():
    rng = np.random.default_rng(3)
    a = rng.normal(size=200)
    B = np.c_[np.ones(200), a, 2 * a]
    fit = fit_stage(B, 1 + a, intercept=0)
    assert fit.rank_deficient
    # the twin columns share the slope; predictions are still exact
    assert fit.coef[1] + 2 * fit.coef[2] == pytest.approx(1.0)
    assert fit.coef[1] > 0 and fit.coef[2] > 0
    np.testing.assert_allclose(B @ fit.coef, 1 + a, atol=1e-10)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_stage(np.ones((3, 6)), np.ones(3))
    with pytest.raises(NumericalError):
        fit_stage(np.ones((10, 2)), np.r_[np.ones(9), np.nan])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_fit_residual_is_orthogonal_to_features(seed):
    rng = np.random.default_rng(seed)
    B = BasisSpec().evaluate(rng.uniform(20, 80, 100), rng.uniform(2, 40, 100))
    y = rng.normal(size=100) * 5
    fit = fit_stage(B, y, intercept=0)
    resid = y - B @ fit.coef
    scale = np.abs(B).max(axis=0) * np.abs(y).max() * 100
    assert np.all(np.abs(B.T @ resid) <= 1e-8 * scale)


# ----------------------------------------------------------------------------
# forward simulation
# ----------------------------------------------------------------------------

def test_zero_model_with_unaffordable_switches_accrues_starting_spread():
    model = RegressionModel.zeros(MP, COSTLY1, COSTLY2, BasisSpec(), cap=1e6)
    eps_p, eps_perp, u = NoiseStream(4, MP.T).block(0, 1)
    for regime in range(4):
        t1, t2, rows = simulate_cashflow_path(model, Preferential(1), (0, MP.p0, MP.x0, regime),
                                              (eps_p[0], eps_perp[0], u[0]))
        assert all(r[3] == regime for r in rows)
        expected = spread_sums(MP, regime, (eps_p, eps_perp))[0]
        assert t1 == pytest.approx(expected[0], abs=1e-12)
        assert t2 == pytest.approx(expected[1], abs=1e-12)


def test_unaffordable_switching_gives_expected_spread_sums():
    res = solve_lsmc(MP, COSTLY1, COSTLY2, Utilitarian(), n_paths=3000, outer_iters=1, seed=5, cap=1e6)
    eps_p, eps_perp, _ = NoiseStream(777, MP.T).block(0, 50_000)
    for regime in range(4):
        oracle = spread_sums(MP, regime, (eps_p, eps_perp))
        for i in range(2):
            se = np.hypot(res.estimate.se[i, regime], oracle[:, i].std(ddof=1) / np.sqrt(len(oracle)))
            assert abs(res.estimate.mean[i, regime] - oracle[:, i].mean()) <= 3 * se + 1e-12
    assert res.estimate.value(0) == (0.0, 0.0)


def test_zero_volatility_is_deterministic():
    quiet = MarketParams(sigmaP=0, sigmaX=0, T=8)
    res = solve_lsmc(quiet, COSTLY1, COSTLY2, Utilitarian(), n_paths=50, outer_iters=1, seed=1, cap=1e6)
    assert np.all(res.estimate.se <= 1e-15)
    zeros = np.zeros((1, quiet.T))
    for regime in range(4):
        exact = spread_sums(quiet, regime, (zeros, zeros))[0]
        np.testing.assert_allclose(res.estimate.mean[:, regime], exact, rtol=0, atol=1e-12)
    # with ordinary costs every path is still the same one
    res = solve_lsmc(quiet, PRODUCER1, PRODUCER2, Utilitarian(), n_paths=50, outer_iters=2, seed=1)
    assert np.all(res.estimate.se <= 1e-15)
    rec = sample_equilibrium_path(res.model, Utilitarian(), seed=9)
    again = sample_equilibrium_path(res.model, Utilitarian(), seed=10)
    assert rec["regime"].tolist() == again["regime"].tolist()


def test_sample_path_bookkeeping():
    res = solve_lsmc(MP, PRODUCER1, PRODUCER2, Utilitarian(), n_paths=1000, outer_iters=1, seed=8)
    model = res.model
    seed, path = 21, 3
    eps_p, eps_perp, u = NoiseStream(seed, MP.T, stream=SAMPLE_STREAM).block(path, path + 1)
    t1, t2, rows = simulate_cashflow_path(model, Utilitarian(), (0, MP.p0, MP.x0, 0), (eps_p[0], eps_perp[0], u[0]))
    rec = sample_equilibrium_path(model, Utilitarian(), seed, path=path)
    assert rec["pnl1"][-1] == pytest.approx(t1, abs=1e-12)
    assert rec["pnl2"][-1] == pytest.approx(t2, abs=1e-12)
    assert set(rec["regime"].tolist()) <= {1, 2, 3, 4}
    assert rec["t"].tolist() == list(range(MP.T))
    # recompute the P&L from the path columns alone
    held = np.r_[0, rec["regime"] - 1]
    z1, z2 = held // 2, held % 2
    sw1 = np.abs(np.diff(z1))
    sw2 = np.abs(np.diff(z2))
    k1 = np.where(z1[:-1] == 0, PRODUCER1.K01, PRODUCER1.K10) * sw1
    k2 = np.where(z2[:-1] == 0, PRODUCER2.K01, PRODUCER2.K10) * sw2
    np.testing.assert_allclose(np.cumsum(rec["spread1"] * z1[1:] * MP.dt - k1), rec["pnl1"], atol=1e-12)
    np.testing.assert_allclose(np.cumsum(rec["spread2"] * z2[1:] * MP.dt - k2), rec["pnl2"], atol=1e-12)
    buf = io.StringIO()
    write_path(buf, rec)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,p,x,regime,spread1,spread2,pnl1,pnl2" and len(lines) == MP.T + 1


def test_results_do_not_depend_on_thread_count():
    kw = dict(n_paths=5000, outer_iters=1, seed=2024)
    a = solve_lsmc(MP, PRODUCER1, PRODUCER2, Utilitarian(), threads=1, **kw)
    b = solve_lsmc(MP, PRODUCER1, PRODUCER2, Utilitarian(), threads=3, **kw)
    assert a.estimate.mean.tobytes() == b.estimate.mean.tobytes()
    assert a.estimate.se.tobytes() == b.estimate.se.tobytes()
    assert a.model.coef.tobytes() == b.model.coef.tobytes()
    fa, fb = io.StringIO(), io.StringIO()
    write_coefficients(fa, a.model)
    write_coefficients(fb, b.model)
    assert fa.getvalue() == fb.getvalue()
    c = solve_lsmc(MP, PRODUCER1, PRODUCER2, Utilitarian(), threads=1, n_paths=5000, outer_iters=1, seed=2025)
    assert not np.array_equal(a.estimate.mean, c.estimate.mean)
    # a different seed moves the estimate by sampling noise only
    se = np.hypot(a.estimate.se[:, 0], c.estimate.se[:, 0])
    assert np.all(np.abs(a.estimate.mean[:, 0] - c.estimate.mean[:, 0]) <= 4 * se)


def test_frozen_opponent_matches_single_player():
    res = solve_lsmc(MP, PRODUCER1, COSTLY2, Utilitarian(), n_paths=10000, outer_iters=2, seed=3)
    lat = build_lattice(MP, PRODUCER1, COSTLY2, sizes=(71, 71))
    fine = build_lattice(MP, PRODUCER1, COSTLY2, sizes=(141, 141))
    coarse_sol, fine_sol = solve_single(lat, 1, 0), solve_single(fine, 1, 0)
    for regime, table in ((0, "W"), (2, "V")):
        v = getattr(fine_sol, table)[0, fine.node_of(MP.p0, MP.x0)]
        delta = abs(v - getattr(coarse_sol, table)[0, lat.node_of(MP.p0, MP.x0)])
        assert abs(res.estimate.mean[0, regime] - v) <= max(3 * res.estimate.se[0, regime], delta)


def test_validation():
    with pytest.raises(ConfigError):
        solve_lsmc(MP, PRODUCER1, PRODUCER2, Utilitarian(), n_paths=3)
    with pytest.raises(ConfigError):
        solve_lsmc(MP, PRODUCER1, PRODUCER2, Utilitarian(), n_paths=100, outer_iters=0)


def test_non_finite_cashflows_abort():
    model = RegressionModel.zeros(MP, PRODUCER1, PRODUCER2, BasisSpec())
    model.coef[:] = np.nan
    eps_p, eps_perp, u = NoiseStream(4, MP.T).block(0, 1)
    with pytest.raises(NumericalError):
        simulate_cashflow_path(model, Utilitarian(), (0, MP.p0, MP.x0, 0), (eps_p[0], eps_perp[0], u[0]))


def test_stabilization_flag():
    se = np.full((2, 4), 0.01)
    h = [np.zeros((2, 4)), np.full((2, 4), 0.1), np.full((2, 4), 0.15)]
    assert ValueEstimate(h[-1], se, 100, h).check_stabilization()
    h[-1] = np.full((2, 4), 0.3)
    assert not ValueEstimate(h[-1], se, 100, h).check_stabilization()
    h[-1] = np.full((2, 4), 0.115)
    assert ValueEstimate(h[-1], se, 100, h[1:]).check_stabilization()
    assert ValueEstimate(h[0], se, 100, h[:1]).check_stabilization()
