import os

import numpy as np
import pytest

from divbar import gbm
from divbar import simulate as S
from divbar.barrier import Barrier
from divbar.errors import ParameterError
from divbar.model import DiffusionSpec

import oracles

LOG = S.SimConfig(dt=1e-3, n_paths=2000, seed=0, scheme=S.LOG_EULER)


def test_config_validation():
    with pytest.raises(ParameterError):
        S.SimConfig(dt=0.0)
    with pytest.raises(ParameterError):
        S.SimConfig(n_paths=0)
    with pytest.raises(ParameterError):
        S.SimConfig(dt=0.1, t_max=0.01)
    with pytest.raises(ParameterError):
        S.SimConfig(scheme="Milstein")
    with pytest.raises(ParameterError):
        S.SimConfig(seed=-1)
    cfg = S.SimConfig()
    assert cfg.horizon(0.05) == pytest.approx(1000.0)
    assert cfg.n_steps(0.05) == 1_000_000
    with pytest.raises(ParameterError):
        S.run_controlled(0.1, 1.0, Barrier.ray(2.0, 0.01, 10), DiffusionSpec.constant(0.04, 0.3, 0.05), LOG)


def test_start_on_diagonal_pays_nothing(gbm_spec, ray_barrier):
    p = S.run_controlled(0.5, 0.5, ray_barrier, gbm_spec, LOG)
    assert p.payoff == 0.0 and p.absorbed and len(p.t) == 1
    with pytest.raises(ParameterError):
        S.run_controlled(1.0, 0.5, ray_barrier, gbm_spec, LOG)


def test_lump_payment_at_time_zero(gbm_spec, ray_barrier, gbm_sol):
    x, y = 0.2, 2.0
    p = S.run_controlled(x, y, ray_barrier, gbm_spec, LOG)
    assert p.X[0] == pytest.approx(y / gbm_sol.C, rel=1e-12)
    assert p.D[0] == pytest.approx(y / gbm_sol.C - x, rel=1e-12)
    assert p.payoff >= p.D[0]


def test_skorokhod_property_and_ratio(gbm_spec, ray_barrier, gbm_sol):
    cfg = S.SimConfig(dt=1e-3, t_max=200.0, seed=5, scheme=S.LOG_EULER)
    for path in range(8):
        p = S.run_controlled(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec, cfg, path=path)
        assert S.check_skorokhod(p, ray_barrier)
        assert S.check_gbm_ratio_at_payments(p, gbm_sol.C)
        assert np.all(np.diff(p.D) >= 0)
        assert p.payment_error < 1e-10
    # [TRIVIAL] the same path never shows the ratio 2C at its payments
    assert np.any(np.diff(p.X) > 0)
    assert not S.check_gbm_ratio_at_payments(p, 2 * gbm_sol.C)


def test_euler_scheme_also_pays_only_on_barrier(gbm_spec, ray_barrier, gbm_sol):
    cfg = S.SimConfig(dt=1e-3, t_max=50.0, seed=2, scheme=S.EULER)
    for path in range(4):
        p = S.run_controlled(0.5, 0.5 * gbm_sol.C, ray_barrier, gbm_spec, cfg, path=path)
        assert S.check_skorokhod(p, ray_barrier)


def test_reproducible(gbm_spec, ray_barrier, gbm_sol):
    cfg = S.SimConfig(dt=1e-2, n_paths=300, seed=9, scheme=S.LOG_EULER)
    a = S.controlled_payoffs(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec, cfg)
    b = S.controlled_payoffs(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec, cfg)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    # the batch kernel and the single-path recorder draw the same numbers
    p = S.run_controlled(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec, cfg, path=17)
    assert p.payoff == a[0][17]


def test_thread_cap_does_not_change_results(gbm_spec, ray_barrier, gbm_sol, monkeypatch):
    cfg = S.SimConfig(dt=1e-2, n_paths=200, seed=4, scheme=S.LOG_EULER)
    a = S.controlled_payoffs(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec, cfg)[0]
    monkeypatch.setenv("DIVBAR_THREADS", "1")
    b = S.controlled_payoffs(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec, cfg)[0]
    np.testing.assert_array_equal(a, b)


def test_censoring_reported(gbm_spec, ray_barrier, gbm_sol):
    cfg = S.SimConfig(dt=1e-2, n_paths=200, t_max=0.05, seed=0, scheme=S.LOG_EULER)
    e = S.estimate_J(0.2, 0.5, ray_barrier, gbm_spec, cfg)
    assert e.censored_fraction > 0.9
    assert e.absorbed_fraction + e.censored_fraction == pytest.approx(1.0)
    p = S.run_controlled(0.2, 0.5, ray_barrier, gbm_spec, cfg)
    assert p.status == S.CENSORED and not p.absorbed


def test_small_sample_J_and_suboptimal_barrier(gbm_spec, ray_barrier, gbm_sol):
    # coarse sanity check; the full-scale comparison lives in the acceptance suite
    x, y = 0.2, 0.2 * gbm_sol.C
    e = S.estimate_J(x, y, ray_barrier, gbm_spec, LOG)
    assert e.censored_fraction == 0.0
    assert abs(e.mean - 0.8) < 0.15
    wide = Barrier.ray(2 * gbm_sol.C, 1e-3, 1e3)
    e2 = S.estimate_J(x, y, wide, gbm_spec, LOG)
    assert e2.mean < e.mean


def test_projection_algebra():
    assert S.oblique_projection(2.0, 1.5) == (2.5, 2.5, 1.0)
    assert S.oblique_projection(1.0, 3.0) == (1.0, 3.0, 0.0)
    rs = np.random.default_rng(0)
    for X, Y in rs.uniform(0.1, 5, (50, 2)):
        Xn, Yn, dA = S.oblique_projection(X, Y)
        assert Yn >= Xn - 1e-15
        assert dA >= 0
        if dA > 0:
            assert Yn == pytest.approx(Xn, abs=1e-12)
            assert (Xn - X) == pytest.approx(0.5 * (Yn - Y), abs=1e-12)


def test_reflected_path_local_time_only_on_diagonal(gbm_spec):
    cfg = S.SimConfig(dt=1e-3, seed=1, scheme=S.LOG_EULER)
    p = S.simulate_reflected(1.0, 2.0, gbm_spec, cfg, n_steps=20000)
    assert np.all(p.Y >= p.X * (1 - 1e-12))
    first = np.argmax(p.A_hat > 0)
    assert first > 0
    assert np.all(p.A_hat[:first] == 0.0)
    inc = np.diff(p.A_hat) > 0
    np.testing.assert_allclose(p.Y[1:][inc], p.X[1:][inc], rtol=1e-12)
    assert np.all(np.diff(p.X) >= 0) and np.all(np.diff(p.A_hat) >= 0)
    # for gBm the intensity is alpha / (beta^2 x)
    assert np.all(p.A >= 0)


def test_constant_gap_matches_skorokhod_map():
    spec = DiffusionSpec.constant(0.04, 0.3, 0.05)
    cfg = S.SimConfig(dt=1e-2, seed=3)
    for path in range(4):
        p = S.simulate_reflected(1.0, 1.2, spec, cfg, n_steps=20000, path=path)
        err = S.gap_oracle_error(p)
        assert err["gap_sup"] < 1e-12 and err["local_time_sup"] < 1e-12
        Z = p.Y - p.X
        ref = oracles.skorokhod_map(Z[0], p.dM[1:])
        np.testing.assert_allclose(Z[1:], ref, atol=1e-12 * (1 + np.abs(p.Y).max()))
        np.testing.assert_allclose(Z[1:], oracles.lindley(Z[0], p.dM[1:]), atol=1e-12 * (1 + np.abs(p.Y).max()))
        # the constant intensity mu / sigma^2 turns A_hat into A
        np.testing.assert_allclose(p.A, 0.04 / 0.09 * p.A_hat, rtol=1e-12, atol=1e-15)


def test_stopping_values_at_and_above_barrier(gbm_spec, ray_barrier, gbm_sol):
    cfg = S.SimConfig(dt=1e-3, n_paths=50, seed=0, scheme=S.LOG_EULER)
    e = S.estimate_stopping_value(1.0, 1.01 * gbm_sol.C, ray_barrier, gbm_spec, cfg)
    assert e.mean == 1.0 and e.stderr == 0.0
    v, tau, st = S.stopping_values(1.0, gbm_sol.C, ray_barrier, gbm_spec, cfg)
    assert np.all(v == 1.0) and np.all(tau == 0.0) and np.all(st == S.STOPPED)


def test_small_sample_stopping(gbm_spec, ray_barrier, gbm_sol):
    e = S.estimate_stopping_value(1.0, 2.0, ray_barrier, gbm_spec, LOG)
    u = gbm.ustar_closed(1.0, 2.0, gbm_sol)
    assert e.censored_fraction == 0.0
    assert abs(e.mean - u) < 0.15
    assert e.mean > 1.0


def test_custom_model_simulates(gbm_sol):
    spec = DiffusionSpec.custom(lambda y: 0.04 * np.asarray(y), lambda y: 0.3 * np.asarray(y), 0.05)
    cfg = S.SimConfig(dt=1e-3, n_paths=20, t_max=20.0, seed=0)
    b = Barrier.ray(gbm_sol.C, 1e-3, 1e3)
    e = S.estimate_J(0.2, 0.2 * gbm_sol.C, b, spec, cfg)
    assert np.isfinite(e.mean) and e.mean > 0
    with pytest.raises(ParameterError):
        S.estimate_J(0.2, 0.5, b, spec, S.SimConfig(scheme=S.LOG_EULER))


def test_path_csv(tmp_path, gbm_spec, ray_barrier, gbm_sol):
    p = S.run_controlled(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec,
                         S.SimConfig(dt=1e-2, t_max=5.0, seed=0, scheme=S.LOG_EULER))
    f = tmp_path / "p.csv"
    p.write_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == S.CSV_HEADER
    assert lines[1] == "t,Y,X,D,absorbed"
    assert len(lines) == len(p.t) + 2
    os.remove(f)


def test_stopping_moment_bias_is_order_sqrt_dt(gbm_spec, ray_barrier, gbm_sol):
    # E[V^p] with 2p below the moment pole has finite variance; the projection scheme
    # carries an O(sqrt(dt)) bias, so two step sizes a factor 4 apart extrapolate it away
    p = 0.25
    pole = oracles.stopping_moment_pole(gbm_sol.C, **oracles.GBM)
    assert 2 * p < pole < 2
    exact = oracles.stopping_moment_ode(2.0, gbm_sol.C, p, **oracles.GBM)
    m, se = [], []
    for dt in (1e-2, 2.5e-3):
        cfg = S.SimConfig(dt=dt, n_paths=50_000, seed=21, scheme=S.LOG_EULER)
        w = S.stopping_values(1.0, 2.0, ray_barrier, gbm_spec, cfg)[0] ** p
        m.append(w.mean())
        se.append(w.std(ddof=1) / np.sqrt(w.size))
    assert m[0] < m[1] < exact
    extrap = 2 * m[1] - m[0]
    se_ex = np.hypot(2 * se[1], se[0])
    assert abs(extrap - exact) < 4 * se_ex


def test_J_dt_refinement(gbm_spec, ray_barrier, gbm_sol):
    est = [S.estimate_J(0.2, 0.2 * gbm_sol.C, ray_barrier, gbm_spec,
                        S.SimConfig(dt=dt, n_paths=20_000, seed=8, scheme=S.LOG_EULER))
           for dt in (1e-2, 5e-3)]
    # discrete absorption is first order in sqrt(dt) of the log-volatility step
    order_bound = 0.3 * np.sqrt(1e-2) * 0.8
    diff = abs(est[0].mean - est[1].mean)
    assert diff < max(2 * np.hypot(est[0].stderr, est[1].stderr), order_bound)
