import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divbar.errors import DomainError, NonPositiveVolatility, ParameterError
from divbar.model import (DiffusionSpec, constant_lambda_roots, gbm_gamma_roots, generator_apply,
                          make_fundamental, quadratic_roots, spec_from_dict)

import oracles

GRID = np.geomspace(0.05, 50.0, 41)


def test_gbm_roots_exact_values():
    # [DERIVED] numpy.roots on the same quadratic
    g1, g2 = gbm_gamma_roots(0.04, 0.3, 0.05)
    o1, o2 = oracles.gbm_roots(0.04, 0.3, 0.05)
    assert g1 == pytest.approx(-1.0, abs=1e-14) and g2 == pytest.approx(10 / 9, abs=1e-14)
    assert g1 == pytest.approx(o1, rel=1e-12) and g2 == pytest.approx(o2, rel=1e-12)
    for g in (g1, g2):
        assert abs(g * g + (2 * 0.04 / 0.09 - 1) * g - 2 * 0.05 / 0.09) < 1e-14


def test_constant_roots_values():
    # [DERIVED] quadratic formula via numpy.roots, checked by substitution
    lm, lp = constant_lambda_roots(0.04, 0.3, 0.05)
    # the commonly quoted 6-decimal values are off by about 2.5e-6
    assert lp == pytest.approx(0.699512, abs=5e-6)
    assert lm == pytest.approx(-1.588401, abs=5e-6)
    assert lp == pytest.approx((-0.04 + math.sqrt(0.0106)) / 0.09, rel=1e-14)
    o = oracles.const_roots(0.04, 0.3, 0.05)
    assert (lm, lp) == pytest.approx(o, rel=1e-12)
    for lam in (lm, lp):
        assert abs(0.045 * lam**2 + 0.04 * lam - 0.05) < 1e-15


def test_vieta_product_second_parameter_set():
    # [DERIVED] product of roots equals -2r/beta^2
    g1, g2 = gbm_gamma_roots(0.02, 0.2, 0.05)
    assert g1 * g2 == pytest.approx(-2.5, rel=1e-13)
    assert g1 + g2 == pytest.approx(1 - 2 * 0.02 / 0.04, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(0.0, 0.2), beta=st.floats(0.05, 1.0), frac=st.floats(0.05, 0.95))
def test_gbm_roots_vieta_property(alpha, beta, frac):
    r = alpha + (0.3 - alpha) * frac + 1e-3
    g1, g2 = gbm_gamma_roots(alpha, beta, r)
    assert g1 < 0 < 1 < g2
    assert g2 < r / alpha if alpha > 0 else True
    assert g1 * g2 == pytest.approx(-2 * r / beta**2, rel=1e-10)
    assert g1 + g2 == pytest.approx(1 - 2 * alpha / beta**2, rel=1e-9, abs=1e-9)


def test_quadratic_roots_cancellation_free():
    lo, hi = quadratic_roots(1.0, -1e8, 1.0)
    assert hi == pytest.approx(1e8, rel=1e-15)
    assert lo == pytest.approx(1e-8, rel=1e-15)


def test_spec_validation():
    with pytest.raises(ParameterError):
        DiffusionSpec.gbm(0.05, 0.3, 0.05)
    with pytest.raises(ParameterError):
        gbm_gamma_roots(0.06, 0.3, 0.05)
    with pytest.raises(NonPositiveVolatility):
        DiffusionSpec.gbm(0.04, 0.0, 0.05)
    with pytest.raises(NonPositiveVolatility):
        DiffusionSpec.constant(0.04, -0.1, 0.05)
    with pytest.raises(ParameterError):
        DiffusionSpec.constant(-0.01, 0.3, 0.05)
    with pytest.raises(ParameterError):
        DiffusionSpec.gbm(0.01, 0.3, 0.0)


def test_spec_from_dict_round_trip_and_errors():
    d = {"kind": "gbm", "alpha": 0.04, "beta": 0.3, "r": 0.05}
    assert spec_from_dict(d).to_dict() == d
    c = {"kind": "constant", "mu": 0.04, "sigma": 0.3, "r": 0.05}
    assert spec_from_dict(c).to_dict() == c
    with pytest.raises(ParameterError):
        spec_from_dict({"kind": "cir", "r": 0.05})
    with pytest.raises(ParameterError):
        spec_from_dict({"kind": "gbm", "alpha": 0.04})


def test_from_tables_interpolates_and_validates():
    ys = np.linspace(0.01, 100, 50)
    s = DiffusionSpec.from_tables([[y, 0.04 * y] for y in ys], [[y, 0.3 * y] for y in ys], 0.05)
    assert s.mu(3.0) == pytest.approx(0.12, rel=1e-12)
    assert s.sigma(7.0) == pytest.approx(2.1, rel=1e-12)
    with pytest.raises(NonPositiveVolatility):
        DiffusionSpec.from_tables([[1, 0.1], [2, 0.1]], [[1, 0.0], [2, 0.3]], 0.05)
    with pytest.raises(ParameterError):
        DiffusionSpec.from_tables([[1, 0.1]], [[1, 0.3]], 0.05)


def test_generator_examples(gbm_spec):
    # [TRIVIAL] L1 = -r
    assert generator_apply(gbm_spec, lambda y: np.ones_like(y), 2.0) == pytest.approx(-0.05, abs=1e-9)
    # [DERIVED] hand evaluation: L y = mu - r y
    const = DiffusionSpec.constant(0.04, 0.3, 0.05)
    val = generator_apply(const, lambda y: y, 3.0, df=lambda y: np.ones_like(y),
                          d2f=lambda y: np.zeros_like(y))
    assert val == pytest.approx(-0.11, abs=1e-15)
    with pytest.raises(DomainError):
        generator_apply(const, lambda y: y, 0.0)


@pytest.mark.parametrize("spec", [DiffusionSpec.gbm(0.04, 0.3, 0.05),
                                  DiffusionSpec.constant(0.04, 0.3, 0.05)])
def test_fundamental_pair_invariants(spec):
    P = make_fundamental(spec)
    psi, phi = P.psi(GRID / 10), P.phi(GRID / 10)
    assert np.all(np.diff(psi) > 0) and np.all(np.diff(phi) < 0)
    assert np.all(psi > 0) and np.all(phi > 0)
    y = GRID / 10
    sp = P.phi(y) * P.dpsi(y) - P.psi(y) * P.dphi(y)
    np.testing.assert_allclose(P.sprime(y), sp, rtol=1e-13)
    assert np.all(sp > 0)
    for f, df, d2f in ((P.psi, P.dpsi, P.d2psi), (P.phi, P.dphi, P.d2phi)):
        res = generator_apply(spec, f, y, df=df, d2f=d2f)
        assert np.all(np.abs(res) <= 1e-12 + 1e-10 * spec.r * np.abs(f(y)))


def test_gbm_pair_generator_residual_by_finite_differences(gbm_pair, gbm_spec):
    # [TRIVIAL] psi is a fundamental solution: L psi(1) = 0
    res = generator_apply(gbm_spec, gbm_pair.psi, 1.0)
    assert abs(res) < 1e-7


def test_log_sprime_slope_matches_scale_density(gbm_pair, gbm_spec):
    # S''/S' = -2 mu / sigma^2, by central differences of log S'
    y = np.geomspace(0.1, 20, 17)
    h = 1e-5 * y
    slope = (gbm_pair.log_sprime(y + h) - gbm_pair.log_sprime(y - h)) / (2 * h)
    np.testing.assert_allclose(slope, -2 * gbm_spec.mu_over_sigma2(y), rtol=1e-7)


def _custom_gbm():
    return DiffusionSpec.custom(lambda y: 0.04 * np.asarray(y), lambda y: 0.3 * np.asarray(y), 0.05)


def test_numeric_pair_is_positive_multiple_of_analytic(gbm_pair):
    num = make_fundamental(_custom_gbm(), (0.05, 50.0))
    y = np.geomspace(0.06, 45.0, 40)
    for a, b in ((num.psi, gbm_pair.psi), (num.phi, gbm_pair.phi)):
        ratio = a(y) / b(y)
        assert np.ptp(ratio) / ratio.mean() < 1e-6
    assert num.normalization["psi"] == pytest.approx(1.0) and num.normalization["phi"] == pytest.approx(1.0)


def test_numeric_pair_constant_coefficients():
    spec = DiffusionSpec.custom(lambda y: np.full_like(np.asarray(y, float), 0.04),
                                lambda y: np.full_like(np.asarray(y, float), 0.3), 0.05)
    num = make_fundamental(spec, (0.1, 8.0))
    lm, lp = constant_lambda_roots(0.04, 0.3, 0.05)
    y = np.linspace(0.2, 7.5, 30)
    np.testing.assert_allclose(num.dlog_psi(y), lp, rtol=1e-7)
    np.testing.assert_allclose(num.dlog_phi(y), lm, rtol=1e-7)


def test_numeric_pair_requires_domain():
    with pytest.raises(DomainError):
        make_fundamental(_custom_gbm())
    with pytest.raises(DomainError):
        make_fundamental(_custom_gbm(), (0.0, 1.0))


def test_zero_volatility_in_domain_rejected():
    spec = DiffusionSpec.custom(lambda y: 0.01 * np.asarray(y),
                                lambda y: np.maximum(0.3 * (np.asarray(y) - 1.0), 0.0), 0.05)
    with pytest.raises(NonPositiveVolatility):
        make_fundamental(spec, (0.5, 2.0))


def test_mu_over_sigma2_derivative_fd_for_custom():
    s = _custom_gbm()
    x = 1.7
    assert s.d_mu_over_sigma2(x) == pytest.approx(-0.04 / (0.09 * x * x), rel=1e-6)
    assert math.isfinite(s.d_mu_over_sigma2(0.3))
