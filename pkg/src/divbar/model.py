"""Diffusion coefficients, the killed generator and the fundamental solutions.

Every fundamental pair is stored in logarithmic form (``log psi``, ``log phi``
and the log-derivatives ``p = psi'/psi``, ``q = phi'/phi``).  Ratios such as
``phi(y)/phi(b)`` are then formed as differences of logs, which keeps the
boundary field and the value function finite for anchors far out on the
state axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, IntegrationFailure, NonPositiveVolatility, ParameterError

GBM = "gbm"
CONSTANT = "constant"
CUSTOM = "custom"

ArrayLike = "float | np.ndarray"


def _fd_step(x):
    return 1e-5 * (1.0 + np.abs(x))


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """Coefficients ``mu``, ``sigma`` of the pre-dividend capital and the discount rate.

    Use the constructors :meth:`gbm`, :meth:`constant` and :meth:`custom`
    rather than instantiating directly.
    """

    kind: str
    r: float
    alpha: float = math.nan
    beta: float = math.nan
    mu_const: float = math.nan
    sigma_const: float = math.nan
    mu_fn: Optional[Callable] = None
    sigma_fn: Optional[Callable] = None
    dmu_fn: Optional[Callable] = None
    dsigma_fn: Optional[Callable] = None
    # (lo, hi) where custom coefficients are trustworthy; None means (0, inf)
    support: Optional[Tuple[float, float]] = None
    tables: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.r > 0):
            raise ParameterError(f"discount rate must be positive, got r={self.r}")
        if self.kind == GBM:
            if not (self.beta > 0):
                raise NonPositiveVolatility(f"beta must be positive, got {self.beta}")
            if not (self.alpha >= 0):
                raise ParameterError(f"alpha must be non-negative, got {self.alpha}")
            if not (self.alpha < self.r):
                raise ParameterError(f"gBm requires alpha < r (alpha={self.alpha}, r={self.r})")
        elif self.kind == CONSTANT:
            if not (self.sigma_const > 0):
                raise NonPositiveVolatility(f"sigma must be positive, got {self.sigma_const}")
            if not (self.mu_const >= 0):
                raise ParameterError(f"mu must be non-negative, got {self.mu_const}")
        elif self.kind == CUSTOM:
            if self.mu_fn is None or self.sigma_fn is None:
                raise ParameterError("custom model needs both mu and sigma callables")
        else:
            raise ParameterError(f"unknown model kind {self.kind!r}")

    # -- constructors -------------------------------------------------------
    @classmethod
    def gbm(cls, alpha: float, beta: float, r: float) -> "DiffusionSpec":
        return cls(GBM, float(r), alpha=float(alpha), beta=float(beta))

    @classmethod
    def constant(cls, mu: float, sigma: float, r: float) -> "DiffusionSpec":
        return cls(CONSTANT, float(r), mu_const=float(mu), sigma_const=float(sigma))

    @classmethod
    def custom(cls, mu, sigma, r, dmu=None, dsigma=None, support=None) -> "DiffusionSpec":
        return cls(CUSTOM, float(r), mu_fn=mu, sigma_fn=sigma, dmu_fn=dmu, dsigma_fn=dsigma,
                   support=support)

    @classmethod
    def from_tables(cls, mu_table: Sequence, sigma_table: Sequence, r: float) -> "DiffusionSpec":
        """Custom model from ``[[y, value], ...]`` tables, interpolated by monotone cubics."""
        mt = np.asarray(mu_table, dtype=float)
        st = np.asarray(sigma_table, dtype=float)
        if mt.ndim != 2 or mt.shape[1] != 2 or st.ndim != 2 or st.shape[1] != 2:
            raise ParameterError("tables must be lists of [y, value] pairs")
        if len(mt) < 2 or len(st) < 2:
            raise ParameterError("tables need at least two rows")
        if np.any(st[:, 1] <= 0):
            raise NonPositiveVolatility("sigma table contains non-positive entries")
        if np.any(mt[:, 1] < 0):
            raise ParameterError("mu table contains negative entries")
        mu_i = PchipInterpolator(mt[:, 0], mt[:, 1])
        sg_i = PchipInterpolator(st[:, 0], st[:, 1])
        support = (max(mt[0, 0], st[0, 0]), min(mt[-1, 0], st[-1, 0]))
        return cls(CUSTOM, float(r), mu_fn=mu_i, sigma_fn=sg_i, dmu_fn=mu_i.derivative(),
                   dsigma_fn=sg_i.derivative(), support=support,
                   tables={"mu_table": mt.tolist(), "sigma_table": st.tolist()})

    # -- coefficients -------------------------------------------------------
    def mu(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == GBM:
            return self.alpha * y
        if self.kind == CONSTANT:
            return np.full_like(y, self.mu_const)
        return np.asarray(self.mu_fn(y), dtype=float) + 0.0 * y

    def sigma(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == GBM:
            return self.beta * y
        if self.kind == CONSTANT:
            return np.full_like(y, self.sigma_const)
        return np.asarray(self.sigma_fn(y), dtype=float) + 0.0 * y

    def sigma2(self, y):
        return self.sigma(y) ** 2

    def mu_over_sigma2(self, y):
        return self.mu(y) / self.sigma2(y)

    def d_mu_over_sigma2(self, y):
        """Derivative of ``mu/sigma^2``; analytic where possible, else central differences."""
        y = np.asarray(y, dtype=float)
        if self.kind == GBM:
            return -self.alpha / (self.beta**2 * y**2)
        if self.kind == CONSTANT:
            return np.zeros_like(y)
        if self.dmu_fn is not None and self.dsigma_fn is not None:
            s = self.sigma(y)
            dmu = np.asarray(self.dmu_fn(y), dtype=float)
            ds = np.asarray(self.dsigma_fn(y), dtype=float)
            return dmu / s**2 - 2.0 * self.mu(y) * ds / s**3
        h = _fd_step(y)
        return (self.mu_over_sigma2(y + h) - self.mu_over_sigma2(y - h)) / (2.0 * h)

    def to_dict(self) -> dict:
        if self.kind == GBM:
            return {"kind": GBM, "alpha": self.alpha, "beta": self.beta, "r": self.r}
        if self.kind == CONSTANT:
            return {"kind": CONSTANT, "mu": self.mu_const, "sigma": self.sigma_const, "r": self.r}
        if self.tables is None:
            raise ParameterError("callable-based custom models cannot be serialised")
        return {"kind": CUSTOM, **self.tables, "r": self.r}


def spec_from_dict(d: dict) -> DiffusionSpec:
    """Build a :class:`DiffusionSpec` from the JSON model-file layout."""
    try:
        kind = d["kind"]
        if kind == GBM:
            return DiffusionSpec.gbm(d["alpha"], d["beta"], d["r"])
        if kind == CONSTANT:
            return DiffusionSpec.constant(d["mu"], d["sigma"], d["r"])
        if kind == CUSTOM:
            return DiffusionSpec.from_tables(d["mu_table"], d["sigma_table"], d["r"])
    except KeyError as exc:
        raise ParameterError(f"model file is missing field {exc}") from None
    except TypeError as exc:
        raise ParameterError(f"malformed model file: {exc}") from None
    raise ParameterError(f"unknown model kind {d.get('kind')!r}")


# ---------------------------------------------------------------------------
# quadratic roots


def quadratic_roots(a: float, b: float, c: float) -> Tuple[float, float]:
    """Real roots of ``a t^2 + b t + c`` in increasing order (cancellation-free form)."""
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise ParameterError("quadratic has no real roots")
    sq = math.sqrt(disc)
    qq = -0.5 * (b + math.copysign(sq, b)) if b != 0 else -0.5 * sq
    r1 = qq / a
    r2 = c / qq if qq != 0 else -r1
    return (min(r1, r2), max(r1, r2))


def gbm_gamma_roots(alpha: float, beta: float, r: float) -> Tuple[float, float]:
    """Roots ``gamma1 < 0 < gamma2`` of ``g^2 + (2 alpha/beta^2 - 1) g - 2 r/beta^2``.

    ``gamma2`` exceeds 1 whenever ``alpha < r``; only ``gamma2 < r/alpha`` is
    asserted.
    """
    if not beta > 0:
        raise NonPositiveVolatility(f"beta must be positive, got {beta}")
    if not alpha < r:
        raise ParameterError(f"gBm requires alpha < r (alpha={alpha}, r={r})")
    g1, g2 = quadratic_roots(1.0, 2.0 * alpha / beta**2 - 1.0, -2.0 * r / beta**2)
    assert g1 < 0 < g2
    assert alpha == 0 or g2 < r / alpha
    return g1, g2


def constant_lambda_roots(mu: float, sigma: float, r: float) -> Tuple[float, float]:
    """Roots ``lambda- < 0 < lambda+`` of ``(sigma^2/2) l^2 + mu l - r``."""
    if not sigma > 0:
        raise NonPositiveVolatility(f"sigma must be positive, got {sigma}")
    return quadratic_roots(0.5 * sigma**2, mu, -r)


# ---------------------------------------------------------------------------
# fundamental pair


class FundamentalPair:
    """Increasing (``psi``) and decreasing (``phi``) positive solutions of ``L f = 0``.

    Normalised so that ``psi(c) = phi(c) = 1`` at the anchor ``c``; then
    ``S'(y) = phi psi' - psi phi'``.  Only the log-representation is stored.
    """

    def __init__(self, spec, log_psi, dlog_psi, log_phi, dlog_phi, anchor,
                 domain=(0.0, math.inf), method="analytic"):
        self.spec = spec
        self.log_psi = log_psi
        self.dlog_psi = dlog_psi
        self.log_phi = log_phi
        self.dlog_phi = dlog_phi
        self.anchor = float(anchor)
        self.domain = (float(domain[0]), float(domain[1]))
        self.method = method

    def __repr__(self):
        return (f"FundamentalPair(kind={self.spec.kind!r}, method={self.method!r}, "
                f"anchor={self.anchor}, domain={self.domain})")

    @property
    def normalization(self) -> dict:
        c = self.anchor
        return {"anchor": c, "psi": float(self.psi(c)), "phi": float(self.phi(c))}

    def covers(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        lo, hi = self.domain
        tol = 1e-12 * max(1.0, hi if math.isfinite(hi) else 1.0)
        return bool(np.all(y >= lo - tol) and np.all(y <= hi + tol))

    def psi(self, y):
        return np.exp(self.log_psi(y))

    def phi(self, y):
        return np.exp(self.log_phi(y))

    def dpsi(self, y):
        return self.dlog_psi(y) * self.psi(y)

    def dphi(self, y):
        return self.dlog_phi(y) * self.phi(y)

    def d2psi(self, y):
        # from L psi = 0
        y = np.asarray(y, dtype=float)
        s2 = self.spec.sigma2(y)
        return 2.0 / s2 * (self.spec.r * self.psi(y) - self.spec.mu(y) * self.dpsi(y))

    def d2phi(self, y):
        y = np.asarray(y, dtype=float)
        s2 = self.spec.sigma2(y)
        return 2.0 / s2 * (self.spec.r * self.phi(y) - self.spec.mu(y) * self.dphi(y))

    def log_sprime(self, y):
        return self.log_psi(y) + self.log_phi(y) + np.log(self.dlog_psi(y) - self.dlog_phi(y))

    def sprime(self, y):
        return np.exp(self.log_sprime(y))


def _gbm_pair(spec: DiffusionSpec) -> FundamentalPair:
    g1, g2 = gbm_gamma_roots(spec.alpha, spec.beta, spec.r)
    return FundamentalPair(
        spec,
        log_psi=lambda y: g2 * np.log(y),
        dlog_psi=lambda y: g2 / np.asarray(y, dtype=float),
        log_phi=lambda y: g1 * np.log(y),
        dlog_phi=lambda y: g1 / np.asarray(y, dtype=float),
        anchor=1.0,
    )


def _constant_pair(spec: DiffusionSpec) -> FundamentalPair:
    lm, lp = constant_lambda_roots(spec.mu_const, spec.sigma_const, spec.r)
    return FundamentalPair(
        spec,
        log_psi=lambda y: lp * np.asarray(y, dtype=float),
        dlog_psi=lambda y: np.full_like(np.asarray(y, dtype=float), lp),
        log_phi=lambda y: lm * np.asarray(y, dtype=float),
        dlog_phi=lambda y: np.full_like(np.asarray(y, dtype=float), lm),
        anchor=0.0,
    )


def _frozen_root(spec, y, sign):
    # root of (sigma^2/2) l^2 + mu l - r with coefficients frozen at y
    lm, lp = quadratic_roots(0.5 * float(spec.sigma2(y)), float(spec.mu(y)), -spec.r)
    return lp if sign > 0 else lm


def _riccati_rhs(spec):
    r = spec.r

    def rhs(s, state):
        # state = (log f, y f'/f) as functions of s = log y
        y = math.exp(s)
        P = state[1]
        s2 = float(spec.sigma2(y))
        m = float(spec.mu(y))
        return [P, P + 2.0 * r * y * y / s2 - 2.0 * m * y * P / s2 - P * P]

    return rhs


def _numeric_pair(spec: DiffusionSpec, domain, anchor=None, extend=1e3,
                  rtol=1e-12, atol=1e-13) -> FundamentalPair:
    lo, hi = float(domain[0]), float(domain[1])
    if not (0 < lo < hi < math.inf):
        raise DomainError(f"numeric pair needs 0 < y_lo < y_hi < inf, got {domain}")
    c = 0.5 * (lo + hi) if anchor is None else float(anchor)
    sup_lo, sup_hi = spec.support if spec.support is not None else (0.0, math.inf)
    start_lo = max(lo / extend, sup_lo) if sup_lo > 0 else lo / extend
    start_hi = min(hi * extend, sup_hi)
    if start_lo > lo or start_hi < hi:
        raise DomainError(f"domain {domain} exceeds coefficient support {spec.support}")

    probe = np.geomspace(start_lo, start_hi, 400)
    if np.any(~(spec.sigma(probe) > 0)):
        raise NonPositiveVolatility("sigma vanishes on the integration domain")

    rhs = _riccati_rhs(spec)
    s_lo, s_hi = math.log(start_lo), math.log(start_hi)
    s_c = math.log(c)

    # increasing solution: forward integration is attracted to psi's log-derivative
    p0 = start_lo * _frozen_root(spec, start_lo, +1)
    sol_psi = solve_ivp(rhs, (s_lo, math.log(hi)), [0.0, p0], method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
    # decreasing solution: backward integration is attracted to phi's
    q0 = start_hi * _frozen_root(spec, start_hi, -1)
    sol_phi = solve_ivp(rhs, (s_hi, math.log(lo)), [0.0, q0], method="DOP853",
                        rtol=rtol, atol=atol, dense_output=True)
    if not (sol_psi.success and sol_phi.success):
        raise IntegrationFailure(f"fundamental-solution integration failed: "
                                 f"{sol_psi.message} / {sol_phi.message}")
    Lpsi_c = sol_psi.sol(s_c)[0]
    Lphi_c = sol_phi.sol(s_c)[0]

    def _eval(sol, y, idx):
        y = np.asarray(y, dtype=float)
        return sol.sol(np.log(y))[idx]

    def log_psi(y):
        return _eval(sol_psi, y, 0) - Lpsi_c

    def dlog_psi(y):
        return _eval(sol_psi, y, 1) / np.asarray(y, dtype=float)

    def log_phi(y):
        return _eval(sol_phi, y, 0) - Lphi_c

    def dlog_phi(y):
        return _eval(sol_phi, y, 1) / np.asarray(y, dtype=float)

    grid = np.geomspace(lo, hi, 400)
    if np.any(dlog_psi(grid) <= 0) or np.any(dlog_phi(grid) >= 0):
        raise IntegrationFailure("numeric fundamental pair lost monotonicity on the domain")
    return FundamentalPair(spec, log_psi, dlog_psi, log_phi, dlog_phi, anchor=c,
                           domain=(lo, hi), method="riccati")


def make_fundamental(spec: DiffusionSpec, domain=None, *, numeric=False, anchor=None,
                     extend=1e3) -> FundamentalPair:
    """Fundamental pair for ``spec``.

    Analytic for gBm (``y^gamma``) and constant coefficients (``e^{lambda y}``);
    custom coefficients (or ``numeric=True``) are integrated as a Riccati
    equation for the log-derivative on ``domain`` (truncated, ``y_lo > 0``).
    """
    if spec.kind == GBM and not numeric:
        return _gbm_pair(spec)
    if spec.kind == CONSTANT and not numeric:
        return _constant_pair(spec)
    if domain is None:
        raise DomainError("a finite domain is required for numerically integrated pairs")
    return _numeric_pair(spec, domain, anchor=anchor, extend=extend)


def generator_apply(spec: DiffusionSpec, f, y, df=None, d2f=None):
    """``(sigma^2/2) f'' + mu f' - r f`` at ``y``.

    ``df``/``d2f`` default to central finite differences of ``f``.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("the generator is only applied on y > 0")
    f0 = np.asarray(f(y), dtype=float)
    if df is None or d2f is None:
        h = 1e-4 * y
        fp, fm = np.asarray(f(y + h), dtype=float), np.asarray(f(y - h), dtype=float)
        d1 = (fp - fm) / (2 * h) if df is None else np.asarray(df(y), dtype=float)
        d2 = (fp - 2 * f0 + fm) / h**2 if d2f is None else np.asarray(d2f(y), dtype=float)
    else:
        d1 = np.asarray(df(y), dtype=float)
        d2 = np.asarray(d2f(y), dtype=float)
    return 0.5 * spec.sigma2(y) * d2 + spec.mu(y) * d1 - spec.r * f0
