"""The boundary ODE ``b' = F(x, b)`` and the construction of its minimal solution."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.optimize import brentq

from .errors import (DiagonalError, DomainError, MembershipViolation, NoConvergence,
                     NotFound, StepFailure)
from .model import FundamentalPair

log = logging.getLogger(__name__)

HITS_DIAGONAL = "HitsDiagonal"
STAYS_ABOVE = "StaysAboveUntil"
FIELD_SIGN_VIOLATION = "FieldSignViolation"
EXPLODES = "Explodes"

ANALYTIC = "Analytic"
ENVELOPE = "FarAnchorEnvelope"
SHOOTING = "Shooting"


# ---------------------------------------------------------------------------
# the field


def _field(pair: FundamentalPair, x, y):
    spec = pair.spec
    log_r = pair.log_phi(y) + pair.log_psi(x) - pair.log_phi(x) - pair.log_psi(y)
    R = np.exp(log_r)
    one_minus_r = -np.expm1(log_r)
    px, py = pair.dlog_psi(x), pair.dlog_psi(y)
    qx, qy = pair.dlog_phi(x), pair.dlog_phi(y)
    m = spec.mu_over_sigma2(x)
    bracket = (qy * px * R - qx * py) + m * (qy * R - py)
    return spec.sigma2(y) / (spec.r * one_minus_r) * bracket


def field_F(pair: FundamentalPair, x, y):
    """Right-hand side of the boundary ODE, defined for ``0 < x < y``.

    All terms are divided by ``phi(x) psi(y)`` before evaluation, so only the
    ratio ``phi(y) psi(x) / (phi(x) psi(y)) < 1`` is ever exponentiated.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= x):
        raise DiagonalError("F(x, y) is undefined for y <= x")
    if np.any(x <= 0):
        raise DomainError("F(x, y) needs x > 0")
    out = _field(pair, x, y)
    return out if out.ndim else float(out)


def delta(pair: FundamentalPair, x, y):
    """``phi(x) psi(y) - phi(y) psi(x)``."""
    return pair.phi(x) * pair.psi(y) - pair.phi(y) * pair.psi(x)


def zeta(spec, x):
    """``2r/sigma^2 + (mu/sigma^2)' + mu^2/sigma^4``; positivity orders the solution family."""
    x = np.asarray(x, dtype=float)
    m = spec.mu_over_sigma2(x)
    out = 2.0 * spec.r / spec.sigma2(x) + spec.d_mu_over_sigma2(x) + m * m
    return out if out.ndim else float(out)


def find_d(pair: FundamentalPair, x: float, *, cap_factor: float = 1e3, rtol: float = 1e-10) -> float:
    """``d(x) = inf{y > x : F(x, y) > 0}`` by geometric bracketing and bisection."""
    x = float(x)
    if x <= 0:
        raise DomainError("d(x) needs x > 0")
    cap = cap_factor * x
    if math.isfinite(pair.domain[1]):
        cap = min(cap, pair.domain[1])
    gap = 1e-3 * x
    lo = x + gap
    if lo >= cap:
        raise NotFound(f"search cap {cap} too close to x={x}", cap=cap)
    f_lo = field_F(pair, x, lo)
    # F -> -inf at the diagonal; shrink if the first probe is already positive
    while f_lo > 0 and gap > 1e-12 * x:
        gap *= 0.1
        lo = x + gap
        f_lo = field_F(pair, x, lo)
    if f_lo > 0:
        raise NotFound(f"F(x, .) positive arbitrarily close to the diagonal at x={x}", cap=cap)
    hi = lo
    while True:
        gap *= 2.0
        hi = min(x + gap, cap)
        f_hi = field_F(pair, x, hi)
        if f_hi > 0:
            break
        if hi >= cap:
            raise NotFound(f"F(x, .) <= 0 up to the cap y={cap} at x={x}", cap=cap)
        lo, f_lo = hi, f_hi
    return brentq(lambda yy: field_F(pair, x, yy), lo, hi, xtol=1e-300, rtol=max(rtol, 1e-15),
                  maxiter=500)


# ---------------------------------------------------------------------------
# integration of single solutions


@dataclass(frozen=True)
class SolutionClassification:
    xi: float
    eta: float
    outcome: str
    x_event: float
    direction: str = "forward"

    def __str__(self):
        return f"{self.outcome}({self.x_event:.10g})"


@dataclass
class BarrierCurve:
    """A single solution of the boundary ODE, stored with abscissae increasing."""

    x: np.ndarray
    b: np.ndarray
    slope: np.ndarray
    classification: SolutionClassification
    dense: object = field(default=None, repr=False)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.dense(x)[0] if x.ndim else float(self.dense(float(x))[0])


def _diag_eps(x, eps_rel):
    return eps_rel * (1.0 + abs(x))


def integrate_barrier(pair: FundamentalPair, start: Tuple[float, float], direction: str = "forward",
                      x_end: Optional[float] = None, *, eps_diag: float = 1e-6,
                      blowup: float = 1e6, rtol: float = 1e-10, atol: float = 1e-12,
                      n_samples: int = 400) -> BarrierCurve:
    """Solve ``b' = F(x, b)`` from ``b(xi) = eta`` until a guard triggers or ``x_end``.

    Guards: diagonal clearance ``eps_diag * (1 + x)`` (the hit point is then
    extrapolated using the square-root approach ``(b - x)^2 ~ linear``) and a
    blow-up cap ``b > blowup * (1 + x)``.
    """
    xi, eta = float(start[0]), float(start[1])
    if not 0 < xi < eta:
        raise DomainError(f"need 0 < xi < eta, got ({xi}, {eta})")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if x_end is None:
        raise ValueError("x_end is required")
    x_end = float(x_end)
    if (direction == "forward") != (x_end > xi):
        raise DomainError(f"x_end={x_end} is on the wrong side of xi={xi} for {direction}")

    def rhs(x, b):
        gap = max(b[0] - x, 1e-14 * (1.0 + x))
        return [_field(pair, x, x + gap)]

    def hit_diag(x, b):
        return b[0] - x - _diag_eps(x, eps_diag)

    hit_diag.terminal = True
    hit_diag.direction = -1

    def blow(x, b):
        return blowup * (1.0 + x) - b[0]

    blow.terminal = True
    blow.direction = -1

    sol = None
    for method in ("DOP853", "Radau"):
        sol = solve_ivp(rhs, (xi, x_end), [eta], method=method, rtol=rtol, atol=atol,
                        events=(hit_diag, blow), dense_output=True)
        if sol.status != -1:
            break
        log.debug("integrate_barrier: %s failed from (%g, %g): %s", method, xi, eta, sol.message)
    if sol.status == -1:
        last = sol.t[-1]
        if abs(sol.y[0, -1] - last) > 10 * _diag_eps(last, eps_diag):
            raise StepFailure(f"integration from ({xi}, {eta}) failed at x={last}: {sol.message}")

    xs = sol.t.copy()
    bs = sol.y[0].copy()
    x_stop = xs[-1]
    if sol.status == 1 and len(sol.t_events[0]):
        xe, be = sol.t_events[0][0], sol.y_events[0][0][0]
        g = be - xe
        gprime = _field(pair, xe, be) - 1.0
        x0 = xe - g / (2.0 * gprime) if gprime != 0 else xe
        outcome, x_event = HITS_DIAGONAL, float(x0)
    elif sol.status == 1 and len(sol.t_events[1]):
        outcome, x_event = EXPLODES, float(sol.t_events[1][0])
    elif sol.status == -1:
        outcome, x_event = HITS_DIAGONAL, float(x_stop)
    else:
        outcome, x_event = STAYS_ABOVE, float(x_stop)

    # sample densely for downstream use (classification, plotting, envelopes)
    if sol.sol is not None and len(xs) > 1:
        xs = np.linspace(xi, x_stop, n_samples)
        bs = sol.sol(xs)[0]
    slopes = _field(pair, xs, np.maximum(bs, xs * (1 + 1e-15) + 1e-300))
    if outcome == STAYS_ABOVE:
        # the starting node is excluded: anchors may sit exactly on F = 0
        bad = np.nonzero(slopes[1:] <= 0)[0]
        if len(bad):
            outcome, x_event = FIELD_SIGN_VIOLATION, float(xs[1 + bad[0]])
    if direction == "backward":
        xs, bs, slopes = xs[::-1], bs[::-1], slopes[::-1]
    cls = SolutionClassification(xi, eta, outcome, x_event, direction)
    return BarrierCurve(np.asarray(xs), np.asarray(bs), np.asarray(slopes), cls, sol.sol)


# ---------------------------------------------------------------------------
# the barrier type


class Barrier:
    """A strictly increasing boundary ``b`` above the diagonal, with its inverse.

    Interpolation is cubic Hermite through ``(x_i, b_i)`` with the ODE slopes
    ``F(x_i, b_i)`` (falls back to a monotone PCHIP if the Hermite interpolant
    is not monotone).  Outside ``[x_lo, x_hi]`` the curve is extended linearly;
    the inverse is ``0`` below ``b(x_lo)``.
    """

    def __init__(self, grid_x, grid_b, grid_slope, source: str, membership_checked=False,
                 info: Optional[dict] = None):
        gx = np.asarray(grid_x, dtype=float)
        gb = np.asarray(grid_b, dtype=float)
        gs = np.asarray(grid_slope, dtype=float)
        if gx.ndim != 1 or len(gx) < 2 or gx.shape != gb.shape or gb.shape != gs.shape:
            raise ValueError("barrier grids must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(gx) <= 0):
            raise ValueError("grid_x must be strictly increasing")
        if np.any(np.diff(gb) <= 0) or np.any(gs <= 0):
            raise MembershipViolation("barrier must be strictly increasing")
        if np.any(gb <= gx):
            raise MembershipViolation("barrier must lie strictly above the diagonal")
        self.grid_x, self.grid_b, self.grid_slope = gx, gb, gs
        self.source = source
        self.membership_checked = membership_checked
        self.info = dict(info or {})
        self.interpolant = "hermite"
        self._fwd = CubicHermiteSpline(gx, gb, gs, extrapolate=False)
        self._inv = CubicHermiteSpline(gb, gx, 1.0 / gs, extrapolate=False)
        fine = np.linspace(0, 1, 9)[1:-1]
        probe = (gx[:-1, None] + np.diff(gx)[:, None] * fine[None, :]).ravel()
        if np.any(np.diff(self._fwd(np.concatenate([gx[:1], probe, gx[-1:]]))) <= 0):
            self.interpolant = "pchip"
            self._fwd = PchipInterpolator(gx, gb, extrapolate=False)
            self._inv = PchipInterpolator(gb, gx, extrapolate=False)

    def __repr__(self):
        return (f"Barrier(source={self.source!r}, domain={self.domain}, n={len(self.grid_x)}, "
                f"membership_checked={self.membership_checked})")

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self.grid_x[0]), float(self.grid_x[-1])

    @classmethod
    def ray(cls, slope: float, x_lo: float, x_hi: float, n: int = 64, pair=None) -> "Barrier":
        """The straight barrier ``b(x) = slope * x`` (exactly represented)."""
        if not slope > 1:
            raise MembershipViolation("a ray barrier needs slope > 1")
        gx = np.geomspace(x_lo, x_hi, n)
        b = cls(gx, slope * gx, np.full_like(gx, slope), ANALYTIC, info={"ray_slope": float(slope)})
        if pair is not None:
            check_membership(b, pair)
        return b

    @classmethod
    def from_curve(cls, pair: FundamentalPair, grid_x, grid_b, source: str, info=None) -> "Barrier":
        gx = np.asarray(grid_x, dtype=float)
        gb = np.asarray(grid_b, dtype=float)
        if np.any(gb <= gx):
            raise MembershipViolation("candidate barrier touches the diagonal")
        slopes = field_F(pair, gx, gb)
        if np.any(slopes <= 0):
            bad = gx[np.nonzero(slopes <= 0)[0][0]]
            raise MembershipViolation(f"F(x, b(x)) <= 0 at x={bad}")
        return cls(gx, gb, slopes, source, membership_checked=True, info=info)

    @property
    def ray_slope(self) -> Optional[float]:
        return self.info.get("ray_slope")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self._fwd(x)
        gx, gb, gs = self.grid_x, self.grid_b, self.grid_slope
        out = np.where(x < gx[0], gb[0] + gs[0] * (x - gx[0]), out)
        out = np.where(x > gx[-1], gb[-1] + gs[-1] * (x - gx[-1]), out)
        return out if out.ndim else float(out)

    def slope(self, x):
        x = np.asarray(x, dtype=float)
        gx, gs = self.grid_x, self.grid_slope
        xi = np.clip(x, gx[0], gx[-1])
        out = self._fwd(xi, 1)
        out = np.where(x < gx[0], gs[0], np.where(x > gx[-1], gs[-1], out))
        return out if out.ndim else float(out)

    def inverse(self, y):
        """``b^{-1}(y)``, extended by 0 below ``b(x_lo)``."""
        y = np.asarray(y, dtype=float)
        gx, gb, gs = self.grid_x, self.grid_b, self.grid_slope
        out = self._inv(y)
        out = np.where(y > gb[-1], gx[-1] + (y - gb[-1]) / gs[-1], out)
        out = np.where(y < gb[0], 0.0, out)
        return out if out.ndim else float(out)

    def inverse_slope(self, y):
        y = np.asarray(y, dtype=float)
        gb, gs = self.grid_b, self.grid_slope
        yi = np.clip(y, gb[0], gb[-1])
        out = self._inv(yi, 1)
        out = np.where(y > gb[-1], 1.0 / gs[-1], out)
        out = np.where(y < gb[0], 0.0, out)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "Barrier":
        """The barrier ``factor * b`` (same grid); not in general a solution of the ODE."""
        info = dict(self.info)
        if self.ray_slope is not None:
            info["ray_slope"] = self.ray_slope * factor
        return Barrier(self.grid_x, factor * self.grid_b, factor * self.grid_slope,
                       self.source, membership_checked=False, info=info)


def barrier_inverse(b: Barrier, y):
    return b.inverse(y)


def check_membership(b: Barrier, pair: FundamentalPair, *, slope_rtol: float = 1e-6) -> dict:
    """Verify class-B membership on the grid: above the diagonal, ``F > 0``, ``b' = F``."""
    F = field_F(pair, b.grid_x, b.grid_b)
    above = bool(np.all(b.grid_b > b.grid_x))
    positive = bool(np.all(F > 0))
    ode_err = float(np.max(np.abs(b.grid_slope - F) / np.abs(F)))
    ok = above and positive and ode_err <= slope_rtol
    if not ok:
        raise MembershipViolation(f"barrier not in class B (above={above}, F>0={positive}, "
                                  f"ode_rel_err={ode_err:.3g})")
    b.membership_checked = True
    return {"above_diagonal": above, "field_positive": positive, "ode_rel_err": ode_err}


# ---------------------------------------------------------------------------
# minimal element


def minimal_barrier(pair: FundamentalPair, domain: Tuple[float, float], *, n_grid: int = 400,
                    tol_b: float = 1e-6, k_max: int = 200, eps_diag: float = 1e-6,
                    rtol: float = 1e-11) -> Barrier:
    """Minimal solution of the boundary ODE on ``[x_lo, x_hi]``.

    Backward solutions started on the curve ``d`` at the anchors
    ``x_hi * 2^k`` increase with ``k``; their running pointwise maximum is
    taken until the estimated remaining change (geometric tail of the
    successive sup-norm differences, relative to ``b``) drops below ``tol_b``.
    """
    x_lo, x_hi = float(domain[0]), float(domain[1])
    if not 0 < x_lo < x_hi:
        raise DomainError(f"need 0 < x_lo < x_hi, got {domain}")
    spec = pair.spec
    z = zeta(spec, np.geomspace(x_lo, x_hi, 200))
    if np.any(z <= 0):
        warnings.warn("zeta(x) <= 0 somewhere on the domain; solutions need not be ordered",
                      RuntimeWarning, stacklevel=2)
    grid = np.geomspace(x_lo, x_hi, n_grid)
    env = None
    diffs: List[float] = []
    anchors: List[Tuple[float, float]] = []
    for k in range(k_max + 1):
        xi = x_hi * 2.0**k
        if math.isfinite(pair.domain[1]) and xi * 2 > pair.domain[1]:
            break
        try:
            d = find_d(pair, xi)
        except NotFound:
            break
        curve = integrate_barrier(pair, (xi, d), "backward", x_lo, eps_diag=eps_diag, rtol=rtol,
                                  atol=1e-14 * max(1.0, x_lo), n_samples=8)
        if curve.classification.outcome not in (STAYS_ABOVE, FIELD_SIGN_VIOLATION):
            log.warning("anchor %g: backward solution %s", xi, curve.classification)
            continue
        vals = curve(grid)
        anchors.append((xi, d))
        if env is None:
            env = vals
            continue
        new = np.maximum(env, vals)
        diffs.append(float(np.max(np.abs(new - env) / new)))
        env = new
        if len(diffs) >= 2 and diffs[-1] < tol_b:
            ratio = diffs[-1] / diffs[-2] if diffs[-2] > 0 else 0.0
            tail = diffs[-1] * ratio / (1.0 - ratio) if ratio < 1 else math.inf
            if tail < tol_b:
                log.info("minimal_barrier converged after %d anchors", len(anchors))
                return Barrier.from_curve(pair, grid, env, ENVELOPE,
                                          info={"anchors": anchors, "diffs": diffs})
    raise NoConvergence(f"anchor doubling did not stabilise within k_max={k_max} "
                        f"(last differences {diffs[-3:]})")


def shoot_barrier(pair: FundamentalPair, x0: float, x_far: float, *, eta_hi: Optional[float] = None,
                  tol: float = 1e-9, eps_diag: float = 1e-6, rtol: float = 1e-11) -> float:
    """Smallest ``eta`` such that the forward solution from ``(x0, eta)`` reaches ``x_far``.

    Bisection on the outcome HitsDiagonal (too low) versus staying above
    (high enough); an independent check of :func:`minimal_barrier`.
    """
    lo = find_d(pair, x0)
    if eta_hi is None:
        eta_hi = 2.0 * lo
        while integrate_barrier(pair, (x0, eta_hi), "forward", x_far, eps_diag=eps_diag,
                                rtol=rtol, n_samples=8).classification.outcome == HITS_DIAGONAL:
            lo = eta_hi
            eta_hi *= 2.0
    hi = eta_hi
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        out = integrate_barrier(pair, (x0, mid), "forward", x_far, eps_diag=eps_diag,
                                rtol=rtol, n_samples=8).classification.outcome
        if out == HITS_DIAGONAL:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def classification_sweep(pair: FundamentalPair, starts: Sequence[Tuple[float, float]],
                         x_hi: float, **kw) -> List[BarrierCurve]:
    """Forward solutions from each initial point, each with its classification."""
    return [integrate_barrier(pair, s, "forward", x_hi, **kw) for s in starts]
