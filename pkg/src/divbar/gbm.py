"""Closed-form solution when the capital follows a geometric Brownian motion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import mpmath as mp
import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, ParameterError

# value printed in a figure caption for (r, alpha, beta) = (0.05, 0.04, 0.3);
# not reproducible from the closed form, kept only as a documented discrepancy
FIGURE_CAPTION_C = 4.80

CONCAVE = "Concave"
CONVEX = "Convex"
AFFINE = "Affine"
MIXED = "Mixed"

_DPS = 40


def _mp_gammas(alpha, beta, r):
    a, b, rr = mp.mpf(alpha), mp.mpf(beta), mp.mpf(r)
    B = 2 * a / b**2 - 1
    Cq = -2 * rr / b**2
    sq = mp.sqrt(B * B - 4 * Cq)
    return (-B - sq) / 2, (-B + sq) / 2


def gamma_roots(alpha: float, beta: float, r: float):
    """Exponents ``gamma1 < 0 < gamma2`` of ``phi(y) = y^gamma1``, ``psi(y) = y^gamma2``."""
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if not alpha < r:
        raise ParameterError(f"gBm requires alpha < r (alpha={alpha}, r={r})")
    with mp.workdps(_DPS):
        g1, g2 = _mp_gammas(alpha, beta, r)
        return float(g1), float(g2)


def ray_G(z, alpha: float, beta: float, r: float, gammas=None):
    """``G(z) = F(x, z x)`` for ``z > 1`` (independent of ``x``)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 1):
        raise DomainError("G(z) is defined for z > 1")
    g1, g2 = gammas if gammas is not None else gamma_roots(alpha, beta, r)
    psi, phi = z**g2, z**g1
    out = 2 * z - alpha * z / r * (g2 * psi - g1 * phi) / (psi - phi)
    return out if out.ndim else float(out)


def H(z, alpha, beta, r, gammas=None):
    """``(1 - alpha g2 / r) psi(z) - (1 - alpha g1 / r) phi(z)``; same sign as ``G(z) - z``."""
    g1, g2 = gammas if gammas is not None else gamma_roots(alpha, beta, r)
    z = np.asarray(z, dtype=float)
    return (1 - alpha * g2 / r) * z**g2 - (1 - alpha * g1 / r) * z**g1


def constants_AC(alpha: float, beta: float, r: float):
    """Closed-form ``A`` (zero of ``G``) and ``C`` (fixed point of ``G``), evaluated in 40 digits."""
    if not alpha < r:
        raise ParameterError(f"gBm requires alpha < r (alpha={alpha}, r={r})")
    with mp.workdps(_DPS):
        g1, g2 = _mp_gammas(alpha, beta, r)
        a, rr = mp.mpf(alpha), mp.mpf(r)
        e = 1 / (g2 - g1)
        A = ((2 * rr - a * g1) / (2 * rr - a * g2)) ** e
        C = ((rr - a * g1) / (rr - a * g2)) ** e
        return float(A), float(C)


def root_found_AC(alpha: float, beta: float, r: float):
    """``A`` and ``C`` by bracketing roots of ``G`` and ``G(z) - z`` (independent of the formulas)."""
    gam = gamma_roots(alpha, beta, r)
    G = lambda z: ray_G(z, alpha, beta, r, gam)  # noqa: E731
    lo = 1.0 + 1e-9
    hi = 2.0
    while G(hi) <= 0:
        hi *= 2
    A = brentq(G, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    hi = 2 * A
    while G(hi) - hi <= 0:
        hi *= 2
    C = brentq(lambda z: G(z) - z, A, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    return A, C


@dataclass(frozen=True)
class GbmSolution:
    alpha: float
    beta: float
    r: float
    gamma1: float
    gamma2: float
    A: float
    C: float
    N: float
    crosscheck: dict

    def to_json(self) -> dict:
        d = asdict(self)
        d["figure_caption_C"] = FIGURE_CAPTION_C
        return d


def solve(alpha: float, beta: float, r: float) -> GbmSolution:
    """All closed-form constants with their cross-check residuals."""
    g1, g2 = gamma_roots(alpha, beta, r)
    A, C = constants_AC(alpha, beta, r)
    A_rf, C_rf = root_found_AC(alpha, beta, r)
    quad = lambda g: g * g + (2 * alpha / beta**2 - 1) * g - 2 * r / beta**2  # noqa: E731
    N = _vbar_unit(1.0 / C, g1, g2, C) + 1.0 / C
    gam = (g1, g2)
    check = {
        "quadratic_residual_gamma1": abs(quad(g1)),
        "quadratic_residual_gamma2": abs(quad(g2)),
        "G_at_A": abs(ray_G(A, alpha, beta, r, gam)),
        "G_at_C_minus_C": abs(ray_G(C, alpha, beta, r, gam) - C),
        "A_rel_diff_rootfind": abs(A - A_rf) / A,
        "C_rel_diff_rootfind": abs(C - C_rf) / C,
        "figure_caption_C_rel_diff": abs(FIGURE_CAPTION_C - C) / C,
    }
    return GbmSolution(alpha, beta, r, g1, g2, A, C, N, check)


def _vbar_unit(t, g1, g2, C):
    # vbar*(t y, y) / y for t = x/y in (0, 1]
    return (g2 * C ** (-g1) / (1 - g1) * (1 - t ** (1 - g1))
            - g1 * C ** (-g2) / (1 - g2) * (1 - t ** (1 - g2))) / (g2 - g1)


def vbar_closed(x, y, sol: GbmSolution):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return y * _vbar_unit(x / y, sol.gamma1, sol.gamma2, sol.C)


def vstar_closed(x, y, sol: GbmSolution):
    """Optimal value ``v*(x, y)`` for ``0 < x <= y`` (continuation part plus lump above ``C x``)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(x > y):
        raise DomainError("vstar_closed needs 0 < x <= y")
    C = sol.C
    stop = y > C * x
    xb = np.where(stop, y / C, x)
    out = vbar_closed(xb, y, sol) + np.where(stop, y / C - x, 0.0)
    return out if out.ndim else float(out)


def ustar_closed(x, y, sol: GbmSolution):
    """``u* = -v*_x``: equal to 1 on and above the ray, above 1 below it."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(x > y):
        raise DomainError("ustar_closed needs 0 < x <= y")
    g1, g2 = sol.gamma1, sol.gamma2
    w = np.minimum(y / (sol.C * x), 1.0)
    out = (g2 * w**g1 - g1 * w**g2) / (g2 - g1)
    return out if out.ndim else float(out)


def concavity_classifier(x, slope, *, tol: float = 1e-8) -> str:
    """Shape of a sampled solution from the increments of its slope ``b' = F(x, b)``.

    Increments within ``tol * (1 + |b'|)`` of zero count as flat; all-flat is
    ``Affine``.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(slope, dtype=float)
    if len(x) < 3:
        return AFFINE
    second = np.diff(s) / np.diff(x)
    band = tol * (1.0 + np.abs(s[1:]))
    pos = second > band
    neg = second < -band
    if not pos.any() and not neg.any():
        return AFFINE
    if not pos.any():
        return CONCAVE
    if not neg.any():
        return CONVEX
    return MIXED


def euler_homogeneity_residual(alpha, beta, r, x, y, h=1e-6):
    """``x F_x + y F_y`` by central differences of the general field with the power pair."""
    from .barrier import field_F
    from .model import DiffusionSpec, make_fundamental

    pair = make_fundamental(DiffusionSpec.gbm(alpha, beta, r))
    Fx = (field_F(pair, x * (1 + h), y) - field_F(pair, x * (1 - h), y)) / (2 * h * x)
    Fy = (field_F(pair, x, y * (1 + h)) - field_F(pair, x, y * (1 - h))) / (2 * h * y)
    return x * Fx + y * Fy


def figure_caption_discrepancy(alpha=0.04, beta=0.3, r=0.05) -> dict:
    _, C = constants_AC(alpha, beta, r)
    return {"caption_C": FIGURE_CAPTION_C, "computed_C": C,
            "rel_diff": abs(FIGURE_CAPTION_C - C) / C,
            "reproducible": math.isclose(C, FIGURE_CAPTION_C, rel_tol=5e-3)}
