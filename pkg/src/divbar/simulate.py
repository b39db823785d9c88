"""Monte Carlo for the barrier dividend strategy and the obliquely reflected stopping problem.

Every path draws its normals from the counter-based generator in :mod:`divbar.rng`,
so results do not depend on thread count or on the order in which paths run.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Optional

import numba
import numpy as np
from numba import njit, prange

from .barrier import Barrier
from .errors import ParameterError
from .model import CONSTANT, CUSTOM, GBM, DiffusionSpec
from .rng import normal_pair, seed_key

# skip the TBB probe, which warns on old system TBB builds
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

EULER = "EulerMaruyama"
LOG_EULER = "LogEulerForGBM"

ABSORBED = 0
CENSORED = 1
STOPPED = 2

CSV_HEADER = "# dividend-barrier v1"

_SNAP = 1e-12


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 10_000
    t_max: Optional[float] = None  # None means 50 / r
    seed: int = 0
    scheme: str = EULER

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.n_paths < 1:
            raise ParameterError("n_paths must be at least 1")
        if self.t_max is not None and self.t_max < self.dt:
            raise ParameterError("t_max must be at least dt")
        if self.scheme not in (EULER, LOG_EULER):
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit in 64 bits")

    def horizon(self, r: float) -> float:
        return self.t_max if self.t_max is not None else 50.0 / r

    def n_steps(self, r: float) -> int:
        return int(math.ceil(self.horizon(r) / self.dt - 1e-9))


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    absorbed_fraction: float
    censored_fraction: float
    mean_absorption_time: float
    max_payment_error: float = 0.0

    def to_dict(self):
        return asdict(self)


def set_threads():
    """Honour ``DIVBAR_THREADS`` as a cap on numba worker threads."""
    cap = os.environ.get("DIVBAR_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# numba helpers

@njit(cache=True)
def _herm(xk, yk, dk, lo_slope, hi_slope, t):
    n = xk.shape[0]
    if t <= xk[0]:
        return yk[0] + lo_slope * (t - xk[0])
    if t >= xk[n - 1]:
        return yk[n - 1] + hi_slope * (t - xk[n - 1])
    i = np.searchsorted(xk, t) - 1
    h = xk[i + 1] - xk[i]
    s = (t - xk[i]) / h
    s1 = 1.0 - s
    return ((1 + 2 * s) * s1 * s1 * yk[i] + s * s1 * s1 * h * dk[i]
            + s * s * (3 - 2 * s) * yk[i + 1] + s * s * (s - 1) * h * dk[i + 1])


@njit(cache=True)
def _binv(bd, y):
    # bd = (gx, gb, dfwd, dinv, lo_slope, hi_slope)
    gx, gb, dinv, hi = bd[0], bd[1], bd[3], bd[5]
    if y < gb[0]:
        return 0.0
    return _herm(gb, gx, dinv, 1.0 / bd[4], 1.0 / hi, y)


@njit(cache=True)
def _bfwd(bd, x):
    return _herm(bd[0], bd[1], bd[2], bd[4], bd[5], x)


@njit(cache=True)
def _coef(cf, y):
    # cf = (kind, p0, p1, grid, mu_vals, sigma_vals)
    kind = cf[0]
    if kind == 0:
        return cf[1] * y, cf[2] * y
    if kind == 1:
        return cf[1], cf[2]
    return np.interp(y, cf[3], cf[4]), np.interp(y, cf[3], cf[5])


@njit(cache=True)
def _step(cf, scheme, u, dt, sq, z):
    # scheme 1 advances log Y exactly; scheme 0 is an Euler step on Y
    if scheme == 1:
        a, b = cf[1], cf[2]
        return u + (a - 0.5 * b * b) * dt + b * sq * z
    m, s = _coef(cf, u)
    return u + m * dt + s * sq * z


@njit(inline="always", cache=True)
def _to_state(scheme, v):
    if scheme == 1:
        return math.log(v) if v > 0 else -math.inf
    return v


@njit(inline="always", cache=True)
def _from_state(scheme, u):
    return math.exp(u) if scheme == 1 else u


@njit(cache=True)
def _project(Xh, Yh):
    # oblique push in direction (1/2, 1) restoring Yh = Xh
    dAh = 2.0 * (Xh - Yh) if Yh < Xh else 0.0
    return Xh + 0.5 * dAh, Yh + dAh, dAh


def oblique_projection(X: float, Y: float):
    """Post-step projection onto ``{Y >= X}``: returns ``(X', Y', dA_hat)``."""
    return tuple(float(v) for v in _project(float(X), float(Y)))


@njit(cache=True)
def _controlled_one(path, x, y, bd, cf, scheme, r, dt, n_steps, k0, k1, record, rt, rY, rX):
    # thresholds are only recomputed when X moves: pay iff Y > b(X), absorb iff Y <= X
    sq = math.sqrt(dt)
    X = x
    Y = y
    pv = 0.0
    err = 0.0
    target = _binv(bd, Y)
    if target > X:
        pv += target - X
        X = target
        err = max(err, abs(_bfwd(bd, X) - Y) / Y)
    n_rec = 0
    if record:
        rt[0], rY[0], rX[0] = 0.0, Y, X
        n_rec = 1
    if Y <= X:
        return pv, 0.0, ABSORBED, X, err, n_rec
    u = _to_state(scheme, Y)
    u_abs = _to_state(scheme, X)
    u_pay = _to_state(scheme, _bfwd(bd, X))
    z1 = 0.0
    for k in range(n_steps):
        if k % 2 == 0:
            z, z1 = normal_pair(k0, k1, path, k >> 1)
        else:
            z = z1
        u = _step(cf, scheme, u, dt, sq, z)
        t = (k + 1) * dt
        if u <= u_abs:
            if record:
                rt[n_rec], rY[n_rec], rX[n_rec] = t, _from_state(scheme, u), X
                n_rec += 1
            return pv, t, ABSORBED, X, err, n_rec
        if u > u_pay:
            Y = _from_state(scheme, u)
            target = _binv(bd, Y)
            if target > X:
                pv += math.exp(-r * t) * (target - X)
                X = target
                err = max(err, abs(_bfwd(bd, X) - Y) / Y)
                u_abs = _to_state(scheme, X)
            u_pay = max(u, _to_state(scheme, _bfwd(bd, X)))
        if record:
            rt[n_rec], rY[n_rec], rX[n_rec] = t, _from_state(scheme, u), X
            n_rec += 1
    return pv, n_steps * dt, CENSORED, X, err, n_rec


@njit(parallel=True, cache=True)
def _controlled_many(x, y, bd, cf, scheme, r, dt, n_steps, seed, n, payoff, tau, status, xfin, perr):
    k0, k1 = seed_key(seed)
    dummy = np.empty(0)
    for j in prange(n):
        pv, t, st, X, e, _ = _controlled_one(j, x, y, bd, cf, scheme, r, dt, n_steps, k0, k1,
                                             False, dummy, dummy, dummy)
        payoff[j] = pv
        tau[j] = t
        status[j] = st
        xfin[j] = X
        perr[j] = e


@njit(cache=True)
def _reflected_one(path, x, y, bd, use_barrier, cf, scheme, r, dt, n_steps, k0, k1,
                   record, rt, rX, rY, rAh, rA, rM):
    sq = math.sqrt(dt)
    Xh = x
    Yh = y
    Ah = 0.0
    A = 0.0
    n_rec = 0
    if record:
        rt[0], rX[0], rY[0], rAh[0], rA[0], rM[0] = 0.0, Xh, Yh, 0.0, 0.0, 0.0
        n_rec = 1
    # a start on the barrier stops at once, up to interpolation round-off
    if use_barrier and Yh >= _bfwd(bd, Xh) * (1.0 - _SNAP):
        return 1.0, 0.0, STOPPED, n_rec
    u = _to_state(scheme, Yh)
    u_x = _to_state(scheme, Xh)
    u_stop = _to_state(scheme, _bfwd(bd, Xh)) if use_barrier else math.inf
    z1 = 0.0
    for k in range(n_steps):
        if k % 2 == 0:
            z, z1 = normal_pair(k0, k1, path, k >> 1)
        else:
            z = z1
        u_new = _step(cf, scheme, u, dt, sq, z)
        t = (k + 1) * dt
        if u_new < u_x:
            Yprev = Yh
            Yh = _from_state(scheme, u_new)
            dM = Yh - Yprev
            Xn, Yh, dAh = _project(Xh, Yh)
            # midpoint rule for dA = (mu / sigma^2) dA_hat along the pushed diagonal
            mu, sg = _coef(cf, 0.5 * (Xh + Xn))
            A += mu / (sg * sg) * dAh
            Xh = Xn
            Ah += dAh
            u = _to_state(scheme, Yh)
            u_x = _to_state(scheme, Xh)
            if use_barrier:
                u_stop = _to_state(scheme, _bfwd(bd, Xh))
        else:
            u = u_new
            if record:
                Yprev = Yh
                Yh = _from_state(scheme, u)
                dM = Yh - Yprev
        if record:
            if scheme == 1:
                Yh = _from_state(scheme, u)
            rt[n_rec], rX[n_rec], rY[n_rec], rAh[n_rec], rA[n_rec], rM[n_rec] = t, Xh, Yh, Ah, A, dM
            n_rec += 1
        if u >= u_stop:
            return math.exp(A - r * t), t, STOPPED, n_rec
    return math.exp(A - r * n_steps * dt), n_steps * dt, CENSORED, n_rec


@njit(parallel=True, cache=True)
def _reflected_many(x, y, bd, cf, scheme, r, dt, n_steps, seed, n, value, tau, status):
    k0, k1 = seed_key(seed)
    dummy = np.empty(0)
    for j in prange(n):
        v, t, st, _ = _reflected_one(j, x, y, bd, True, cf, scheme, r, dt, n_steps, k0, k1,
                                     False, dummy, dummy, dummy, dummy, dummy, dummy)
        value[j] = v
        tau[j] = t
        status[j] = st


# ---------------------------------------------------------------------------
# packing model objects for the kernels

def _barrier_data(b: Barrier):
    gx, gb = b.grid_x, b.grid_b
    return (gx, gb, np.ascontiguousarray(b.slope(gx), dtype=float),
            np.ascontiguousarray(b.inverse_slope(gb), dtype=float),
            float(b.grid_slope[0]), float(b.grid_slope[-1]))


def _coef_data(spec: DiffusionSpec, lo: float, hi: float, n: int = 4001):
    empty = np.zeros(1)
    if spec.kind == GBM:
        return (0, float(spec.alpha), float(spec.beta), empty, empty, empty)
    if spec.kind == CONSTANT:
        return (1, float(spec.mu_const), float(spec.sigma_const), empty, empty, empty)
    if spec.kind == CUSTOM:
        if spec.support is not None:
            lo, hi = spec.support
        g = np.geomspace(lo, hi, n)
        return (2, 0.0, 0.0, g, np.asarray(spec.mu(g), dtype=float),
                np.asarray(spec.sigma(g), dtype=float))
    raise ParameterError(f"unknown model kind {spec.kind!r}")


def _scheme_code(spec, cfg: SimConfig):
    if cfg.scheme == LOG_EULER:
        if spec.kind != GBM:
            raise ParameterError("the log scheme is exact only for geometric Brownian motion")
        return 1
    return 0


def _check_start(x, y):
    if not 0 < x <= y:
        raise ParameterError("simulation needs 0 < x <= y")


def _coef_range(x, y, b=None):
    hi = max(y, b.grid_b[-1] if b is not None else y)
    return min(x, 1e-3 * y) * 0.5, 100.0 * hi


# ---------------------------------------------------------------------------
# controlled problem

@dataclass
class ControlledPath:
    t: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    x0: float
    status: int
    payoff: float
    payment_error: float

    @property
    def D(self):
        return self.X - self.x0

    @property
    def absorbed(self):
        return self.status == ABSORBED

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            w = csv.writer(fh)
            w.writerow(["t", "Y", "X", "D", "absorbed"])
            last = len(self.t) - 1
            for i in range(len(self.t)):
                flag = int(self.absorbed and i == last)
                w.writerow([repr(float(self.t[i])), repr(float(self.Y[i])), repr(float(self.X[i])),
                            repr(float(self.D[i])), flag])


def run_controlled(x: float, y: float, b: Barrier, spec: DiffusionSpec, cfg: SimConfig,
                   path: int = 0) -> ControlledPath:
    """One path of ``(Y, X^{D^b})`` up to absorption or the horizon, with its discounted payoff."""
    _check_start(x, y)
    n_steps = cfg.n_steps(spec.r)
    rt, rY, rX = np.empty(n_steps + 1), np.empty(n_steps + 1), np.empty(n_steps + 1)
    k0, k1 = seed_key(np.uint64(cfg.seed))
    pv, t, st, X, err, n = _controlled_one(path, float(x), float(y), _barrier_data(b),
                                           _coef_data(spec, *_coef_range(x, y, b)),
                                           _scheme_code(spec, cfg), spec.r, cfg.dt, n_steps,
                                           k0, k1, True, rt, rY, rX)
    return ControlledPath(rt[:n].copy(), rY[:n].copy(), rX[:n].copy(), float(x), int(st), pv, err)


def controlled_payoffs(x: float, y: float, b: Barrier, spec: DiffusionSpec, cfg: SimConfig):
    """Per-path arrays ``(payoff, tau, status, X_final, payment_error)``."""
    _check_start(x, y)
    set_threads()
    n = cfg.n_paths
    out = (np.empty(n), np.empty(n), np.empty(n, dtype=np.int64), np.empty(n), np.empty(n))
    _controlled_many(float(x), float(y), _barrier_data(b), _coef_data(spec, *_coef_range(x, y, b)),
                     _scheme_code(spec, cfg), spec.r, cfg.dt, cfg.n_steps(spec.r),
                     np.uint64(cfg.seed), n, *out)
    return out


def _summarise(values, tau, status, done_code, perr=None) -> MCEstimate:
    n = len(values)
    done = status == done_code
    mean_t = float(tau[done].mean()) if done.any() else float("nan")
    return MCEstimate(
        mean=float(np.mean(values)),
        stderr=float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
        n_paths=n,
        absorbed_fraction=float(done.mean()),
        censored_fraction=float((status == CENSORED).mean()),
        mean_absorption_time=mean_t,
        max_payment_error=float(perr.max()) if perr is not None else 0.0,
    )


def estimate_J(x: float, y: float, b: Barrier, spec: DiffusionSpec, cfg: SimConfig) -> MCEstimate:
    """Monte Carlo estimate of the expected discounted dividends under the barrier strategy."""
    pv, tau, st, _, perr = controlled_payoffs(x, y, b, spec, cfg)
    return _summarise(pv, tau, st, ABSORBED, perr)


def check_skorokhod(p: ControlledPath, b: Barrier, *, rtol: float = 1e-6) -> bool:
    """Payments only on the barrier, ``D`` nondecreasing, ``X <= Y`` until absorption."""
    dD = np.diff(p.X)
    if np.any(dD < 0):
        return False
    paid = np.nonzero(dD > 0)[0] + 1
    if len(paid) and np.any(np.abs(b(p.X[paid]) - p.Y[paid]) > rtol * p.Y[paid]):
        return False
    alive = p.Y[:-1] if p.absorbed else p.Y
    return bool(np.all(p.X[: len(alive)] <= alive))


def check_gbm_ratio_at_payments(p: ControlledPath, C: float, *, rtol: float = 1e-8) -> bool:
    """Every step with a dividend payment has ``Y / X`` equal to ``C`` within ``rtol``."""
    paid = np.nonzero(np.diff(p.X) > 0)[0] + 1
    if p.X[0] > p.x0:
        paid = np.concatenate([[0], paid])
    return bool(np.all(np.abs(p.Y[paid] / p.X[paid] - C) <= rtol * C))


# ---------------------------------------------------------------------------
# stopping problem

@dataclass
class ReflectedPath:
    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    A_hat: np.ndarray
    A: np.ndarray
    dM: np.ndarray  # free increment of Y at each step, before projection
    status: int
    value: float


def simulate_reflected(x: float, y: float, spec: DiffusionSpec, cfg: SimConfig, *,
                       barrier: Optional[Barrier] = None, path: int = 0,
                       n_steps: Optional[int] = None) -> ReflectedPath:
    """One path of the obliquely reflected pair; stops at the barrier when one is given."""
    _check_start(x, y)
    n = n_steps if n_steps is not None else cfg.n_steps(spec.r)
    bufs = [np.empty(n + 1) for _ in range(6)]
    bd = _barrier_data(barrier) if barrier is not None else _barrier_data(Barrier.ray(2.0, 1.0, 2.0, n=2))
    k0, k1 = seed_key(np.uint64(cfg.seed))
    v, t, st, m = _reflected_one(path, float(x), float(y), bd, barrier is not None,
                                 _coef_data(spec, *_coef_range(x, y, barrier)),
                                 _scheme_code(spec, cfg), spec.r, cfg.dt, n, k0, k1, True, *bufs)
    return ReflectedPath(*(a[:m].copy() for a in bufs), status=int(st), value=v)


def stopping_values(x: float, y: float, b: Barrier, spec: DiffusionSpec, cfg: SimConfig):
    _check_start(x, y)
    set_threads()
    n = cfg.n_paths
    out = (np.empty(n), np.empty(n), np.empty(n, dtype=np.int64))
    _reflected_many(float(x), float(y), _barrier_data(b), _coef_data(spec, *_coef_range(x, y, b)),
                    _scheme_code(spec, cfg), spec.r, cfg.dt, cfg.n_steps(spec.r),
                    np.uint64(cfg.seed), n, *out)
    return out


def estimate_stopping_value(x: float, y: float, b: Barrier, spec: DiffusionSpec,
                            cfg: SimConfig) -> MCEstimate:
    """Mean of ``exp(A_tau - r tau)`` at the first time the reflected pair reaches the barrier.

    Censored paths contribute their value at the horizon.
    """
    v, tau, st = stopping_values(x, y, b, spec, cfg)
    return _summarise(v, tau, st, STOPPED)


def skorokhod_gap(z0: float, dM: np.ndarray):
    """Explicit discrete Skorokhod map of free increments ``dM`` started at ``z0 >= 0``.

    Returns ``(Z, L)`` with ``Z = z0 + M + L`` and ``L_k = max(0, max_{j<=k} -(z0 + M_j))``.
    """
    M = np.cumsum(dM)
    L = np.maximum.accumulate(np.maximum(-(z0 + M), 0.0))
    return z0 + M + L, L


def gap_oracle_error(p: ReflectedPath) -> dict:
    """Distance between the projected gap and the explicit Skorokhod map of the same increments."""
    Z = p.Y - p.X
    Zs, L = skorokhod_gap(Z[0], p.dM[1:])
    scale = 1.0 + np.max(np.abs(p.Y))
    return {
        "gap_sup": float(np.max(np.abs(Z[1:] - Zs))) / scale,
        "local_time_sup": float(np.max(np.abs(0.5 * p.A_hat[1:] - L))) / scale,
    }


def write_summary(path, **estimates):
    with open(path, "w") as fh:
        json.dump({k: (v.to_dict() if isinstance(v, MCEstimate) else v) for k, v in estimates.items()},
                  fh, indent=2, sort_keys=True)
