"""Command-line front end: ``python -m divbar <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gbm as gbm_mod
from .barrier import (Barrier, classification_sweep, field_F, find_d, minimal_barrier)
from .errors import DivbarError, MembershipViolation, NoConvergence, ParameterError
from .model import GBM, DiffusionSpec, make_fundamental, spec_from_dict
from .simulate import (CSV_HEADER, EULER, LOG_EULER, SimConfig, estimate_J,
                       estimate_stopping_value, run_controlled, check_skorokhod)
from .value import ValueSurface, check_variational, value_ordering_check

EXIT_NO_CONVERGENCE = 2
EXIT_INVALID_MODEL = 3
EXIT_VERIFY_FAILED = 4
EXIT_CENSORED = 5

DEFAULT_MODEL = {"kind": "gbm", "alpha": 0.04, "beta": 0.3, "r": 0.05}

log = logging.getLogger("divbar")


class InvalidModel(DivbarError):
    pass


def load_model(path) -> DiffusionSpec:
    if path is None:
        return spec_from_dict(DEFAULT_MODEL)
    try:
        with open(path) as fh:
            data = json.load(fh)
        return spec_from_dict(data)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise InvalidModel(f"cannot read model {path}: {exc}") from exc


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _pair(spec, args):
    # far anchors of the envelope need the pair well beyond x_hi
    return make_fundamental(spec, (args.xlo, args.xhi * 1e4))


def _barrier(spec, pair, args) -> Barrier:
    if getattr(args, "barrier", "minimal") == "analytic":
        if spec.kind != GBM:
            raise InvalidModel("an analytic barrier is only available for gbm")
        sol = gbm_mod.solve(spec.alpha, spec.beta, spec.r)
        b = Barrier.ray(sol.C, args.xlo, args.xhi, n=max(args.grid, 2))
    else:
        b = minimal_barrier(pair, (args.xlo, args.xhi), n_grid=args.grid)
    factor = getattr(args, "perturb", 1.0)
    return b.scaled(factor) if factor != 1.0 else b


def _default_starts(b: Barrier, x0: float):
    b0 = float(b(x0))
    below = [x0 + f * (b0 - x0) for f in np.linspace(0.15, 0.75, 10)]
    above = [b0 * f for f in np.linspace(1.05, 2.0, 10)]
    return [(x0, e) for e in below + above]


def _parse_starts(text):
    out = []
    for item in text.split(","):
        xi, eta = item.split(":")
        out.append((float(xi), float(eta)))
    return out


def _affine_fit(x, b):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = b - A @ coef
    return {"slope": float(coef[0]), "intercept": float(coef[1]),
            "max_abs_residual": float(np.max(np.abs(resid)))}


# ---------------------------------------------------------------------------
# commands

def cmd_solve_barrier(args) -> int:
    spec = load_model(args.model)
    pair = _pair(spec, args)
    out = Path(args.out)
    b = minimal_barrier(pair, (args.xlo, args.xhi), n_grid=args.grid)
    F = field_F(pair, b.grid_x, b.grid_b)
    write_csv(out / "barrier.csv", ["x", "b", "F", "classification"],
              ((x, y, f, b.source) for x, y, f in zip(b.grid_x, b.grid_b, F)))
    xs = np.geomspace(args.xlo, args.xhi, min(args.grid, 200))
    write_csv(out / "d_of_x.csv", ["x", "d"], ((x, find_d(pair, x)) for x in xs))
    starts = _parse_starts(args.starts) if args.starts else _default_starts(b, args.xlo)
    curves = classification_sweep(pair, starts, args.xhi)
    index = []
    for i, c in enumerate(curves):
        name = f"sweep/start_{i:02d}.csv"
        cls = str(c.classification)
        write_csv(out / name, ["x", "b", "F", "classification"],
                  ((x, y, s, cls) for x, y, s in zip(c.x, c.b, c.slope)))
        index.append({"file": name, "xi": c.classification.xi, "eta": c.classification.eta,
                      "below_minimal": bool(c.classification.eta < b(c.classification.xi)),
                      "outcome": c.classification.outcome, "x_event": c.classification.x_event,
                      "shape": gbm_mod.concavity_classifier(c.x, c.slope)})
    ratio = b.grid_b / b.grid_x
    summary = {"model": spec.to_dict(), "domain": [args.xlo, args.xhi], "n_grid": args.grid,
               "source": b.source, "anchors_used": len(b.info.get("anchors", [])),
               "b_over_x": {"min": float(ratio.min()), "max": float(ratio.max())},
               "affine_fit": _affine_fit(b.grid_x, b.grid_b), "sweep": index}
    if spec.kind == GBM:
        C = gbm_mod.solve(spec.alpha, spec.beta, spec.r).C
        summary["gbm_C"] = C
        summary["max_rel_err_vs_Cx"] = float(np.max(np.abs(ratio / C - 1)))
    write_json(out / "barrier_summary.json", summary)
    print(f"minimal barrier on [{args.xlo}, {args.xhi}] written to {out}")
    return 0


def _verify_grid(b: Barrier, args):
    xs, ys = [], []
    hi = args.xhi
    for x in np.geomspace(args.xlo, hi, args.grid):
        top = min(hi, 1.5 * float(b(x)))
        if top <= x:
            continue
        for y in np.linspace(x, top, args.grid):
            xs.append(x)
            ys.append(y)
    return np.array(xs), np.array(ys)


def cmd_verify(args) -> int:
    spec = load_model(args.model)
    pair = _pair(spec, args)
    out = Path(args.out)
    b = _barrier(spec, pair, args)
    s = ValueSurface(b, pair)
    X, Y = _verify_grid(b, args)
    rep = check_variational(s, X, Y)
    tol = 1e-4 if pair.method != "analytic" else 1e-6
    passed = rep.passed(tol_L=tol, tol_stop=tol, tol_refl=tol, tol_ode=tol)
    s_hi = ValueSurface(b.scaled(1.2), pair)
    passed["ordering"] = value_ordering_check(s_hi, s, X, Y)
    report = {"model": spec.to_dict(), "barrier_source": b.source, "perturb": args.perturb,
              "tolerance": tol, "numeric_pair": pair.method != "analytic",
              "residuals": rep.summary, "suites": passed}
    if args.paths > 0:
        x0 = float(np.sqrt(args.xlo * args.xhi)) / 4
        y0 = 0.5 * (x0 + float(b(x0)))
        scheme = LOG_EULER if spec.kind == GBM else EULER
        cfg = SimConfig(dt=args.dt, n_paths=args.paths, t_max=args.tmax, seed=args.seed, scheme=scheme)
        est = estimate_stopping_value(x0, y0, b, spec, cfg)
        u = s.u(x0, y0)
        ok = abs(est.mean - u) <= 3 * est.stderr
        passed["stopping_agreement"] = bool(ok)
        report["stopping"] = {"x": x0, "y": y0, "u": u, "estimate": est.to_dict()}
    else:
        report["stopping"] = "skipped (use --paths > 0)"
    report["suites"] = passed
    report["passed"] = bool(all(passed.values()))
    write_json(out / "verify_report.json", report)
    write_csv(out / "residuals.csv", ["x", "y", "region", "v", "v_x", "Lv", "stopped_identity"],
              rep.rows())
    for k, v in passed.items():
        print(f"{k:24s} {'PASS' if v else 'FAIL'}")
    return 0 if report["passed"] else EXIT_VERIFY_FAILED


def cmd_simulate(args) -> int:
    spec = load_model(args.model)
    pair = _pair(spec, args)
    out = Path(args.out)
    b = _barrier(spec, pair, args)
    x = args.x
    y = args.y if args.y is not None else float(b(x))
    scheme = args.scheme or (LOG_EULER if spec.kind == GBM else EULER)
    cfg = SimConfig(dt=args.dt, n_paths=args.paths, t_max=args.tmax, seed=args.seed, scheme=scheme)
    path = run_controlled(x, y, b, spec, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path.write_csv(out / "paths.csv")
    est = estimate_J(x, y, b, spec, cfg)
    sx = args.sx if args.sx is not None else x
    sy = args.sy if args.sy is not None else 0.5 * (sx + float(b(sx)))
    stop = estimate_stopping_value(sx, sy, b, spec, cfg)
    s = ValueSurface(b, pair)
    lo, hi = b.domain
    summary = {"model": spec.to_dict(), "config": {"dt": cfg.dt, "n_paths": cfg.n_paths,
                                                   "t_max": cfg.horizon(spec.r), "seed": cfg.seed,
                                                   "scheme": cfg.scheme},
               "barrier_source": b.source, "start": [x, y], "stopping_start": [sx, sy],
               "estimate_J": est.to_dict(), "estimate_stopping_value": stop.to_dict(),
               "path0": {"steps": int(len(path.t) - 1), "absorbed": bool(path.absorbed),
                         "payoff": path.payoff, "skorokhod_ok": check_skorokhod(path, b)}}
    if lo <= x and y <= hi:
        v = s.v(x, y)
        summary["value_check"] = {"v": v, "z": (est.mean - v) / est.stderr if est.stderr > 0 else 0.0}
    if lo <= sx and sy <= hi:
        u = s.u(sx, sy)
        summary["stopping_check"] = {"u": u, "z": (stop.mean - u) / stop.stderr if stop.stderr > 0 else 0.0}
    write_json(out / "mc_summary.json", summary)
    print(f"J = {est.mean:.6g} +- {est.stderr:.2g}; stopping = {stop.mean:.6g} +- {stop.stderr:.2g}")
    worst = max(est.censored_fraction, stop.censored_fraction)
    if worst > args.max_censored:
        print(f"censored fraction {worst:.3g} exceeds {args.max_censored}", file=sys.stderr)
        return EXIT_CENSORED
    return 0


def cmd_gbm_constants(args) -> int:
    spec = load_model(args.model)
    if spec.kind != GBM:
        raise InvalidModel("gbm-constants needs a gbm model")
    sol = gbm_mod.solve(spec.alpha, spec.beta, spec.r)
    out = Path(args.out)
    payload = {"gamma1": sol.gamma1, "gamma2": sol.gamma2, "A": sol.A, "C": sol.C, "N": sol.N,
               "crosscheck_residuals": sol.crosscheck,
               "figure_caption_discrepancy": gbm_mod.figure_caption_discrepancy(
                   spec.alpha, spec.beta, spec.r)}
    write_json(out / "gbm_constants.json", payload)
    print(f"gamma1={sol.gamma1!r} gamma2={sol.gamma2!r} A={sol.A!r} C={sol.C!r} N={sol.N!r}")
    return 0


def cmd_value_surface(args) -> int:
    spec = load_model(args.model)
    pair = _pair(spec, args)
    out = Path(args.out)
    b = _barrier(spec, pair, args)
    s = ValueSurface(b, pair)
    X, Y = _verify_grid(b, args)
    v, vx, reg = s.v(X, Y), s.v_x(X, Y), s.region(X, Y)
    write_csv(out / "value_surface.csv", ["x", "y", "v", "v_x", "region"],
              zip(X, Y, v, vx, reg))
    rep = check_variational(s, X, Y)
    write_csv(out / "residuals.csv", ["x", "y", "region", "v", "v_x", "Lv", "stopped_identity"],
              rep.rows())
    print(f"{len(X)} points written to {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divbar", description="Dividend barriers for a capital process "
                                "with absorption at the cumulative dividends.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=400):
        sp.add_argument("--model", help="JSON model file (default: gbm 0.04/0.3/0.05)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--xlo", type=float, default=0.1)
        sp.add_argument("--xhi", type=float, default=10.0)
        sp.add_argument("--grid", type=int, default=grid)

    def sim(sp, paths):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dt", type=float, default=1e-3)
        sp.add_argument("--paths", type=int, default=paths)
        sp.add_argument("--tmax", type=float, default=None, help="horizon (default 50/r)")

    def barrier_opts(sp):
        sp.add_argument("--barrier", choices=["minimal", "analytic"], default="minimal")
        sp.add_argument("--perturb", type=float, default=1.0,
                        help="multiply the barrier by this factor")

    sp = sub.add_parser("solve-barrier", help="minimal barrier, d(x) and a classified sweep")
    common(sp)
    sp.add_argument("--starts", help="sweep initial points 'xi:eta,xi:eta,...'")
    sp.set_defaults(func=cmd_solve_barrier)

    sp = sub.add_parser("verify", help="residual, ordering and (optionally) stopping suites")
    common(sp, grid=60)
    sim(sp, 0)
    barrier_opts(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("simulate", help="one recorded path plus Monte Carlo estimates")
    common(sp)
    sim(sp, 10_000)
    barrier_opts(sp)
    sp.add_argument("--x", type=float, default=0.2)
    sp.add_argument("--y", type=float, default=None, help="default: b(x)")
    sp.add_argument("--sx", type=float, default=None)
    sp.add_argument("--sy", type=float, default=None)
    sp.add_argument("--scheme", choices=[EULER, LOG_EULER], default=None)
    sp.add_argument("--max-censored", type=float, default=1e-3)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("gbm-constants", help="closed-form constants for the gbm model")
    sp.add_argument("--model")
    sp.add_argument("--out", default="out")
    sp.set_defaults(func=cmd_gbm_constants)

    sp = sub.add_parser("value-surface", help="v and v_x on a grid, with residuals")
    common(sp, grid=50)
    barrier_opts(sp)
    sp.set_defaults(func=cmd_value_surface)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (InvalidModel, ParameterError) as exc:
        print(f"invalid model: {exc}", file=sys.stderr)
        return EXIT_INVALID_MODEL
    except MembershipViolation as exc:
        print(f"barrier rejected: {exc}", file=sys.stderr)
        return EXIT_VERIFY_FAILED


if __name__ == "__main__":
    sys.exit(main())
