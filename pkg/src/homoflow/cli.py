"""Command-line interface: ``homoflow <command> [options]``.

Exit codes: 0 success (a detected blow-up counts as success), 2 invalid
configuration or flags, 3 numerical failure, 4 I/O error.
"""

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import blowup, io, thresholds
from .errors import ConfigError, DomainError, HomoflowError
from .flow import BlowUp, Failure, LogParams, simulate

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE, EXIT_IO = 0, 2, 3, 4
SWEEP_PARAMS = ("chi", "alpha", "m")
log = logging.getLogger("homoflow")


def _range(text):
    try:
        l, r = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected L:R, got {text!r}") from None
    return l, r


def _t_range(text):
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected T0:T1, got {text!r}") from None
    return a, b


def _values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_jobs():
    try:
        return max(1, int(os.environ.get("HOMOFLOW_JOBS", "1")))
    except ValueError:
        return 1


def build_parser():
    ap = argparse.ArgumentParser(prog="homoflow", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0, help="seed for randomized optimizer starts (default 0)")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("simulate", help="run the implicit Euler flow from a config file")
    s.add_argument("--config", required=True, help="run configuration (INI)")
    s.add_argument("--out", required=True, help="output directory for CSV/JSON files")
    s.add_argument("--threshold-starts", type=int, default=4,
                   help="optimizer starts for the reported C_N; 0 skips it (default 4)")
    s.add_argument("--no-analyze", action="store_true", help="skip blow-up set detection")

    s = sub.add_parser("threshold", help="tabulate the discrete thresholds C_p")
    s.add_argument("--m", type=float, required=True, help="exponent m > 1")
    s.add_argument("--p-max", type=int, required=True, help="largest particle count p >= 2")
    s.add_argument("--starts", type=int, default=16, help="optimizer starts per p (default 16)")
    s.add_argument("--csv", help="also write the table to this CSV file")

    s = sub.add_parser("critical-profile", help="solve for the self-similar critical profile")
    s.add_argument("--m", type=float, required=True, help="exponent m > 1")
    s.add_argument("--p", type=int, required=True, help="number of particles")
    s.add_argument("--chi", type=float, help="interaction strength (default: C_p)")
    s.add_argument("--alpha", type=float, default=0.0, help="confinement strength (default 0)")
    s.add_argument("--out", help="write the profile as JSON here")

    s = sub.add_parser("analyze", help="detect blow-up sets in a snapshot CSV")
    s.add_argument("--snapshots", required=True, help="snapshot CSV written by simulate")
    s.add_argument("--eps-ratio", type=float, default=0.05, help="ratio threshold (default 0.05)")
    s.add_argument("--eps-abs", type=float, default=1e-6, help="absolute gap threshold (default 1e-6)")
    s.add_argument("--slope-tol", type=float, default=0.1, help="growth slope tolerance (default 0.1)")
    s.add_argument("--tail", type=int, default=blowup.TAIL, help=f"tail length (default {blowup.TAIL})")
    s.add_argument("--gap-tol", type=float, help="weak blow-up gap tolerance (default 1e-4 x initial scale)")
    s.add_argument("--out", help="write the report as JSON here")

    s = sub.add_parser("plot", help="render an SVG plot")
    s.add_argument("--kind", required=True, choices=io.PLOT_KINDS, help="plot type")
    s.add_argument("--snapshots", help="snapshot CSV (worldlines, histograms)")
    s.add_argument("--diagnostics", help="diagnostics CSV (energy, moment)")
    s.add_argument("--out", required=True, help="output SVG path")
    s.add_argument("--set", type=_range, help="blow-up set L:R for rescaled worldlines (0-based)")
    s.add_argument("--t-range", type=_t_range, help="restrict to times T0:T1")
    s.add_argument("--width", type=int, default=800, help="width in px (default 800)")
    s.add_argument("--height", type=int, default=500, help="height in px (default 500)")

    s = sub.add_parser("sweep", help="run a config over a list of parameter values")
    s.add_argument("--config", required=True, help="base run configuration (INI)")
    s.add_argument("--param", default="chi", choices=SWEEP_PARAMS, help="model parameter to vary (default chi)")
    s.add_argument("--values", type=_values, required=True, help="comma-separated values")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--jobs", type=int, default=None,
                   help="parallel worker processes (default: $HOMOFLOW_JOBS or 1)")
    return ap


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _set_dict(s):
    return {"l": s.l, "r": s.r, "size": s.size, "profile_converged": s.profile_converged,
            "profile": [float(v) for v in s.profile]}


def _analysis(result, gap_tol=None, **kw):
    out = {"relative": [], "weak": []}
    if len(result.snapshots) >= kw.get("tail", blowup.TAIL):
        out["relative"] = [_set_dict(s) for s in blowup.detect_relative_blowup(result.snapshots, **kw)]
    if result.snapshots:
        rep = blowup.detect_weak_blowup(result, gap_tol=gap_tol)
        out["weak"] = [{"l": a, "r": b, "size": b - a + 1} for a, b in rep.sets]
        out["gap_tol"] = rep.gap_tol
    return out


def cmd_simulate(args):
    spec = io.read_run_spec(args.config)
    result = simulate(spec)
    os.makedirs(args.out, exist_ok=True)
    io.write_trajectory_csv(result, os.path.join(args.out, "diagnostics.csv"),
                            os.path.join(args.out, "snapshots.csv"))
    c_n = None
    p = result.params
    if args.threshold_starts > 0 and not isinstance(p, LogParams):
        c_n = thresholds.compute_threshold(p.n, p.m, n_starts=args.threshold_starts, seed=args.seed).c_p
    sets = None
    if isinstance(result.termination, BlowUp) and not args.no_analyze:
        sets = _analysis(result)
    io.write_summary_json(result, os.path.join(args.out, "summary.json"), c_n=c_n, blowup_sets=sets, spec=spec)
    term = result.termination
    print(f"{term.kind}: t = {result.rows[-1].t:.6g}, steps = {len(result.steps)}")
    if isinstance(term, Failure):
        print(f"failure: {term.reason}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_threshold(args):
    table = thresholds.threshold_table(args.p_max, args.m, n_starts=args.starts, seed=args.seed)
    print("p,C_p,kkt_residual,local_optima")
    lines = []
    for est in table:
        line = [str(est.p), repr(est.c_p), repr(est.kkt_residual), str(len(est.local_optima))]
        lines.append(line)
        print(",".join(line))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "C_p", "kkt_residual", "local_optima"])
            w.writerows(lines)
    return EXIT_OK


def cmd_critical_profile(args):
    try:
        prof = thresholds.critical_profile(args.p, args.m, args.chi if args.chi is not None else
                                           thresholds.compute_threshold(args.p, args.m, seed=args.seed).c_p,
                                           alpha=args.alpha)
    except thresholds.NoCriticalPointError as exc:
        print(f"no critical point: {exc}")
        if args.out:
            _write_json(args.out, {"status": "no_critical_point", "message": str(exc)})
        return EXIT_OK
    print(f"chi = {prof.chi!r}, alpha = {prof.alpha!r}, residual = {prof.residual:.3g}")
    print(" ".join(f"{v:.12g}" for v in prof.positions))
    if args.out:
        _write_json(args.out, {"status": "ok", "p": prof.p, "chi": prof.chi, "alpha": prof.alpha,
                               "residual": prof.residual, "energy": io._json_float(prof.energy),
                               "positions": [float(v) for v in prof.positions]})
    return EXIT_OK


def cmd_analyze(args):
    result = io.result_from_csv(args.snapshots)
    report = _analysis(result, gap_tol=args.gap_tol, eps_ratio=args.eps_ratio, eps_abs=args.eps_abs,
                       slope_tol=args.slope_tol, tail=args.tail)
    for s in report["relative"]:
        print(f"relative blow-up set: particles {s['l']}..{s['r']} (size {s['size']})")
    for s in report["weak"]:
        print(f"weak blow-up set: particles {s['l']}..{s['r']} (size {s['size']})")
    if not report["relative"] and not report["weak"]:
        print("no blow-up sets detected")
    if args.out:
        _write_json(args.out, report)
    return EXIT_OK


def cmd_plot(args):
    if not args.snapshots and not args.diagnostics:
        raise ConfigError("plot needs --snapshots and/or --diagnostics")
    result = io.result_from_csv(args.snapshots, args.diagnostics)
    spec = io.PlotSpec(args.kind, args.t_range, args.width, args.height)
    io.render_svg(result, spec, args.out, set_range=args.set)
    return EXIT_OK


def _sweep_one(text, param, value, out_dir):
    spec = io.parse_run_spec(text)
    spec = dataclasses.replace(spec, params=dataclasses.replace(spec.params, **{param: value}))
    result = simulate(spec)
    sub = os.path.join(out_dir, f"{param}_{value!r}")
    os.makedirs(sub, exist_ok=True)
    io.write_summary_json(result, os.path.join(sub, "summary.json"), spec=spec)
    f2 = result.column("f2")
    i = int(np.argmax(f2))
    return [repr(value), result.termination.kind, repr(result.maximal_time_estimate),
            repr(float(f2[i])), repr(float(result.rows[i].t))]


def cmd_sweep(args):
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    io.parse_run_spec(text)
    os.makedirs(args.out, exist_ok=True)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    k = len(args.values)
    if jobs <= 1:
        rows = [_sweep_one(text, args.param, v, args.out) for v in args.values]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_one, [text] * k, [args.param] * k, args.values, [args.out] * k))
    with open(os.path.join(args.out, "phase.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param, "termination", "T_estimate", "max_f2", "t_max_f2"])
        w.writerows(rows)
    for r in rows:
        print(",".join(r))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "threshold": cmd_threshold,
    "critical-profile": cmd_critical_profile,
    "analyze": cmd_analyze,
    "plot": cmd_plot,
    "sweep": cmd_sweep,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (HomoflowError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        # malformed CSV input
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
