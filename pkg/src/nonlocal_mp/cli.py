"""Command-line entry point: ``nonlocal-mp <subcommand> ...``.

Subcommands
-----------
eval       operator values of a grid file
solve      Dirichlet problem from a ``key = value`` problem file
verify-mp  plane sweep and key inequality for a grid file
bounds     narrow-region or decay-bound table (CSV)
limit      alpha -> 2 error table
suite      run a verification suite

The exit status is 0 when every check passes, 1 when a check fails and 2
for usage or input errors.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import grid
from .config import ConfigTypeError, RunConfig, UnknownKey, parse_config
from .dirichlet import SingularJacobian, get_source, solve
from .moving_planes import (check_simple_max_principle, coefficient_field, decay_bound,
                            narrow_region_bound, reflect, sweep_planes)
from .nonlinearity import HypothesisViolation, get_nonlinearity
from .operator import KernelParams, QuadratureConfig, eval_operator_field, limit_coefficients
from .report import CheckRecord, VerificationReport, emit_csv, emit_plotdata, write_report
from .suites import A_KEY, A_LIMIT, A_SMP, A_SWEEP, SUITES, limit_table, problem_from, run_suite

log = logging.getLogger("nonlocal_mp")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _kernel(args, n: int) -> KernelParams:
    return KernelParams(n, args.alpha, args.c_n)


def _finish(report: VerificationReport, args) -> int:
    for line in report.summary_lines():
        print(line)
    if getattr(args, "report", None):
        write_report(report, args.report)
    if getattr(args, "csv", None):
        emit_csv(report, args.csv)
    if getattr(args, "plotdata", None):
        emit_plotdata(report, args.plotdata)
    print("PASS" if report.passed else f"FAIL ({len(report.failures)} of {len(report.records)})")
    return EXIT_OK if report.passed else EXIT_FAIL


# --- subcommands ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    u = grid.read_grid(args.grid)
    G = get_nonlinearity(args.G)
    F = eval_operator_field(u, G, _kernel(args, u.ndim), QuadratureConfig(eps=args.eps))
    grid.write_grid(F, args.out)
    vals = F.values
    arg = np.unravel_index(int(np.argmin(vals)), vals.shape)
    summary = {"min": float(vals.min()), "max": float(vals.max()),
               "argmin": [int(i) for i in arg],
               "argmin_point": [float(c) for c in u.domain.node_point(arg)]}
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        text = Path(args.problem).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {args.problem}: {exc.strerror}") from exc
    cfg = parse_config(text, RunConfig(subcommand="solve", seed=args.seed))
    cfg = cfg.with_overrides(tol_scale=args.tol_scale)
    p = problem_from(cfg)
    res = solve(p)
    grid.write_grid(res.u, args.out)
    tol = cfg.residual_tol * cfg.tol_scale
    report = VerificationReport(metadata={
        "problem": str(args.problem), "region": cfg.region, "dim": cfg.dim,
        "shape": list(p.domain.shape), "h": p.domain.spacing, "alpha": cfg.alpha,
        "c_n": p.kernel.c_n_value, "G": p.G.name, "rhs": p.rhs.name})
    report.add(CheckRecord("solver converged", "collocation residual", res.residual_history[-1],
                           tol, tol, bool(res.converged),
                           {"iterations": res.iterations, "steps": res.steps},
                           {"residual": [[i, r] for i, r in enumerate(res.residual_history)],
                            "sup_norm": [[i, s] for i, s in enumerate(res.sup_history)]}))
    if p.rhs.nonnegative:
        F = eval_operator_field(res.u, p.G, p.kernel, p.quadrature, mask=p.unknowns)
        mp = check_simple_max_principle(res.u, F, tol=tol, tol_min=5 * tol)
        report.add(CheckRecord("min u >= 0 for f >= 0", A_SMP, mp.min_u, -5 * tol, 5 * tol,
                               bool(mp.passed and mp.min_u >= -5 * tol)))
    return _finish(report, args)


def cmd_verify_mp(args) -> int:
    u = grid.read_grid(args.grid)
    if not 0 <= args.axis < u.ndim:
        raise UsageError(f"axis must lie in [0, {u.ndim - 1}]")
    G = get_nonlinearity(args.G)
    k = _kernel(args, u.ndim)
    src = get_source(args.rhs)
    tol = args.tol * args.tol_scale
    dom = u.domain
    h = dom.h[args.axis]
    sw = sweep_planes(u, args.axis, tol=tol, G=G, k=k)
    centre = (dom.lo[args.axis] + dom.hi[args.axis]) / 2
    report = VerificationReport(metadata={
        "grid": str(args.grid), "shape": list(dom.shape), "axis": args.axis, "alpha": args.alpha,
        "c_n": k.c_n_value, "G": G.name, "rhs": src.name})
    reached = sw.lambda0 is not None and sw.lambda0 >= centre - h * (1 + 1e-9)
    details = {"centre": centre, "planes": len(sw.records)}
    if sw.lambda0 is not None:
        cf = coefficient_field(u, reflect(u, args.axis, sw.lambda0), src)
        details["coefficient_lower_bound"] = cf.lower_bound
    report.add(CheckRecord("sweep reaches the centre plane", A_SWEEP,
                           np.nan if sw.lambda0 is None else sw.lambda0, centre - h, h,
                           bool(reached), details,
                           {"min_w": [[r.lam, r.min_w] for r in sw.records]}))
    recs = [rc for r in sw.records for rc in r.key_inequality]
    bad = sum(not rc.holds for rc in recs)
    report.add(CheckRecord("key inequality at negative minima", A_KEY, bad, 0, 0.0, bad == 0,
                           {"minima": len(recs),
                            "margins": [rc.margin for rc in recs]}))
    return _finish(report, args)


def cmd_bounds(args) -> int:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    failed = 0
    try:
        wr = csv.writer(out)
        wr.writerow(("parameter", "integral", "bound", "margin", "pass"))
        for n in args.dim:
            k = KernelParams(n, args.alpha, args.c_n)
            for p in args.params:
                x0 = np.zeros(n)
                if args.mode == "narrow":
                    x0[0] = -p / 2          # middle of the strip {-p < x_1 <= 0}
                    r = narrow_region_bound(x0, 0.0, p, k)
                else:
                    x0[0] = -p
                    r = decay_bound(x0, 0.0, k)
                failed += not r.passed
                wr.writerow((repr(float(p)) if len(args.dim) == 1 else f"n={n};{p!r}",
                             repr(float(r.integral)), repr(float(r.bound)),
                             repr(float(r.margin)),
                             "true" if r.passed else "false"))
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_FAIL if failed else EXIT_OK


def cmd_limit(args) -> int:
    G = get_nonlinearity(args.G)
    k = KernelParams(args.dim, 1.5, args.c_n)
    a, b = limit_coefficients(G, k)
    print(f"a = {a!r}  b = {b!r}")
    report = VerificationReport(metadata={"G": G.name, "dim": args.dim, "a": a, "b": b})
    for pt, rows, scale in limit_table(args.dim, args.c_n, G):
        errs = [r.error for r in rows]
        print(f"x={list(pt)}  " + "  ".join(f"alpha={r.alpha:g}: F={r.value:.6g} "
                                          f"err={r.error:.3e}" for r in rows))
        dec = all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
        rel = errs[-1] / scale
        report.add(CheckRecord(f"limit x={list(pt)}", A_LIMIT, rel, 0.05, 0.05,
                               bool(dec and rel < 0.05),
                               {"errors": errs, "limit": rows[0].limit},
                               {"error_vs_alpha": [[r.alpha, r.error] for r in rows]}))
    return _finish(report, args)


def cmd_suite(args) -> int:
    base = RunConfig(subcommand="suite")
    if args.config:
        try:
            base = parse_config(Path(args.config).read_text(), base)
        except OSError as exc:
            raise UsageError(f"cannot read {args.config}: {exc.strerror}") from exc
    cfg = base.with_overrides(seed=args.seed, tol_scale=args.tol_scale)
    try:
        report = run_suite(args.name, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return _finish(report, args)


# --- parser --------------------------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 2:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 2)")
    return v


def build_parser() -> argparse.ArgumentParser:
    def global_flags(top: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without defaults so that a flag
        # given before the subcommand is not reset by the subparser
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
        g.add_argument("--seed", type=int, default=d(0), help="seed for randomized corpora")
        g.add_argument("--tol-scale", type=_positive_float, default=d(1.0),
                       help="multiply every tolerance by this factor")
        g.add_argument("--threads", type=_positive_int, default=d(None),
                       help="limit BLAS/LAPACK threads")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(top=False)
    parser = argparse.ArgumentParser(prog="nonlocal-mp", parents=[global_flags(top=True)],
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def kernel_args(sp, alpha_required=True):
        sp.add_argument("--alpha", type=_alpha, required=alpha_required,
                        **({} if alpha_required else {"default": 1.0}))
        sp.add_argument("--c-n", dest="c_n", type=_positive_float, default=None,
                        help="normalization constant (default: fractional Laplacian)")

    sp = add("eval", cmd_eval, "operator values of a grid file")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--G", required=True, help="nonlinearity, e.g. identity or cubic(0.1)")
    kernel_args(sp)
    sp.add_argument("--eps", type=_positive_float, default=None,
                    help="inner principal-value half-width (multiple of h; default 2h)")
    sp.add_argument("--out", required=True)

    sp = add("solve", cmd_solve, "solve a Dirichlet problem described by a config file")
    sp.add_argument("--problem", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", default=None)

    sp = add("verify-mp", cmd_verify_mp, "plane sweep and key inequality on a grid file")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--axis", type=int, default=0)
    sp.add_argument("--rhs", required=True, help="source, e.g. const(1) or lipschitz:square")
    sp.add_argument("--G", required=True)
    kernel_args(sp)
    sp.add_argument("--tol", type=_positive_float, default=1e-8,
                    help="negativity threshold for w")
    sp.add_argument("--report", default=None)

    sp = add("bounds", cmd_bounds, "narrow-region or decay-bound table as CSV")
    sp.add_argument("--mode", choices=("narrow", "decay"), required=True)
    kernel_args(sp)
    sp.add_argument("--dim", type=int, nargs="+", choices=(1, 2), default=[1])
    sp.add_argument("--params", type=_positive_float, nargs="+", default=None,
                    help="strip widths (narrow) or radii |x0| (decay)")
    sp.add_argument("--out", default=None, help="CSV path (default: standard output)")

    sp = add("limit", cmd_limit, "alpha -> 2 error table")
    sp.add_argument("--G", default="quadratic(1)")
    sp.add_argument("--dim", type=int, choices=(1, 2), default=1)
    sp.add_argument("--c-n", dest="c_n", type=_positive_float, default=None)
    sp.add_argument("--report", default=None)
    sp.add_argument("--csv", default=None)

    sp = add("suite", cmd_suite, "run a verification suite")
    sp.add_argument("name", nargs="?", default="", help=f"one of all, {', '.join(SUITES)}")
    sp.add_argument("--config", default=None)
    sp.add_argument("--report", default=None)
    sp.add_argument("--csv", default=None)
    sp.add_argument("--plotdata", default=None, help="directory for x y series files")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "bounds" and args.params is None:
        args.params = [0.2, 0.1, 0.05, 0.025] if args.mode == "narrow" else [5.0, 10.0, 20.0, 40.0]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except (UsageError, UnknownKey, ConfigTypeError, KeyError, ValueError,
            HypothesisViolation, OSError) as exc:
        print(f"nonlocal-mp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SingularJacobian as exc:
        print(f"nonlocal-mp {args.command}: singular Jacobian: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
