"""Verification suites: each runs a family of checks and returns a report.

Every record carries an anchor naming the mathematical statement it
exercises.  Results depend only on the configuration (including its seed);
wall-clock timings are kept apart from the records.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import grid
from .config import RunConfig
from .dirichlet import ProblemSpec, SolverOptions, get_source, solve
from .grid import Ball, Domain, GridFunction, HalfSpace, sample
from .moving_planes import (asymmetry_metric, check_key_inequality, check_simple_max_principle,
                            coefficient_field, decay_bound, decay_rate_check,
                            equal_radius_spread, key_inequality_case, monotonicity_violation,
                            narrow_region_ladder, reflect, sweep_planes)
from .nonlinearity import builtin_library, get_nonlinearity, quadratic
from .operator import (KernelParams, QuadratureConfig, alpha_limit_check, eval_operator_field,
                       limit_coefficients, operator_at_nodes)
from .report import CheckRecord, VerificationReport

SUITES = ("maxprinciple", "bounds", "symmetry", "limit")

A_SMP = "simple maximum principle"
A_KEY = "key inequality for anti-symmetric functions"
A_NARROW = "narrow region principle: kernel integral >= c/delta^alpha"
A_DECAY = "decay at infinity: ball estimate omega_n/(4^(n+alpha)|x0|^alpha)"
A_DECAY_HYP = "decay at infinity: liminf |x|^alpha c(x) >= 0 (q*gamma >= alpha)"
A_SYM = "radial symmetry and monotonicity in the unit ball"
A_SWEEP = "moving planes: critical position lambda_0"
A_WHOLE = "whole-space symmetry under decay hypotheses"
A_LIMIT = "local limit alpha -> 2: a(-Laplace u) + b|grad u|^2"
A_REFL = "reflection invariance of the kernel"
A_HALF = "non-existence on a half-space"


# --- problem construction from a configuration ------------------------------------------

def kernel_from(cfg: RunConfig, n: int = None) -> KernelParams:
    return KernelParams(cfg.dim if n is None else n, cfg.alpha, cfg.c_n)


def quadrature_from(cfg: RunConfig) -> QuadratureConfig:
    return QuadratureConfig(eps=cfg.eps, edge_exponent=cfg.edge_exponent)


def domain_from(cfg: RunConfig) -> Domain:
    """Box and region described by ``cfg`` (see :class:`RunConfig`)."""
    n = cfg.dim
    if cfg.region == "ball":
        R = cfg.radius
        nodes = cfg.N if cfg.N is not None else int(round(2 * R / cfg.h)) + 1
        return Domain.cube(n, -R, R, nodes, Ball(R))
    if cfg.N is not None:
        h = cfg.height / (cfg.N - 1)
    else:
        h = cfg.h
    normal = int(round(cfg.height / h)) + 1
    lateral = int(round(2 * cfg.width / h)) + 1
    if abs((normal - 1) * h - cfg.height) > 1e-9 * cfg.height or \
            abs((lateral - 1) * h - 2 * cfg.width) > 1e-9 * cfg.width:
        raise ValueError("height and 2*width must be multiples of h")
    lo = (-cfg.width,) * (n - 1) + (cfg.level,)
    hi = (cfg.width,) * (n - 1) + (cfg.level + cfg.height,)
    shape = (lateral,) * (n - 1) + (normal,)
    return Domain(lo, hi, shape, HalfSpace(n - 1, cfg.level))


def initial_from(cfg: RunConfig, dom: Domain) -> GridFunction:
    if cfg.initial == "zero":
        return GridFunction(dom, np.zeros(dom.shape))
    f = grid.named_function(cfg.initial)
    X = dom.coords()
    if isinstance(dom.region, HalfSpace):
        # centre the profile in the slab and scale to the requested sup
        X = list(X)
        ax = dom.region.axis
        X[ax] = (X[ax] - dom.lo[ax]) / (dom.hi[ax] - dom.lo[ax]) * 2 - 1
    vals = np.where(dom.region_mask(), f(*X), 0.0)
    peak = np.max(np.abs(vals))
    if peak > 0:
        vals = vals * (cfg.initial_scale / peak)
    return GridFunction(dom, vals)


def problem_from(cfg: RunConfig) -> ProblemSpec:
    dom = domain_from(cfg)
    return ProblemSpec(dom, get_nonlinearity(cfg.G), kernel_from(cfg), get_source(cfg.rhs),
                       initial_from(cfg, dom),
                       SolverOptions(max_iter=cfg.max_iter, damping=cfg.damping,
                                     residual_tol=cfg.residual_tol, jacobian=cfg.jacobian,
                                     fd_step=cfg.fd_step),
                       quadrature_from(cfg))


# --- suites ---------------------------------------------------------------------------

def _interior_minimum_case(rng: np.random.Generator):
    """Grid function whose global minimum (exterior included) is a negative interior dip."""
    n = int(rng.integers(1, 3))
    dom = Domain.cube(n, -1.0, 1.0, 41 if n == 1 else 21, Ball(1.0))
    c = rng.uniform(-0.3, 0.3, size=n)
    r = rng.uniform(0.3, 0.6)
    X = dom.coords()
    s2 = sum((x - ci) ** 2 for x, ci in zip(X, c)) / r**2
    u = -rng.uniform(0.1, 1.0) * np.maximum(1 - s2, 0) ** 3
    return GridFunction(dom, u), float(rng.choice([0.5, 1.0, 1.5]))


def _global_presets() -> list:
    """Presets whose derivative floor holds on all of R (the quadratic one is local)."""
    return [G for name, G in sorted(builtin_library().items())
            if not name.startswith("quadratic")]


def suite_maxprinciple(cfg: RunConfig, rng: np.random.Generator) -> VerificationReport:
    rep = VerificationReport()
    tol = cfg.residual_tol * cfg.tol_scale
    lib = _global_presets()

    # interior negative minimum: the operator is negative there
    worst = -np.inf
    for _ in range(10):
        u, alpha = _interior_minimum_case(rng)
        G = lib[int(rng.integers(len(lib)))]
        k = KernelParams(u.ndim, alpha, cfg.c_n)
        F = eval_operator_field(u, G, k, mask=u.domain.region_mask())
        mp = check_simple_max_principle(u, F, tol=tol)
        worst = max(worst, mp.F_at_argmin)
        if not (mp.passed and mp.note == "premise violated at argmin"):
            worst = np.inf
    rep.add(CheckRecord("interior negative minimum gives F < 0", A_SMP, worst, 0.0, 0.0,
                        bool(worst < 0), {"cases": 10}))

    # vacuous case: a nonnegative function
    dom = Domain.cube(1, -1.0, 1.0, 41, Ball(1.0))
    u = sample(dom, grid.bump(4.0))
    F = eval_operator_field(u, get_nonlinearity("identity"), KernelParams(1, cfg.alpha, cfg.c_n),
                            mask=dom.region_mask())
    mp = check_simple_max_principle(u, F, tol=tol)
    rep.add(CheckRecord("nonnegative function passes", A_SMP, mp.min_u, 0.0, tol, mp.passed))

    # solved problems with f >= 0
    for label, G, rhs, n, N in (("1D f=1 identity", "identity", "const(1)", 1, 65),
                                ("2D f=1+0.1u cubic", "cubic(0.1)", "affine(1,0.1)", 2, 17)):
        dom = Domain.cube(n, -1.0, 1.0, N, Ball(1.0))
        p = ProblemSpec(dom, get_nonlinearity(G), KernelParams(n, cfg.alpha, cfg.c_n),
                        get_source(rhs), solver=SolverOptions(residual_tol=cfg.residual_tol))
        res = solve(p)
        F = eval_operator_field(res.u, p.G, p.kernel, mask=dom.region_mask())
        mp = check_simple_max_principle(res.u, F, tol=tol, tol_min=5 * tol)
        ok = res.converged and mp.passed and mp.min_u >= -5 * tol
        rep.add(CheckRecord(f"solved {label}: min u", A_SMP, mp.min_u, -5 * tol, 5 * tol, ok,
                            {"converged": res.converged, "iterations": res.iterations}))

    # key inequality on the randomized corpus
    violations, margins, count = 0, [], 0
    for i in range(cfg.corpus_size):
        u, axis, lam, alpha = key_inequality_case(rng)
        G = lib[i % len(lib)]
        r = reflect(u, axis, lam)
        recs = check_key_inequality(u, r, G, KernelParams(u.ndim, alpha, cfg.c_n))
        count += len(recs)
        for rc in recs:
            margins.append(rc.margin / abs(rc.rhs))
            violations += int(not (rc.holds and rc.lhs < 0 and rc.rhs < 0))
    ok = violations == 0 and count >= cfg.corpus_size
    rep.add(CheckRecord("key inequality on randomized corpus", A_KEY, violations, 0, 0.0, ok,
                        {"cases": cfg.corpus_size, "minima": count,
                         "min_relative_margin": float(min(margins)) if margins else None}))
    return rep


def suite_bounds(cfg: RunConfig, rng: np.random.Generator) -> VerificationReport:
    rep = VerificationReport()
    for n in (1, 2):
        for alpha in (0.5, 1.0, 1.5):
            k = KernelParams(n, alpha, cfg.c_n)
            res, slope = narrow_region_ladder(k)
            tol = 0.05 * alpha
            rep.add(CheckRecord(
                f"narrow region slope n={n} alpha={alpha}", A_NARROW, slope, -alpha, tol,
                bool(abs(slope + alpha) <= tol and all(r.passed for r in res)),
                {"integrals": [r.integral for r in res], "bounds": [r.bound for r in res]},
                {"log_delta_log_I": [[float(np.log(r.delta)), float(np.log(r.integral))]
                                     for r in res]}))
    for n in (1, 2):
        for alpha in (0.5, 1.0, 1.5):
            k = KernelParams(n, alpha, cfg.c_n)
            fails, pairs_i, pairs_b = 0, [], []
            for r0 in (5.0, 10.0, 20.0, 40.0):
                dirs = [np.array([-1.0])] if n == 1 else \
                    [np.array([-1.0, 0.0]), np.array([-1.0, 1.0]) / np.sqrt(2),
                     np.array([-1.0, -2.0]) / np.sqrt(5)]
                for e in dirs:
                    db = decay_bound(r0 * e, 0.0, k)
                    fails += int(not db.passed)
                pairs_i.append([r0, db.integral])
                pairs_b.append([r0, db.bound])
            rep.add(CheckRecord(f"decay bound n={n} alpha={alpha}", A_DECAY, fails, 0, 0.0,
                                fails == 0, {}, {"integral": pairs_i, "bound": pairs_b}))
    # decay hypothesis on the coefficient of a synthetic whole-space profile
    alpha = cfg.alpha
    for q, gamma, expect in ((1.0, alpha, True), (1.0, alpha / 2, False)):
        dom = Domain.cube(1, -400.0, 400.0, 1601)
        name = f"algebraic({gamma!r})"
        u = sample(dom, grid.algebraic(gamma), grid.named_tail(name))
        r = reflect(u, 0, -1.0)
        cf = coefficient_field(u, r, lambda s, q=q: np.abs(s) ** (q + 1) / (q + 1))
        dr = decay_rate_check(cf, alpha)
        label = "holds" if expect else "violated (sharpness)"
        rep.add(CheckRecord(f"decay hypothesis {label}: q*gamma={q * gamma:g}", A_DECAY_HYP,
                            dr.exponent, 0.1, 0.1, dr.passed == expect,
                            {"liminf_proxy": dr.liminf_proxy, "detected_bounded": dr.passed},
                            {"scaled_coefficient": [[float(a), float(b)] for a, b in
                                                    zip(dr.radii[::8], dr.scaled[::8])]}))
    return rep


def suite_symmetry(cfg: RunConfig, rng: np.random.Generator) -> VerificationReport:
    rep = VerificationReport()
    tol = cfg.residual_tol * cfg.tol_scale
    N = cfg.symmetry_N
    dom = Domain.cube(2, -1.0, 1.0, N, Ball(1.0))
    h = dom.spacing

    radial = sample(dom, grid.torsion(1.0))
    sw = sweep_planes(radial, 0, tol=1e-12)
    mw = min(r.min_w for r in sw.records)
    rep.add(CheckRecord("exact radial profile: lambda_0", A_SWEEP, sw.lambda0, 0.0, h,
                        bool(abs(sw.lambda0) <= h and mw >= -1e-12), {"min_w": mw}))

    skew = sample(dom, lambda x, y: np.maximum(1 - x**2 - y**2, 0) * (1 - 0.1 * np.tanh(3 * x)))
    sw = sweep_planes(skew, 0, tol=1e-12)
    rep.add(CheckRecord("skewed profile: lambda_0 below 0", A_SWEEP, sw.lambda0, -h, 0.0,
                        bool(sw.lambda0 < -h)))

    # whole-space sweep on a decaying profile with a closed-form tail
    wdom = Domain.cube(1, -20.0, 20.0, 161)
    gamma = 1.0
    wu = sample(wdom, grid.algebraic(gamma), grid.named_tail(f"algebraic({gamma!r})"))
    sw = sweep_planes(wu, 0, tol=1e-12)
    rep.add(CheckRecord("decaying profile on R: lambda_0", A_WHOLE, sw.lambda0, 0.0,
                        wdom.spacing, bool(abs(sw.lambda0) <= wdom.spacing)))

    # reflection invariance of the discrete operator
    G = get_nonlinearity(cfg.G) if cfg.G != "identity" else get_nonlinearity("cubic(0.1)")
    k = KernelParams(2, cfg.alpha, cfg.c_n)
    lam = -0.5 * h * int(rng.integers(1, 6))
    lam = round((lam - dom.lo[0]) / (h / 2)) * (h / 2) + dom.lo[0]
    r = reflect(skew, 0, lam)
    nodes = np.argwhere(dom.region_mask())[:: max(1, N // 4)]
    a = operator_at_nodes(skew, G, k, QuadratureConfig(), nodes)
    b = operator_at_nodes(r.reflected_function(), G, k, QuadratureConfig(),
                          np.array([r.reflected_node(i) for i in nodes]))
    err = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
    rep.add(CheckRecord("operator commutes with reflection", A_REFL, err, 1e-12, 1e-12,
                        bool(err <= 1e-12)))

    # solved ball problem
    p = ProblemSpec(dom, get_nonlinearity("cubic(0.1)"), k, get_source("affine(1,0.1)"),
                    solver=SolverOptions(residual_tol=cfg.residual_tol))
    res = solve(p)
    asym = asymmetry_metric(res.u)
    mono = monotonicity_violation(res.u)
    sw = sweep_planes(res.u, 0, tol=10 * tol)
    mw = min(r.min_w for r in sw.records)
    rep.add(CheckRecord(f"solved ball N={N}: asymmetry", A_SYM, asym, 10 * tol, 10 * tol,
                        bool(res.converged and asym <= 10 * tol),
                        {"converged": res.converged, "iterations": res.iterations,
                         "final_residual": res.residual_history[-1],
                         "equal_radius_spread": equal_radius_spread(res.u, dom.region_mask())}))
    rep.add(CheckRecord(f"solved ball N={N}: monotonicity", A_SYM, mono, 10 * tol, 10 * tol,
                        bool(mono <= 10 * tol)))
    rep.add(CheckRecord(f"solved ball N={N}: lambda_0", A_SWEEP, sw.lambda0, 0.0, h,
                        bool(abs(sw.lambda0) <= h and mw >= -10 * tol), {"min_w": mw},
                        {"min_w": [[r.lam, r.min_w] for r in sw.records]}))

    # half-space non-existence smoke test
    hdom = Domain((-1.0, 0.0), (1.0, 1.0), (33, 17), HalfSpace(1, 0.0))
    u0 = sample(hdom, lambda x, y: 0.5 * np.exp(-x**2) * 4 * y * (1 - y))
    p = ProblemSpec(hdom, get_nonlinearity("cubic(0.1)"), KernelParams(2, cfg.alpha, cfg.c_n),
                    get_source("lipschitz:square"), u0,
                    SolverOptions(residual_tol=min(cfg.residual_tol, 1e-10)))
    res = solve(p)
    sups = res.sup_history
    mono_after = all(b < a for a, b in zip(sups[3:], sups[4:]))
    rep.add(CheckRecord("truncated half-space: iterates decay to 0", A_HALF, sups[-1], 1e-3, 0.0,
                        bool(sups[-1] < 1e-3 and mono_after and sups[0] == 0.5), {},
                        {"sup_norm": [[i, s] for i, s in enumerate(sups)]}))
    return rep


LIMIT_POINTS_1D = ((0.0,), (0.3,), (-0.5,), (0.6,), (0.25,))
LIMIT_POINTS_2D = ((0.0, 0.0), (0.3, 0.3), (-0.5, 0.1), (0.6, 0.0), (0.25, -0.35))


def limit_table(n: int = 1, c_n=None, G=None, N: int = None):
    """Rows ``(point, [LimitRow...], scale)`` for the bump ``0.3 (1 - |x|^2)_+^4``."""
    G = quadratic(1.0) if G is None else G
    N = (161 if n == 1 else 81) if N is None else N
    dom = Domain.cube(n, -2.0, 2.0, N)
    u = sample(dom, lambda *x: 0.3 * grid.bump(4.0)(*x))
    k = KernelParams(n, 1.5, c_n)
    a, b = limit_coefficients(G, k)
    out = []
    for pt in (LIMIT_POINTS_1D if n == 1 else LIMIT_POINTS_2D):
        idx = dom.node_index(pt)
        rows = alpha_limit_check(u, idx, G, k)
        lap = grid.discrete_laplacian(u, idx)
        g = grid.discrete_gradient(u, idx)
        out.append((pt, rows, abs(a * lap) + abs(b) * float(g @ g) + 1e-8))
    return out


def suite_limit(cfg: RunConfig, rng: np.random.Generator) -> VerificationReport:
    rep = VerificationReport()
    ident = get_nonlinearity("identity")
    a0, b0 = limit_coefficients(ident, KernelParams(cfg.dim, 1.5, cfg.c_n))
    rep.add(CheckRecord("identity: b = 0", A_LIMIT, b0, 0.0, 0.0, b0 == 0.0, {"a": a0}))
    for n in (1, 2):
        for pt, rows, scale in limit_table(n, cfg.c_n):
            errs = [r.error for r in rows]
            dec = all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
            rel = errs[-1] / scale
            rep.add(CheckRecord(
                f"limit n={n} x={list(pt)}", A_LIMIT, rel, 0.05, 0.05, bool(dec and rel < 0.05),
                {"alphas": [r.alpha for r in rows], "errors": errs, "limit": rows[0].limit},
                {"error_vs_alpha": [[r.alpha, r.error] for r in rows]}))
    return rep


_RUNNERS: dict = {
    "maxprinciple": suite_maxprinciple,
    "bounds": suite_bounds,
    "symmetry": suite_symmetry,
    "limit": suite_limit,
}


def run_suite(name: str, cfg: RunConfig = None) -> VerificationReport:
    """Run one suite (or ``"all"``) deterministically from ``cfg.seed``.

    Raises
    ------
    ValueError
        For an empty or unknown suite name.
    """
    cfg = RunConfig() if cfg is None else cfg
    if not name:
        raise ValueError(f"usage: run_suite(NAME) with NAME in {('all',) + SUITES}")
    names = SUITES if name == "all" else (name,)
    unknown = [s for s in names if s not in _RUNNERS]
    if unknown:
        raise ValueError(f"unknown suite {unknown[0]!r}; choose from {('all',) + SUITES}")
    report = VerificationReport(metadata={
        "suite": name, "seed": cfg.seed, "alpha": cfg.alpha, "G": cfg.G,
        "c_n": "default" if cfg.c_n is None else cfg.c_n, "residual_tol": cfg.residual_tol,
        "tol_scale": cfg.tol_scale, "symmetry_N": cfg.symmetry_N,
    })
    for s in names:
        rng = np.random.default_rng([cfg.seed, SUITES.index(s)])
        t0 = time.perf_counter()
        part = _RUNNERS[s](cfg, rng)
        report.timings[s] = time.perf_counter() - t0
        for rec in part.records:
            rec.details = {"suite": s, **rec.details}
        report.records.extend(part.records)
    return report
