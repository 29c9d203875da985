"""Collocation solver for ``F_alpha(u) = f(u)`` in a region with zero exterior data.

The unknowns are the values of ``u`` at the region nodes; all other box nodes
and the whole exterior are held at zero.  The nonlinear system is solved by
Newton's method with backtracking, falling back to a preconditioned
fixed-point iteration when Newton stagnates.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .grid import Ball, Domain, GridFunction, HalfSpace, Zero
from .nonlinearity import Nonlinearity, identity
from .operator import KernelParams, QuadratureConfig, operator_and_jacobian, operator_at_nodes

log = logging.getLogger(__name__)


class MaxIterExceeded(RuntimeError):
    """Raised by :func:`solve` with ``strict=True``; carries the best iterate."""

    def __init__(self, result: "SolveResult"):
        self.result = result
        super().__init__(f"no convergence in {result.iterations} iterations "
                         f"(residual {result.residual_history[-1]:.3e})")


class SingularJacobian(RuntimeError):
    pass


# --- right-hand sides ----------------------------------------------------------

@dataclass(frozen=True)
class Source:
    """Named nonlinearity ``f(u)`` with derivative and a Lipschitz estimate.

    ``lipschitz`` is the Lipschitz constant on ``|u| <= 1`` (used only for
    reporting); ``nonnegative`` records whether ``f >= 0`` on ``u >= 0``.
    """

    name: str
    f: Callable
    f_prime: Callable
    lipschitz: float
    nonnegative: bool

    def __call__(self, u):
        return self.f(np.asarray(u, dtype=float))


_NUM = r"([-+]?[0-9.]+(?:[eE][-+]?[0-9]+)?)"
_SOURCE_PATTERNS = [
    (re.compile(rf"^const\({_NUM}\)$"), "const"),
    (re.compile(rf"^linear\({_NUM}\)$"), "linear"),
    (re.compile(rf"^affine\({_NUM},{_NUM}\)$"), "affine"),
    (re.compile(r"^lipschitz:([a-z]+)$"), "lipschitz"),
]

_LIPSCHITZ = {
    "square": (lambda u: u**2, lambda u: 2 * u, 2.0, True),
    "sin": (np.sin, np.cos, 1.0, False),
    "tanh": (np.tanh, lambda u: 1 / np.cosh(u) ** 2, 1.0, False),
}


def get_source(name: str) -> Source:
    """Parse ``const(c)``, ``linear(k)``, ``affine(a,b)`` (``a + b u``) or
    ``lipschitz:NAME`` with NAME in ``square``, ``sin``, ``tanh``."""
    key = name.replace(" ", "")
    for pat, kind in _SOURCE_PATTERNS:
        m = pat.match(key)
        if m is None:
            continue
        if kind == "const":
            c = float(m.group(1))
            return Source(key, lambda u: np.full_like(u, c), lambda u: np.zeros_like(u), 0.0,
                          c >= 0)
        if kind == "linear":
            k = float(m.group(1))
            return Source(key, lambda u: k * u, lambda u: np.full_like(u, k), abs(k), k >= 0)
        if kind == "affine":
            a, b = float(m.group(1)), float(m.group(2))
            return Source(key, lambda u: a + b * u, lambda u: np.full_like(u, b), abs(b),
                          a >= 0 and b >= 0)
        if m.group(1) in _LIPSCHITZ:
            f, fp, lip, nonneg = _LIPSCHITZ[m.group(1)]
            return Source(key, f, fp, lip, nonneg)
    raise KeyError(f"unknown source {name!r}")


# --- problem and result ----------------------------------------------------------

@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls.

    ``damping`` is the backtracking factor for Newton steps and the step size
    of the fixed-point fallback.  ``jacobian`` is ``"analytic"`` (derivative
    of the quadrature) or ``"fd"`` (column-wise forward differences with step
    ``fd_step``).
    """

    max_iter: int = 50
    damping: float = 0.7
    residual_tol: float = 1e-8
    jacobian: str = "analytic"
    fd_step: float = 1e-7
    stagnation: float = 0.01
    stagnation_window: int = 3
    max_backtracks: int = 30

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1 or self.residual_tol <= 0 or self.fd_step <= 0:
            raise ValueError("max_iter, residual_tol and fd_step must be positive")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError("jacobian must be 'analytic' or 'fd'")


@dataclass(frozen=True)
class ProblemSpec:
    domain: Domain
    G: Nonlinearity
    kernel: KernelParams
    rhs: Source
    initial_guess: Optional[GridFunction] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if not isinstance(self.domain.region, (Ball, HalfSpace)):
            raise ValueError("the region must be a Ball or a HalfSpace truncation")
        if self.domain.ndim != self.kernel.n:
            raise ValueError("domain and kernel dimensions differ")
        if self.initial_guess is not None:
            g = self.initial_guess
            if g.domain != self.domain:
                raise ValueError("initial guess lives on a different domain")
            if not isinstance(g.exterior, Zero):
                raise ValueError("initial guess must have a zero exterior")

    @property
    def unknowns(self) -> np.ndarray:
        return self.domain.region_mask()

    def start(self) -> GridFunction:
        if self.initial_guess is None:
            return GridFunction(self.domain, np.zeros(self.domain.shape))
        vals = np.where(self.unknowns, self.initial_guess.values, 0.0)
        return GridFunction(self.domain, vals)


@dataclass
class SolveResult:
    u: GridFunction
    residual_history: list
    converged: bool
    iterations: int
    steps: list = field(default_factory=list)     # "newton" / "fixed-point" per iteration
    sup_history: list = field(default_factory=list)


# --- residual and Jacobian ---------------------------------------------------------

def _nodes(p: ProblemSpec) -> np.ndarray:
    return np.argwhere(p.unknowns)


def _check_rhs(fu: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(fu)):
        raise FloatingPointError(f"source is not finite on the range of u ({where})")


def residual(u: GridFunction, p: ProblemSpec) -> GridFunction:
    """``F_alpha(u) - f(u)`` at the region nodes, zero elsewhere."""
    if not isinstance(u.exterior, Zero):
        raise ValueError("residual needs a zero exterior")
    nodes = _nodes(p)
    F = operator_at_nodes(u, p.G, p.kernel, p.quadrature, nodes)
    fu = p.rhs(u.values[tuple(nodes.T)])
    _check_rhs(fu, "residual")
    out = np.zeros(p.domain.shape)
    out[tuple(nodes.T)] = F - fu
    return GridFunction(p.domain, out)


def _system(u: GridFunction, p: ProblemSpec, nodes: np.ndarray, want_jac: bool):
    """Residual vector on the unknowns and (optionally) its Jacobian."""
    flat = np.ravel_multi_index(tuple(nodes.T), p.domain.shape)
    uvals = u.values.ravel()[flat]
    fu = p.rhs(uvals)
    _check_rhs(fu, "system")
    if not want_jac:
        return operator_at_nodes(u, p.G, p.kernel, p.quadrature, nodes) - fu, None
    if p.solver.jacobian == "analytic":
        F, J = operator_and_jacobian(u, p.G, p.kernel, p.quadrature, nodes)
        J = J[:, flat]
    else:
        F = operator_at_nodes(u, p.G, p.kernel, p.quadrature, nodes)
        J = np.empty((len(flat), len(flat)))
        step = p.solver.fd_step
        base = u.values.ravel()
        for j, c in enumerate(flat):
            v = base.copy()
            v[c] += step
            J[:, j] = (operator_at_nodes(u.with_values(v.reshape(u.domain.shape)), p.G, p.kernel,
                                 p.quadrature, nodes) - F) / step
    J[np.diag_indices_from(J)] -= p.rhs.f_prime(uvals)
    return F - fu, J


def _lu(J: np.ndarray):
    try:
        lu = linalg.lu_factor(J, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularJacobian(str(exc)) from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= 1e-14 * max(diag.max(), 1e-300):
        raise SingularJacobian(f"pivot ratio {diag.min() / diag.max():.2e}")
    return lu


def _fixed_point_matrix(p: ProblemSpec, nodes: np.ndarray):
    """LU of the collocation matrix of the G = identity operator."""
    flat = np.ravel_multi_index(tuple(nodes.T), p.domain.shape)
    zero = GridFunction(p.domain, np.zeros(p.domain.shape))
    _, M = operator_and_jacobian(zero, identity(), p.kernel, p.quadrature, nodes)
    return _lu(M[:, flat])


def solve(p: ProblemSpec, strict: bool = False) -> SolveResult:
    """Damped Newton with a fixed-point fallback.

    Each Newton step first tries the full update and backtracks by the factor
    ``damping`` until the sup-norm residual decreases.  When the residual
    drops by less than ``stagnation`` (relative) over ``stagnation_window``
    iterations, the remaining iterations use ``u <- u - damping M^{-1} r``
    with ``M`` the G = identity collocation matrix.

    Returns the best iterate.  With ``strict=True`` a non-converged run raises
    :class:`MaxIterExceeded` (which carries the result).

    Raises
    ------
    SingularJacobian
        If a Newton matrix or the fallback matrix cannot be factorised.
    """
    opts = p.solver
    nodes = _nodes(p)
    idx = tuple(nodes.T)
    u = p.start()
    r, _ = _system(u, p, nodes, want_jac=False)
    hist = [float(np.max(np.abs(r))) if r.size else 0.0]
    sups = [float(np.max(np.abs(u.values)))]
    steps: list = []
    best = (hist[0], u)
    mode = "newton"
    M_lu = None
    it = 0
    while hist[-1] > opts.residual_tol and it < opts.max_iter:
        it += 1
        if mode == "newton":
            r, J = _system(u, p, nodes, want_jac=True)
            delta = linalg.lu_solve(_lu(J), r)
            theta, accepted = 1.0, False
            for _ in range(opts.max_backtracks):
                vals = u.values.copy()
                vals[idx] -= theta * delta
                trial = u.with_values(vals)
                r_new, _ = _system(trial, p, nodes, want_jac=False)
                res = float(np.max(np.abs(r_new)))
                if np.isfinite(res) and res < hist[-1]:
                    accepted = True
                    break
                theta *= opts.damping
            if not accepted:
                log.info("Newton line search failed at iteration %d; switching to fixed point", it)
                mode = "fixed-point"
                it -= 1
                continue
            u = trial
            steps.append("newton")
        else:
            if M_lu is None:
                M_lu = _fixed_point_matrix(p, nodes)
            r, _ = _system(u, p, nodes, want_jac=False)
            vals = u.values.copy()
            vals[idx] -= opts.damping * linalg.lu_solve(M_lu, r)
            u = u.with_values(vals)
            r_new, _ = _system(u, p, nodes, want_jac=False)
            res = float(np.max(np.abs(r_new)))
            steps.append("fixed-point")
        hist.append(res)
        sups.append(float(np.max(np.abs(u.values))))
        if res < best[0]:
            best = (res, u)
        w = opts.stagnation_window
        if (mode == "newton" and len(hist) > w
                and hist[-1] > (1 - opts.stagnation) * hist[-1 - w]):
            log.info("Newton stagnated at iteration %d; switching to fixed point", it)
            mode = "fixed-point"
    converged = best[0] <= opts.residual_tol
    result = SolveResult(best[1], hist, converged, it, steps, sups)
    if strict and not converged:
        raise MaxIterExceeded(result)
    return result
