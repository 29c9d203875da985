"""Principal-value evaluation of the fully nonlinear nonlocal operator

    F(u)(x) = C_{n,alpha} PV ∫ G(u(x) - u(z)) / |x - z|^{n+alpha} dz

on a regular grid, plus the alpha -> 2 limit machinery.

The integral around a node ``x`` is split in three parts.

* Inner square ``|z|_inf < eps``: ``u`` is replaced by its local quadratic
  model (central-difference gradient and pure second derivatives, no mixed
  term, which keeps the scheme monotone); the points ``x + z`` and ``x - z``
  are paired so the odd part cancels, and the even remainder ``D(z)/|z|^2``
  is integrated against ``r^{1-alpha}`` by Gauss-Jacobi in polar form.
* The rest of the box: the integrand ``G(u(x) - u(y))`` is replaced by its
  piecewise quadratic (biquadratic) interpolant on 2x2-cell patches anchored
  at ``x``; the resulting nodal weights are exact integrals of the Lagrange
  basis against the kernel and depend only on the node offset.
* Outside the patch rectangle: exact for a zero exterior (incomplete beta
  closed form of the radial reduction), Gauss-Legendre in the radial variable
  ``r^{-alpha}`` for an analytic tail.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .grid import (AnalyticTail, Ball, Domain, GridFunction, HalfSpace, NotInLAlpha, Zero,
                   discrete_gradient, discrete_laplacian)
from .nonlinearity import Nonlinearity


class EpsTooSmall(ValueError):
    pass


class MissingSecondDerivative(ValueError):
    pass


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (2 for n = 1)."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def fractional_laplacian_constant(n: int, alpha: float) -> float:
    """Normalisation making ``G = identity`` the fractional Laplacian."""
    return (2**alpha * alpha * math.gamma((n + alpha) / 2)
            / (2 * math.pi ** (n / 2) * math.gamma(1 - alpha / 2)))


@dataclass(frozen=True)
class KernelParams:
    """Dimension, order and normalisation ``C_{n,alpha} = c_n (2 - alpha)``.

    ``c_n=None`` selects the fractional-Laplacian constant divided by
    ``2 - alpha``; a number overrides it for every alpha.
    """

    n: int
    alpha: float
    c_n: Optional[float] = None

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1, 2 are supported")
        if not 0 < self.alpha < 2:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.c_n is not None and not self.c_n > 0:
            raise ValueError("c_n must be positive")

    @property
    def c_n_value(self) -> float:
        if self.c_n is not None:
            return float(self.c_n)
        return fractional_laplacian_constant(self.n, self.alpha) / (2 - self.alpha)

    @property
    def c_n_limit(self) -> float:
        """``c_n`` as alpha -> 2 (for the default normalisation: 2n / |S^{n-1}|)."""
        if self.c_n is not None:
            return float(self.c_n)
        return 2 * self.n / sphere_area(self.n)

    @property
    def C(self) -> float:
        return self.c_n_value * (2 - self.alpha)

    @property
    def omega_n(self) -> float:
        return unit_ball_volume(self.n)

    @property
    def sigma(self) -> float:
        return sphere_area(self.n)

    def with_alpha(self, alpha: float) -> "KernelParams":
        return KernelParams(self.n, alpha, self.c_n)


@dataclass(frozen=True)
class QuadratureConfig:
    """Quadrature controls.

    eps
        Half-width of the inner principal-value square in length units;
        ``None`` means ``2h``.  Must be an integer multiple of ``h``, ``>= h``.
    truncate_at
        ``None`` integrates the exterior to infinity; a radius ``R`` drops
        the exterior beyond ``|z - x| = R`` (must exceed the box diameter).
    pairing
        Pair ``x + z`` with ``x - z`` in the inner square.  Unpaired inner
        quadrature is only defined for ``alpha < 1``.
    edge_exponent
        One-dimensional boundary model.  ``None`` (default) interpolates the
        nodal values everywhere.  A number ``s`` declares that ``u`` vanishes
        outside the region interval ``(A, B)`` and behaves like ``d^s`` at its
        ends (``s = alpha/2`` for Dirichlet solutions), where
        ``d = (y - A)(B - y)/(B - A)``.  Within ``edge_cells`` cells of the
        ends, ``u`` is then represented as ``d^s`` times a piecewise quadratic
        interpolant of ``u/d^s`` and integrated directly; nodes close to the
        ends are integrated entirely this way.  Only region nodes use the
        model; requires a zero exterior, pairing and no truncation.
    """

    eps: Optional[float] = None
    truncate_at: Optional[float] = None
    pairing: bool = True
    inner_points: int = 16
    tail_points: int = 32
    edge_exponent: Optional[float] = None
    edge_cells: int = 8

    def eps_cells(self, h: float) -> int:
        if self.eps is None:
            return 2
        if self.eps < h * (1 - 1e-9):
            raise EpsTooSmall(f"eps={self.eps} is below the grid spacing {h}")
        m = int(round(self.eps / h))
        if abs(m * h - self.eps) > 1e-9 * h:
            raise ValueError(f"eps={self.eps} is not an integer multiple of h={h}")
        return m


# --- quadrature building blocks ---------------------------------------------------

@functools.lru_cache(maxsize=None)
def _gauss_legendre(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return x, w


@functools.lru_cache(maxsize=None)
def gauss_jacobi01(q: int, p: float):
    """Nodes/weights for ``∫_0^1 f(t) t^p dt`` (``p > -1``)."""
    x, w = special.roots_jacobi(q, 0.0, p)
    return (1 + x) / 2, w * 2.0 ** (-p - 1)


def _lagrange3(s):
    """Quadratic Lagrange basis on nodes 0, 1, 2 evaluated at ``s``."""
    return np.stack([(s - 1) * (s - 2) / 2, s * (2 - s), s * (s - 1) / 2])


def _cos_power_integral(beta, alpha):
    """``∫_0^beta cos(phi)^alpha dphi`` for ``0 <= beta < pi/2`` (incomplete beta)."""
    a, b = 0.5, (alpha + 1) / 2
    return 0.5 * special.betainc(a, b, np.sin(beta) ** 2) * special.beta(a, b)


@functools.lru_cache(maxsize=32)
def offset_weights(n: int, alpha: float, m: int, M: int) -> np.ndarray:
    """Weights (unit spacing) of the patch-interpolated outer integral.

    Returns an array of shape ``(2,)*n + (2M+1,)*n``.  Entry ``[side][d + M]``
    is the integral against ``|z|^{-n-alpha}`` of the (bi)quadratic Lagrange
    basis function of lattice offset ``d``, summed over the 2-cell patches
    outside the inner square ``[-m, m]^n``.  Patch edges sit at ``m + 2k``;
    ``side[k] = 1`` collects patches lying above ``d`` along axis ``k`` (``d``
    is their lower edge), ``side[k] = 0`` the others.  Summing over ``side``
    gives the full weight; a truncated region drops the sides it cuts off.
    """
    W = np.zeros((2,) * n + (2 * M + 1,) * n)
    lines = np.arange(-m - 2 * ((M + m) // 2 + 2), M + 3, 2)
    lines = lines[(lines >= -M - 2) & (lines + 2 <= M + 2)]
    side_of = (0, 0, 1)                       # basis node 0 is the patch's lower edge
    if n == 1:
        starts = lines[(lines >= m) | (lines + 2 <= -m)]
        for q, sel in ((24, np.abs(starts) <= 12 + m), (10, np.abs(starts) > 12 + m)):
            a = starts[sel].astype(float)
            if a.size == 0:
                continue
            x, w = _gauss_legendre(q)
            s = x + 1.0                                   # [0, 2]
            z = a[:, None] + s[None, :]
            kern = np.abs(z) ** (-1 - alpha) * w
            contrib = np.einsum("bq,pq->pb", _lagrange3(s), kern)
            for b in range(3):
                idx = a.astype(int) + b + M
                ok = (idx >= 0) & (idx < 2 * M + 1)
                np.add.at(W[side_of[2 - b]], idx[ok], contrib[ok, b])
        return W
    A0, A1 = np.meshgrid(lines, lines, indexing="ij")
    inner = (A0 >= -m) & (A0 + 2 <= m) & (A1 >= -m) & (A1 + 2 <= m)
    A0, A1 = A0[~inner], A1[~inner]
    near = np.maximum(np.abs(A0 + 1), np.abs(A1 + 1)) <= m + 9
    for q, sel in ((20, near), (8, ~near)):
        a0, a1 = A0[sel].astype(float), A1[sel].astype(float)
        if a0.size == 0:
            continue
        x, w = _gauss_legendre(q)
        s = x + 1.0
        L = _lagrange3(s)                                 # (3, q)
        z0 = a0[:, None, None] + s[None, :, None]
        z1 = a1[:, None, None] + s[None, None, :]
        kern = (z0**2 + z1**2) ** (-(2 + alpha) / 2) * (w[:, None] * w[None, :])
        contrib = np.einsum("aq,br,pqr->pab", L, L, kern)
        for b0 in range(3):
            for b1 in range(3):
                i0 = a0.astype(int) + b0 + M
                i1 = a1.astype(int) + b1 + M
                ok = (i0 >= 0) & (i0 <= 2 * M) & (i1 >= 0) & (i1 <= 2 * M)
                np.add.at(W[side_of[2 - b0], side_of[2 - b1]], (i0[ok], i1[ok]),
                          contrib[ok, b0, b1])
    return W


def _stencil_offsets(n: int) -> np.ndarray:
    if n == 1:
        return np.array([[-1], [0], [1]])
    return np.array([[a, b] for a in (-1, 0, 1) for b in (-1, 0, 1)])


def _model_basis(n: int, z: np.ndarray) -> np.ndarray:
    """``phi_e(z)`` with ``q(x+z) - u(x) = sum_e U[x+e] phi_e(z)`` (unit spacing).

    ``q`` is the quadratic with central-difference gradient and the diagonal
    of the central-difference Hessian.  The mixed ``z1 z2`` term is left out:
    it integrates to zero against the symmetric kernel, enters the nonlinear
    integrand only at fourth order, and keeping it gives the corner neighbours
    weights of either sign, which breaks discrete monotonicity for nonlinear
    ``G``.  ``z`` has shape ``(K, n)``; returns ``(n_stencil, K)``.
    """
    offs = _stencil_offsets(n)
    out = np.zeros((len(offs), z.shape[0]))
    for j, e in enumerate(offs):
        e = tuple(e)
        for k in range(n):
            # gradient: (U[+e_k] - U[-e_k]) / 2
            if e == tuple(int(i == k) for i in range(n)):
                out[j] += 0.5 * z[:, k] + 0.5 * z[:, k] ** 2
            elif e == tuple(-int(i == k) for i in range(n)):
                out[j] += -0.5 * z[:, k] + 0.5 * z[:, k] ** 2
        if all(v == 0 for v in e):
            out[j] += -np.sum(z**2, axis=1)
    return out


@functools.lru_cache(maxsize=32)
def inner_rule(n: int, alpha: float, m: int, q: int, pairing: bool):
    """Points ``z`` (unit spacing) and weights for the inner square ``[-m, m]^n``.

    With pairing the rule integrates ``D(z) = f(z) + f(-z)`` over half the
    directions, with ``D(z)/|z|^2`` treated as smooth; without pairing it
    integrates ``f(z)`` over all directions with ``f(z)/|z|`` smooth.
    """
    p = 1 - alpha if pairing else -alpha
    if p <= -1:
        raise ValueError("unpaired inner quadrature needs alpha < 1")
    t, wt = gauss_jacobi01(q, p)
    power = 2 if pairing else 1
    if n == 1:
        dirs = np.array([[1.0]]) if pairing else np.array([[1.0], [-1.0]])
        rho = np.full(len(dirs), float(m))
        wdir = np.ones(len(dirs))
    else:
        xg, wg = _gauss_legendre(q)
        arcs = [(0, np.pi / 4), (np.pi / 4, 3 * np.pi / 4), (3 * np.pi / 4, np.pi)]
        if not pairing:
            arcs += [(a + np.pi, b + np.pi) for a, b in arcs]
        th, wth = [], []
        for a, b in arcs:
            th.append((b - a) / 2 * xg + (a + b) / 2)
            wth.append((b - a) / 2 * wg)
        th, wdir = np.concatenate(th), np.concatenate(wth)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
        rho = m / np.maximum(np.abs(dirs[:, 0]), np.abs(dirs[:, 1]))
    # ∫_0^rho f(r) r^{-1-alpha} dr = rho^{-alpha} ∫_0^1 [f(rho t) / t^power] t^p dt
    z = (rho[:, None, None] * t[None, :, None]) * dirs[:, None, :]
    w = (wdir * rho ** (-alpha))[:, None] * (wt / t**power)[None, :]
    z = z.reshape(-1, n)
    return z, w.ravel(), _model_basis(n, z), _model_basis(n, -z)


# --- per-domain plan ----------------------------------------------------------------

@dataclass
class _Plan:
    domain: Domain
    alpha: float
    m: int
    M: int
    pad: int
    W: np.ndarray
    lower: np.ndarray        # (N, n) lattice extent of the patch rectangle, per node
    upper: np.ndarray
    tail_zero: np.ndarray    # exterior kernel mass per node (unit spacing)
    inner: tuple


def _rect_tail(lower, upper, alpha, n):
    """∫ over the complement of the rectangle of |z|^{-n-alpha} (unit spacing)."""
    a = -lower.astype(float)
    b = upper.astype(float)
    if n == 1:
        return (a[:, 0] ** -alpha + b[:, 0] ** -alpha) / alpha
    total = np.zeros(a.shape[0])
    # each side: normal distance d, lateral extents e1, e2
    sides = [(b[:, 0], a[:, 1], b[:, 1]), (a[:, 0], a[:, 1], b[:, 1]),
             (b[:, 1], a[:, 0], b[:, 0]), (a[:, 1], a[:, 0], b[:, 0])]
    for d, e1, e2 in sides:
        total += d ** -alpha * (_cos_power_integral(np.arctan(e1 / d), alpha)
                                + _cos_power_integral(np.arctan(e2 / d), alpha))
    return total / alpha


@functools.lru_cache(maxsize=16)
def _make_plan(domain: Domain, alpha: float, m: int, q_inner: int, pairing: bool) -> _Plan:
    n = domain.ndim
    shape = np.array(domain.shape)
    idx = np.stack([g.ravel() for g in np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")],
                   axis=-1)
    lo_dist, hi_dist = idx, shape[None, :] - 1 - idx
    # patch lines sit at offsets congruent to m mod 2
    lower = -lo_dist - ((lo_dist - m) % 2)
    upper = hi_dist + ((hi_dist - m) % 2)
    lower = np.minimum(lower, -m)
    upper = np.maximum(upper, m)
    M = int(max(-lower.min(), upper.max()))
    pad = m + 1
    return _Plan(domain, alpha, m, M, pad, offset_weights(n, alpha, m, M),
                 lower, upper, _rect_tail(lower, upper, alpha, n),
                 inner_rule(n, alpha, m, q_inner, pairing))


def _plan_for(u: GridFunction, k: KernelParams, q: QuadratureConfig) -> _Plan:
    if u.ndim != k.n:
        raise ValueError(f"grid dimension {u.ndim} does not match kernel dimension {k.n}")
    h = u.domain.spacing
    m = q.eps_cells(h)
    return _make_plan(u.domain, float(k.alpha), m, q.inner_points, q.pairing)


def _padded_values(u: GridFunction, width: int) -> np.ndarray:
    """Node values on the lattice extended by ``width`` nodes, exterior rule outside."""
    dom = u.domain
    axes = [a + h * np.arange(-width, s + width) for a, h, s in zip(dom.lo, dom.h, dom.shape)]
    X = np.meshgrid(*axes, indexing="ij")
    big = np.asarray(u.exterior(*X), dtype=float) * np.ones(X[0].shape)
    inner = tuple(slice(width, width + s) for s in dom.shape)
    big[inner] = u.values
    return big


def _tail_analytic(u: GridFunction, plan: _Plan, nodes: np.ndarray, G: Nonlinearity,
                   ui: np.ndarray, truncate_at, qpts: int, want_jac: bool):
    """Exterior part for an analytic tail: returns (value, d value / d u_i)."""
    dom, alpha, n = u.domain, plan.alpha, u.ndim
    h = dom.spacing
    xs = np.stack([np.asarray(dom.lo)[k] + h * nodes[:, k] for k in range(n)], axis=-1)
    a = -plan.lower[_flat(nodes, dom.shape)] * h
    b = plan.upper[_flat(nodes, dom.shape)] * h
    xg, wg = _gauss_legendre(qpts)
    sg, ws = (xg + 1) / 2, wg / 2                        # GL on [0, 1]
    # r = rho * s^{-1/alpha}:
    #   ∫_rho^R f(r) r^{-1-alpha} dr = rho^{-alpha}/alpha ∫_{s_min}^1 f ds
    if n == 1:
        dirs = [(np.array([1.0]), b[:, 0], None), (np.array([-1.0]), a[:, 0], None)]
        pieces = [(e[None, None, :] * np.ones((len(xs), 1, 1)), d[:, None], np.ones((len(xs), 1)))
                  for e, d, _ in dirs]
    else:
        pieces = []
        sides = [(np.array([1.0, 0.0]), b[:, 0], a[:, 1], b[:, 1]),
                 (np.array([-1.0, 0.0]), a[:, 0], b[:, 1], a[:, 1]),
                 (np.array([0.0, 1.0]), b[:, 1], b[:, 0], a[:, 0]),
                 (np.array([0.0, -1.0]), a[:, 1], a[:, 0], b[:, 0])]
        for normal, d, e1, e2 in sides:
            lo_ang, hi_ang = -np.arctan(e1 / d), np.arctan(e2 / d)
            phi = (hi_ang - lo_ang)[:, None] / 2 * xg[None, :] + ((hi_ang + lo_ang) / 2)[:, None]
            wphi = (hi_ang - lo_ang)[:, None] / 2 * wg[None, :]
            tangent = np.array([-normal[1], normal[0]])
            dirv = (np.cos(phi)[..., None] * normal + np.sin(phi)[..., None] * tangent)
            pieces.append((dirv, d[:, None] / np.cos(phi), wphi))
    val = np.zeros(len(xs))
    dval = np.zeros(len(xs))
    for dirv, rho, wdir in pieces:
        if truncate_at is None:
            s_lo = np.zeros_like(rho)
        else:
            s_lo = (rho / truncate_at) ** alpha
        s = s_lo[..., None] + (1 - s_lo)[..., None] * sg          # (N, ndir, qs)
        wts = (1 - s_lo)[..., None] * ws * (rho ** (-alpha) / alpha * wdir)[..., None]
        r = rho[..., None] * s ** (-1.0 / alpha)
        y = xs[:, None, None, :] + r[..., None] * dirv[:, :, None, :]
        fy = u.exterior(*[y[..., k] for k in range(n)])
        arg = ui[:, None, None] - fy
        val += np.sum(G.g(arg) * wts, axis=(1, 2))
        if want_jac:
            dval += np.sum(G.g_prime(arg) * wts, axis=(1, 2))
    return val, dval



# --- one-dimensional boundary model -------------------------------------------------

@dataclass
class _EdgePlan:
    lower: np.ndarray        # (N, 1) patch rectangle used by the tables (0 = no table part)
    upper: np.ndarray
    core: np.ndarray         # (N,) node uses tables + inner square
    active: np.ndarray       # (N,) node uses the boundary model
    starts: np.ndarray       # (N+1,) rule offsets per node
    weight: np.ndarray       # (P,) quadrature weight times kernel (physical units)
    idx: np.ndarray          # (P, 3) node indices of the interpolant at each point
    coef: np.ndarray         # (P, 3) u(y) = sum coef * u[idx]
    exterior: np.ndarray     # (N,) kernel mass outside (A, B)


def region_interval(domain: Domain) -> tuple:
    """End points ``(A, B)`` of the region intersected with the box (1D)."""
    lo, hi = domain.lo[0], domain.hi[0]
    r = domain.region
    if isinstance(r, Ball):
        A, B = r.center[0] - r.radius, r.center[0] + r.radius
    elif isinstance(r, HalfSpace):
        A, B = r.level, hi
    else:
        A, B = lo, hi
    return max(A, lo), min(B, hi)


def _cluster_rule(a: float, b: float, q: int, at: Optional[str], power: float):
    """Gauss-Legendre on ``[a, b]``, graded as ``tau^power`` towards ``at``."""
    x, w = _gauss_legendre(q)
    tau, wt = (x + 1) / 2, w / 2
    if at is None or power == 1.0:
        return a + (b - a) * tau, (b - a) * wt
    jac = (b - a) * power * tau ** (power - 1) * wt
    if at == "a":
        return a + (b - a) * tau**power, jac
    return b - (b - a) * tau**power, jac


@functools.lru_cache(maxsize=8)
def _make_edge_plan(domain: Domain, alpha: float, m: int, s: float, zone: int,
                    q_inner: int) -> _EdgePlan:
    if domain.ndim != 1:
        raise NotImplementedError("the boundary model is implemented in one dimension only")
    h = domain.spacing
    x = domain.axes()[0]
    N = len(x)
    A, B = region_interval(domain)
    reg = np.flatnonzero((x > A + 1e-12 * h) & (x < B - 1e-12 * h))
    if len(reg) < 3:
        raise ValueError("the boundary model needs at least 3 region nodes")
    i0, i1 = int(reg[0]), int(reg[-1])
    span = B - A
    dist = lambda y: (y - A) * (B - y) / span
    power = 1.0 / s if s > 0 else 1.0
    qn = 16

    def interp(y):
        base = i0 + 2 * np.floor((y - x[i0]) / (2 * h)).astype(int)
        base = np.clip(base, i0, i1 - 2)
        idx = base[:, None] + np.arange(3)[None, :]
        L = _lagrange3((y - x[base]) / h).T                       # (P, 3)
        coef = L * (dist(y)[:, None] ** s) / dist(x[idx]) ** s
        return idx, coef

    breaks = np.concatenate([[A], x[reg], [B]])

    def cells_rule(ya, yb):
        """Quadrature for the one-sided integral over [ya, yb] (cell-aligned)."""
        pts, wts = [], []
        sel = (breaks > ya + 1e-12 * h) & (breaks < yb - 1e-12 * h)
        edges = np.concatenate([[ya], breaks[sel], [yb]])
        for a, b in zip(edges[:-1], edges[1:]):
            at = "a" if abs(a - A) < 1e-12 * h else "b" if abs(b - B) < 1e-12 * h else None
            p, w = _cluster_rule(a, b, qn, at, power)
            pts.append(p)
            wts.append(w)
        return np.concatenate(pts), np.concatenate(wts)

    t_gj, w_gj = gauss_jacobi01(q_inner, 1 - alpha)
    lower = np.zeros((N, 1), dtype=int)
    upper = np.zeros((N, 1), dtype=int)
    core = np.ones(N, dtype=bool)
    active = np.zeros(N, dtype=bool)
    ext = np.zeros(N)
    rules = [None] * N
    for i in reg:
        xi = x[i]
        active[i] = True
        ext[i] = ((xi - A) ** -alpha + (B - xi) ** -alpha) / alpha
        left = (xi - A) / h - zone
        right = (B - xi) / h - zone
        Ll = int(np.floor(left)) if left >= 0 else -1
        Lr = int(np.floor(right)) if right >= 0 else -1
        Ll -= (Ll - m) % 2
        Lr -= (Lr - m) % 2
        pts, wts = [], []
        if Ll >= m and Lr >= m:
            lower[i, 0], upper[i, 0] = -Ll, Lr
            for ya, yb in ((A, xi - Ll * h), (xi + Lr * h, B)):
                p, w = cells_rule(ya, yb)
                pts.append(p)
                wts.append(w * np.abs(p - xi) ** (-1 - alpha))
        else:
            core[i] = False
            t0 = min(h, xi - A, B - xi)
            near_end = t0 < h
            tp = t0 / 2 if near_end else t0
            # paired part on [0, tp]: f(t) = sum of both sides, integrated against t^{1-alpha}/t^2
            tt = tp * t_gj
            ww = tp ** (2 - alpha) * w_gj / tt**2
            pts += [xi + tt, xi - tt]
            wts += [ww, ww]
            if near_end:
                # [tp, t0] with grading towards the end point it reaches
                p, w = _cluster_rule(tp, t0, qn, "b", power)
                pts += [xi + p, xi - p]
                wts += [w * p ** (-1 - alpha)] * 2
            # one-sided remainder, graded geometrically when t0 is small
            for lo_y, hi_y, sgn in ((A, xi - t0, -1), (xi + t0, B, 1)):
                if hi_y - lo_y <= 1e-14 * h:
                    continue
                near = xi + sgn * t0
                far_edge = xi + sgn * h
                segs = []
                d = t0
                while d < h * (1 - 1e-12) and near_end:
                    d2 = min(2 * d, h)
                    segs.append((xi + sgn * d, xi + sgn * d2))
                    d = d2
                start = far_edge if near_end else near
                if sgn < 0:
                    rest = (lo_y, min(start, hi_y))
                else:
                    rest = (max(start, lo_y), hi_y)
                for a, b in segs:
                    a, b = min(a, b), max(a, b)
                    a, b = max(a, lo_y), min(b, hi_y)
                    if b - a > 1e-14 * h:
                        p, w = _gauss_legendre(qn)
                        p = a + (b - a) * (p + 1) / 2
                        w = (b - a) * w / 2
                        pts.append(p)
                        wts.append(w * np.abs(p - xi) ** (-1 - alpha))
                if rest[1] - rest[0] > 1e-14 * h:
                    p, w = cells_rule(*rest)
                    pts.append(p)
                    wts.append(w * np.abs(p - xi) ** (-1 - alpha))
        p = np.concatenate(pts)
        w = np.concatenate(wts)
        idx, coef = interp(p)
        rules[i] = (w, idx, coef)

    counts = np.array([0 if r is None else len(r[0]) for r in rules])
    starts = np.concatenate([[0], np.cumsum(counts)])
    have = [r for r in rules if r is not None]
    return _EdgePlan(lower, upper, core, active, starts,
                     np.concatenate([r[0] for r in have]),
                     np.concatenate([r[1] for r in have]),
                     np.concatenate([r[2] for r in have]), ext)


def _edge_plan_for(u: GridFunction, k: KernelParams, q: QuadratureConfig, m: int) -> _EdgePlan:
    if not isinstance(u.exterior, Zero):
        raise ValueError("the boundary model needs a zero exterior")
    if not q.pairing or q.truncate_at is not None:
        raise ValueError("the boundary model needs pairing and no truncation")
    s = float(q.edge_exponent)
    if not 0 <= s <= 1:
        raise ValueError("edge_exponent must lie in [0, 1]")
    return _make_edge_plan(u.domain, float(k.alpha), m, s, int(q.edge_cells), q.inner_points)


def _edge_part(u: GridFunction, G: Nonlinearity, ep: _EdgePlan, flat: np.ndarray,
               ui: np.ndarray, want_jac: bool):
    """Boundary-model contribution (physical units) and its Jacobian entries."""
    val = np.zeros(len(flat))
    vals = u.values.ravel()
    sel = [np.arange(ep.starts[f], ep.starts[f + 1]) for f in flat]
    owner = (np.concatenate([np.full(len(r), j) for j, r in enumerate(sel)]) if sel
             else np.zeros(0, int))
    rows = np.concatenate(sel) if sel else np.zeros(0, int)
    uy = np.sum(ep.coef[rows] * vals[ep.idx[rows]], axis=1)
    arg = ui[owner] - uy
    w = ep.weight[rows]
    val += np.bincount(owner, G.g(arg) * w, minlength=len(flat))
    val += G.g(ui) * ep.exterior[flat]
    if not want_jac:
        return val, None
    gp = G.g_prime(arg) * w
    J = np.zeros((len(flat), len(vals)))
    J[np.arange(len(flat)), flat] += np.bincount(owner, gp, minlength=len(flat))
    J[np.arange(len(flat)), flat] += G.g_prime(ui) * ep.exterior[flat]
    for b in range(3):
        np.add.at(J, (owner, ep.idx[rows, b]), -gp * ep.coef[rows, b])
    return val, J

def _flat(nodes: np.ndarray, shape) -> np.ndarray:
    return np.ravel_multi_index(tuple(nodes.T), shape)


def _masked_weights(W, dgrid, lower, upper):
    """Per-node weights restricted to the patch rectangle ``[lower, upper]``."""
    n = lower.shape[1]
    sides = []
    for j in range(n):
        d = dgrid[None, :]
        lo, up = lower[:, j, None], upper[:, j, None]
        # side 0: patch below (or containing) d; side 1: patch above d
        sides.append(((d > lo) & (d <= up), (d >= lo) & (d < up)))
    if n == 1:
        return W[0][None] * sides[0][0] + W[1][None] * sides[0][1]
    out = np.zeros((lower.shape[0],) + W.shape[2:])
    for s0 in (0, 1):
        for s1 in (0, 1):
            out += W[s0, s1][None] * (sides[0][s0][:, :, None] & sides[1][s1][:, None, :])
    return out


def _evaluate(u: GridFunction, G: Nonlinearity, k: KernelParams, q: QuadratureConfig,
              nodes: np.ndarray, want_jac: bool = False, chunk: int = 0):
    """Operator values at ``nodes`` (array ``(K, n)`` of indices).

    With ``want_jac`` also returns the dense Jacobian ``dF[node]/du[box node]``
    of shape ``(K, prod(shape))``.
    """
    plan = _plan_for(u, k, q)
    dom, n, alpha = u.domain, u.ndim, plan.alpha
    h = dom.spacing
    scale = k.C * h ** (-alpha)
    M, pad = plan.M, plan.pad
    big = _padded_values(u, M)
    flat = _flat(nodes, dom.shape)
    ui = u.values.ravel()[flat]
    lower, upper = plan.lower[flat], plan.upper[flat]
    edge = None
    if q.edge_exponent is not None:
        edge = _edge_plan_for(u, k, q, plan.m)
        act = edge.active[flat]
        lower = np.where(act[:, None], edge.lower[flat], lower)
        upper = np.where(act[:, None], edge.upper[flat], upper)
        core = edge.core[flat].astype(float)
    D = 2 * M + 1
    dgrid = np.arange(-M, M + 1)
    view = sliding_window_view(big, (D,) * n)
    nbox = int(np.prod(dom.shape))

    out = np.zeros(len(nodes))
    jac = np.zeros((len(nodes), nbox)) if want_jac else None
    diag = np.zeros(len(nodes))
    if chunk <= 0:
        chunk = max(1, int(4e6 // D**n))
    for c0 in range(0, len(nodes), chunk):
        sl = slice(c0, c0 + chunk)
        nd = nodes[sl]
        win = view[tuple(nd.T)]                           # (c, D[, D])
        wm = _masked_weights(plan.W, dgrid, lower[sl], upper[sl])
        arg = win * -1.0
        arg += ui[(sl,) + (None,) * n]
        axes = tuple(range(1, n + 1))
        out[sl] = np.sum(G.g(arg) * wm, axis=axes)
        if want_jac:
            coef = G.g_prime(arg) * wm
            diag[sl] += np.sum(coef, axis=axes)
            for r, idx in enumerate(nd):
                box = tuple(slice(M - i, M - i + s) for i, s in zip(idx, dom.shape))
                jac[c0 + r] -= scale * coef[(r,) + box].ravel()

    # inner square with the local quadratic model
    z, w_in, phi_p, phi_m = plan.inner
    offs = _stencil_offsets(n)
    stencil_idx = nodes[:, None, :] + offs[None, :, :] + M      # into `big`
    ust = big[tuple(np.moveaxis(stencil_idx, -1, 0))]          # (K, n_st)
    # einsum without BLAS keeps each node's reduction order independent of
    # how many nodes are evaluated together (field and pointwise values agree
    # bit for bit)
    A = -np.einsum("ks,sq->kq", ust, phi_p)
    wcore = 1.0 if edge is None else core
    if q.pairing:
        B = -np.einsum("ks,sq->kq", ust, phi_m)
        out += np.einsum("kq,q->k", G.g(A) + G.g(B), w_in) * wcore
    else:
        out += np.einsum("kq,q->k", G.g(A), w_in) * wcore
    if want_jac:
        d_st = -(G.g_prime(A) * w_in) @ phi_p.T
        if q.pairing:
            d_st -= (G.g_prime(B) * w_in) @ phi_m.T
        if edge is not None:
            d_st *= core[:, None]
        for j, e in enumerate(offs):
            tgt = nodes + e
            ok = np.all((tgt >= 0) & (tgt < np.array(dom.shape)), axis=1)
            rows = np.flatnonzero(ok)
            jac[rows, _flat(tgt[ok], dom.shape)] += scale * d_st[ok, j]

    # exterior
    if isinstance(u.exterior, Zero):
        tail = plan.tail_zero[flat].copy()
        if edge is not None:
            tail[act] = 0.0
        if q.truncate_at is not None:
            R = q.truncate_at / h
            corner = np.sqrt(np.sum(np.maximum(-lower, upper) ** 2, axis=1))
            if np.any(corner >= R):
                raise ValueError("truncate_at must exceed the box diameter")
            tail -= sphere_area(n) * R ** (-alpha) / alpha
        out += G.g(ui) * tail
        if want_jac:
            diag += G.g_prime(ui) * tail
    else:
        tval, tdiff = _tail_analytic(u, plan, nodes, G, ui, q.truncate_at, q.tail_points, want_jac)
        # _tail_analytic works in physical units; convert to the h-scaled convention
        out += tval * h**alpha
        if want_jac:
            diag += tdiff * h**alpha

    out *= scale
    if want_jac:
        jac[np.arange(len(nodes)), flat] += scale * diag
    if edge is not None and np.any(act):
        sub = np.flatnonzero(act)
        ev, ej = _edge_part(u, G, edge, flat[sub], ui[sub], want_jac)
        out[sub] += k.C * ev
        if want_jac:
            jac[sub] += k.C * ej
    if want_jac:
        return out, jac
    return out


def _as_nodes(u: GridFunction, mask) -> np.ndarray:
    if mask is None:
        mask = np.ones(u.domain.shape, dtype=bool)
    return np.argwhere(np.asarray(mask, dtype=bool).reshape(u.domain.shape))


def _node_of(u: GridFunction, x) -> tuple:
    x = np.asarray(x)
    if x.dtype.kind in "iu":
        idx = tuple(int(i) for i in np.atleast_1d(x))
        if len(idx) != u.ndim or any(not 0 <= i < s for i, s in zip(idx, u.domain.shape)):
            raise ValueError(f"node index {idx} outside the grid")
        return idx
    return u.domain.node_index(x)


def check_admissible(u: GridFunction, k: KernelParams) -> None:
    u.tail_integral(k.alpha)


def eval_operator(u: GridFunction, x, G: Nonlinearity, k: KernelParams,
                  q: QuadratureConfig = QuadratureConfig()) -> float:
    """Operator value at one node; ``x`` is a node index (ints) or its coordinates."""
    idx = _node_of(u, x)
    if isinstance(u.exterior, AnalyticTail):
        check_admissible(u, k)
    return float(_evaluate(u, G, k, q, np.array([idx]))[0])


def eval_operator_field(u: GridFunction, G: Nonlinearity, k: KernelParams,
                        q: QuadratureConfig = QuadratureConfig(), mask=None) -> GridFunction:
    """Operator values at every node (or at the nodes selected by ``mask``).

    Nodes outside ``mask`` carry 0.  The returned grid function has a zero
    exterior; it is a container for values, not an extension of ``F(u)``.
    """
    nodes = _as_nodes(u, mask)
    if isinstance(u.exterior, AnalyticTail):
        check_admissible(u, k)
    vals = np.zeros(u.domain.shape)
    if len(nodes):
        vals[tuple(nodes.T)] = _evaluate(u, G, k, q, nodes)
    return GridFunction(u.domain, vals)


def operator_at_nodes(u: GridFunction, G: Nonlinearity, k: KernelParams,
                      q: QuadratureConfig, nodes: np.ndarray) -> np.ndarray:
    """Values at ``nodes`` (integer array of shape ``(K, n)``)."""
    return _evaluate(u, G, k, q, np.asarray(nodes))


def operator_and_jacobian(u: GridFunction, G: Nonlinearity, k: KernelParams,
                          q: QuadratureConfig, nodes: np.ndarray):
    """Values at ``nodes`` and the dense Jacobian against all box nodes."""
    return _evaluate(u, G, k, q, np.asarray(nodes), want_jac=True)


def kernel_mass_outside(domain: Domain, x, alpha: float, q: QuadratureConfig = QuadratureConfig()):
    """``∫ |x - z|^{-n-alpha} dz`` over the complement of the patch rectangle at node ``x``."""
    h = domain.spacing
    plan = _make_plan(domain, float(alpha), q.eps_cells(h), q.inner_points, q.pairing)
    flat = np.ravel_multi_index(tuple(np.atleast_1d(x)), domain.shape)
    return float(plan.tail_zero[flat] * h ** (-alpha))


# --- alpha -> 2 limit -------------------------------------------------------------------

def limit_coefficients(G: Nonlinearity, k: KernelParams) -> tuple:
    """Coefficients ``(a, b)`` of the limit ``a(-Δu) + b|∇u|^2`` as alpha -> 2.

    Carrying out the inner-ball radial integrals with ``C = c_n (2 - alpha)``
    gives ``a = c_n G'(0) |S^{n-1}| / (2n)`` and
    ``b = c_n G''(0) |S^{n-1}| / (2n)``, with ``c_n`` taken at the limit.  The
    factor 1/2 in ``a`` comes from the second-order Taylor term of ``u``.
    """
    if G.g_double_prime is None:
        raise MissingSecondDerivative("the limit needs G''")
    geom = k.c_n_limit * k.sigma / (2 * k.n)
    a = geom * float(G.g_prime(np.array(0.0)))
    b = geom * float(G.g_double_prime(np.array(0.0)))
    return a, b


@dataclass
class LimitRow:
    alpha: float
    value: float
    limit: float
    error: float


def alpha_limit_check(u: GridFunction, x, G: Nonlinearity, k: KernelParams,
                      alphas: Sequence[float] = (1.5, 1.9, 1.99),
                      q: QuadratureConfig = QuadratureConfig(),
                      laplacian: Optional[float] = None,
                      gradient: Optional[Sequence[float]] = None) -> list:
    """Table of ``F_alpha(u)(x)`` against the local limit for increasing alpha.

    ``laplacian`` and ``gradient`` default to central differences of ``u``.
    """
    idx = _node_of(u, x)
    lap = discrete_laplacian(u, idx) if laplacian is None else float(laplacian)
    grad = discrete_gradient(u, idx) if gradient is None else np.asarray(gradient, dtype=float)
    a, b = limit_coefficients(G, k)
    target = a * (-lap) + b * float(grad @ grad)
    rows = []
    for al in sorted(alphas):
        val = eval_operator(u, idx, G, k.with_alpha(al), q)
        rows.append(LimitRow(al, val, target, abs(val - target)))
    return rows
