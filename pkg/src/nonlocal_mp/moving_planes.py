"""Moving-plane machinery on grids: reflections, anti-symmetric differences and
the quantitative inequalities behind the maximum principles.

Conventions: the plane is ``T = {x_axis = lam}``, ``Sigma = {x_axis < lam}``,
``x^lam`` is the mirror image of ``x`` and ``w = u_lam - u`` with
``u_lam(x) = u(x^lam)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import AnalyticTail, Domain, GridFunction, Zero, interpolate
from .nonlinearity import Nonlinearity
from .operator import KernelParams, QuadratureConfig, operator_at_nodes, unit_ball_volume


class PlaneOutsideBox(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class NoNegativeMinimum(Exception):
    """Informational: ``w`` has no negative minimum on ``Sigma``."""


class BadStrip(ValueError):
    pass


class BadGeometry(ValueError):
    pass


# --- reflections ---------------------------------------------------------------

def _on_half_grid(domain: Domain, axis: int, lam: float) -> bool:
    t = 2 * (lam - domain.lo[axis]) / domain.h[axis]
    return abs(t - round(t)) < 1e-9


@dataclass(frozen=True, eq=False)
class PlaneReflection:
    """Reflection of a grid function across ``{x_axis = lam}``.

    ``u_lam`` holds ``u(x^lam)`` at the nodes of ``u``'s grid (exact when the
    plane lies on the half-grid, interpolated otherwise); ``w`` holds
    ``u_lam - u`` on ``Sigma`` and 0 elsewhere.
    """

    u: GridFunction
    axis: int
    lam: float
    u_lam: GridFunction
    w: GridFunction
    sigma: np.ndarray
    grid_aligned: bool

    def reflect_point(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[..., self.axis] = 2 * self.lam - x[..., self.axis]
        return x

    def reflected_function(self) -> GridFunction:
        """``u_lam`` as a grid function on the mirrored box, with mirrored exterior.

        Its node set is the mirror image of the original one, so operator
        values on it are those of ``u`` at mirrored nodes.
        """
        dom = self.u.domain
        vals = np.flip(self.u.values, axis=self.axis)
        ext = self.u.exterior
        if not isinstance(ext, Zero):
            ax, lam, f = self.axis, self.lam, ext

            def mirrored(*x):
                x = list(x)
                x[ax] = 2 * lam - np.asarray(x[ax])
                return f(*x)

            ext = AnalyticTail(mirrored)
        return GridFunction(dom.reflected(self.axis, self.lam), vals, ext)

    def reflected_node(self, index) -> tuple:
        """Index in :meth:`reflected_function`'s grid of the mirror image of node ``index``."""
        index = list(index)
        index[self.axis] = self.u.domain.shape[self.axis] - 1 - index[self.axis]
        return tuple(index)

    def same_point_node(self, index) -> tuple:
        """Index in :meth:`reflected_function`'s grid of the point of node ``index``.

        Needs a half-grid plane; raises ``ValueError`` if the point is outside
        the mirrored box.
        """
        if not self.grid_aligned:
            raise ValueError("node sets coincide only for planes on the half-grid")
        dom = self.u.domain
        a = self.axis
        shift = int(round((dom.lo[a] + dom.hi[a] - 2 * self.lam) / dom.h[a]))
        index = list(index)
        index[a] += shift
        if not 0 <= index[a] < dom.shape[a]:
            raise ValueError("the point lies outside the mirrored box")
        return tuple(index)


def reflect(u: GridFunction, axis: int, lam: float) -> PlaneReflection:
    """Build the reflection data of ``u`` across ``{x_axis = lam}``.

    Raises
    ------
    PlaneOutsideBox
        If ``lam`` is outside the box along ``axis``.
    """
    dom = u.domain
    if not 0 <= axis < dom.ndim:
        raise ValueError(f"axis {axis} out of range")
    if not dom.lo[axis] - 1e-12 <= lam <= dom.hi[axis] + 1e-12:
        raise PlaneOutsideBox(f"lambda={lam} outside [{dom.lo[axis]}, {dom.hi[axis]}]")
    X = dom.coords()
    sigma = X[axis] < lam - 1e-12 * dom.h[axis]
    aligned = _on_half_grid(dom, axis, lam)
    mirror = list(X)
    mirror[axis] = 2 * lam - X[axis]
    if aligned:
        shift = int(round(2 * (lam - dom.lo[axis]) / dom.h[axis]))
        src = shift - np.arange(dom.shape[axis])            # mirrored index along axis
        inside = (src >= 0) & (src < dom.shape[axis])
        ext_vals = np.asarray(u.exterior(*mirror), dtype=float) * np.ones(dom.shape)
        taken = np.take(u.values, np.clip(src, 0, dom.shape[axis] - 1), axis=axis)
        shape = [1] * dom.ndim
        shape[axis] = -1
        vals = np.where(inside.reshape(shape), taken, ext_vals)
    else:
        pts = np.stack([m.ravel() for m in mirror], axis=-1)
        vals = np.asarray(interpolate(u, pts)).reshape(dom.shape)
    u_lam = GridFunction(dom, vals, u.exterior)
    w = GridFunction(dom, np.where(sigma, vals - u.values, 0.0))
    return PlaneReflection(u, axis, float(lam), u_lam, w, sigma, aligned)


# --- kernel integrals over Sigma -------------------------------------------------

def half_space_factor(n: int, alpha: float) -> float:
    """``kappa`` with ``∫_{y_1 > d} |y|^{-n-alpha} dy = kappa d^{-alpha} / alpha``."""
    return math.pi ** ((n - 1) / 2) * math.gamma((1 + alpha) / 2) / math.gamma((n + alpha) / 2)


def sigma_integral(d: float, n: int, alpha: float) -> float:
    """``∫_Sigma |x - y^lam|^{-n-alpha} dy`` for a point at distance ``d`` from the plane.

    The mirror image of ``Sigma`` is the half-space at distance ``d`` beyond
    the plane, so the value is ``half_space_factor(n, alpha) d^{-alpha} / alpha``.
    """
    if d <= 0:
        raise ValueError("the point must lie strictly inside Sigma")
    return half_space_factor(n, alpha) * d ** (-alpha) / alpha


# --- simple maximum principle ------------------------------------------------------

@dataclass
class MaxPrincipleReport:
    passed: bool
    premise: bool                 # F(u) >= -tol on the region
    min_u: float
    argmin: tuple
    exterior_ok: bool             # u >= -tol off the region
    F_at_argmin: float
    note: str = ""


def check_simple_max_principle(u: GridFunction, Fvals: GridFunction, region=None,
                               tol: float = 1e-8, tol_min: Optional[float] = None
                               ) -> MaxPrincipleReport:
    """Check "F(u) >= 0 in the region and u >= 0 outside imply u >= 0".

    ``region`` is a node mask (default: the domain's region mask).  The check
    passes if the premise fails or the conclusion holds (``min u >= -tol_min``).
    When the region has a negative minimum beyond tolerance, the operator
    value there is recorded: it must be negative, so the premise fails.
    """
    if Fvals.values.shape != u.values.shape:
        raise ShapeMismatch(f"{Fvals.values.shape} vs {u.values.shape}")
    tol_min = tol if tol_min is None else tol_min
    region = u.domain.region_mask() if region is None else np.asarray(region, dtype=bool)
    if region.shape != u.values.shape:
        raise ShapeMismatch("region mask shape differs from the grid")
    vals = np.where(region, u.values, np.inf)
    k = np.unravel_index(int(np.argmin(vals)), vals.shape)
    min_u = float(u.values[k])
    premise = bool(np.all(Fvals.values[region] >= -tol))
    exterior_ok = bool(np.all(u.values[~region] >= -tol))
    conclusion = min_u >= -tol_min
    note = ""
    if min_u < -tol_min:
        note = ("premise violated at argmin" if Fvals.values[k] < -tol
                else "negative minimum with nonnegative operator value")
    passed = (not (premise and exterior_ok)) or conclusion
    return MaxPrincipleReport(passed, premise, min_u, tuple(int(i) for i in k), exterior_ok,
                              float(Fvals.values[k]), note)


# --- key inequality --------------------------------------------------------------------

@dataclass
class KeyInequalityRecord:
    index: tuple
    point: tuple
    w: float
    lhs: float                    # F(u_lam)(x) - F(u)(x)
    rhs: float                    # 2 C c0 w(x) ∫_Sigma |x - y^lam|^{-n-alpha} dy
    integral: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def negative_minima(r: PlaneReflection, rel_tie: float = 1e-12) -> list:
    """Nodes of ``Sigma`` where ``w`` attains its (negative) minimum."""
    w = np.where(r.sigma, r.w.values, np.inf)
    wmin = float(np.min(w)) if r.sigma.any() else np.inf
    if not wmin < 0:
        return []
    hits = np.argwhere(w <= wmin + rel_tie * abs(wmin))
    return [tuple(int(i) for i in h) for h in hits]


def check_key_inequality(u: GridFunction, r: PlaneReflection, G: Nonlinearity, k: KernelParams,
                         q: QuadratureConfig = QuadratureConfig(), strict: bool = False,
                         tol: float = 0.0) -> list:
    """Evaluate both sides of the key inequality at every negative minimum of ``w``.

    Returns one :class:`KeyInequalityRecord` per minimising node (empty when
    ``w >= 0`` on ``Sigma``; with ``strict=True`` that case raises
    :class:`NoNegativeMinimum`).  ``tol`` is an absolute slack for ``holds``.
    """
    if r.u is not u:
        raise ValueError("the reflection was built from a different grid function")
    mins = negative_minima(r)
    if not mins:
        if strict:
            raise NoNegativeMinimum("w >= 0 on Sigma")
        return []
    if not r.grid_aligned:
        raise ValueError("the key inequality check needs a plane on the half-grid")
    v = r.reflected_function()
    nodes = np.array(mins)
    F_u = operator_at_nodes(u, G, k, q, nodes)
    F_ul = operator_at_nodes(v, G, k, q, np.array([r.same_point_node(i) for i in mins]))
    out = []
    for j, idx in enumerate(mins):
        x = u.domain.node_point(idx)
        d = r.lam - x[r.axis]
        I = sigma_integral(d, u.ndim, k.alpha)
        wv = float(r.w.values[idx])
        rhs = 2 * k.C * G.c0 * wv * I
        lhs = float(F_ul[j] - F_u[j])
        out.append(KeyInequalityRecord(idx, tuple(float(c) for c in x), wv, lhs, rhs, I,
                                       lhs <= rhs + tol))
    return out


def key_inequality_case(rng: np.random.Generator, n: Optional[int] = None):
    """Random test case with a prescribed negative minimum of ``w``.

    ``u`` is a bump even about a random half-grid plane plus a positive dent
    supported inside ``Sigma``; on ``Sigma`` this gives ``w = -dent``.
    Returns ``(u, axis, lam, alpha)``.
    """
    n = int(rng.integers(1, 3)) if n is None else n
    N = 65 if n == 1 else 33
    dom = Domain.cube(n, -1.0, 1.0, N)
    h = dom.spacing
    axis = int(rng.integers(0, n))
    # plane on the half-grid in [-0.25, 0.25]
    lam = -1.0 + h / 2 * int(rng.integers(round(0.75 * 2 / h), round(1.25 * 2 / h) + 1))
    X = dom.coords()
    p_even = float(rng.choice([3.0, 4.0]))
    radius = float(rng.uniform(0.6, 0.9))
    amp = float(rng.uniform(0.5, 2.0))
    s2 = sum((x - (lam if k == axis else 0.0)) ** 2 for k, x in enumerate(X)) / radius**2
    even = amp * np.maximum(1 - s2, 0) ** p_even
    r_dent = float(rng.uniform(0.1, 0.25))
    gap = float(rng.uniform(0.05, 0.3))
    center = [float(rng.uniform(-0.3, 0.3)) for _ in range(n)]
    center[axis] = lam - gap - r_dent
    t2 = sum((x - c) ** 2 for x, c in zip(X, center)) / r_dent**2
    dent = float(rng.uniform(0.05, 0.5)) * np.maximum(1 - t2, 0) ** 3
    alpha = float(rng.choice([0.5, 1.0, 1.5]))
    return GridFunction(dom, even + dent), axis, lam, alpha


# --- narrow region and decay bounds -----------------------------------------------------

def _chain_constant(n: int, alpha: float) -> float:
    """``∫_0^1 |S^{n-2}| t^{n-2} (1+t^2)^{-(n+alpha)/2} dt`` (1 for n = 1)."""
    if n == 1:
        return 1.0
    t, w = np.polynomial.legendre.leggauss(32)
    t = (t + 1) / 2
    area = 2 * math.pi ** ((n - 1) / 2) / math.gamma((n - 1) / 2)
    return float(np.sum(w / 2 * area * t ** (n - 2) * (1 + t**2) ** (-(n + alpha) / 2)))


@dataclass
class NarrowRegionResult:
    delta: float
    distance: float
    integral: float
    chain_bound: float            # C_n (delta^{-alpha} - 1) / alpha
    c: float                      # calibrated constant of c / delta^alpha
    bound: float                  # c / delta^alpha
    divergence_near: bool

    @property
    def passed(self) -> bool:
        return self.integral >= self.chain_bound >= self.bound

    @property
    def margin(self) -> float:
        return self.integral - self.bound


def narrow_region_bound(x0, lam: float, delta: float, k: KernelParams, axis: int = 0,
                        delta_max: float = 0.25, cap: float = 1e-12) -> NarrowRegionResult:
    """Kernel integral at a point of the strip ``{lam - delta < x_axis <= lam}``.

    The lower bound is the chain estimate over the slab
    ``{delta < y_1 - x_1 < 1, |y' - x'| < 1}`` beyond the plane,
    ``C_n (delta^{-alpha} - 1)/alpha``, and its consequence ``c/delta^alpha``
    with ``c = C_n (1 - delta_max^alpha)/alpha``, valid for ``delta <= delta_max``.
    A point on the plane gives a divergent integral; its distance is capped at
    ``cap`` and ``divergence_near`` is set.

    Raises
    ------
    BadStrip
        If ``x0`` is outside the strip or ``delta`` is not in ``(0, delta_max]``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if len(x0) != k.n:
        raise ValueError("x0 has the wrong dimension")
    if not 0 < delta <= delta_max:
        raise BadStrip(f"delta={delta} outside (0, {delta_max}]")
    d = lam - x0[axis]
    if not (-1e-15 <= d < delta):
        raise BadStrip(f"x0 is not in the strip {{{lam - delta} < x < {lam}}}")
    near = d < cap
    I = sigma_integral(max(d, cap), k.n, k.alpha)
    Cn = _chain_constant(k.n, k.alpha)
    chain = Cn * (delta ** (-k.alpha) - 1) / k.alpha
    c = Cn * (1 - delta_max**k.alpha) / k.alpha
    return NarrowRegionResult(delta, d, I, chain, c, c * delta ** (-k.alpha), bool(near))


def narrow_region_ladder(k: KernelParams, deltas: Sequence[float] = (0.2, 0.1, 0.05, 0.025),
                         lam: float = 0.0, position: float = 0.5):
    """Narrow-region results with ``x0`` at relative depth ``position`` in each strip,
    and the least-squares slope of ``log I`` against ``log delta``."""
    res = []
    for dl in deltas:
        x0 = np.zeros(k.n)
        x0[0] = lam - position * dl
        res.append(narrow_region_bound(x0, lam, dl, k))
    slope = float(np.polyfit(np.log(deltas), np.log([r.integral for r in res]), 1)[0])
    return res, slope


@dataclass
class DecayBoundResult:
    x0: tuple
    integral: float               # ∫_Sigma |x0 - y^lam|^{-n-alpha} dy
    ball_integral: float          # the same kernel over B_{|x0|}(x1)
    bound: float                  # omega_n / (4^{n+alpha} |x0|^alpha)

    @property
    def passed(self) -> bool:
        return self.integral >= self.ball_integral >= self.bound

    @property
    def margin(self) -> float:
        return self.integral - self.bound


def _ball_kernel_integral(x0: np.ndarray, center: np.ndarray, R: float, alpha: float) -> float:
    n = len(x0)
    if n == 1:
        a = abs(center[0] - x0[0])
        return ((a - R) ** (-alpha) - (a + R) ** (-alpha)) / alpha
    # polar coordinates about the ball centre; the integrand is smooth there
    rr, wr = np.polynomial.legendre.leggauss(48)
    tt, wt = np.polynomial.legendre.leggauss(96)
    r = (rr + 1) / 2 * R
    th = (tt + 1) * np.pi
    Rg, Tg = np.meshgrid(r, th, indexing="ij")
    y0 = center[0] + Rg * np.cos(Tg) - x0[0]
    y1 = center[1] + Rg * np.sin(Tg) - x0[1]
    f = (y0**2 + y1**2) ** (-(2 + alpha) / 2) * Rg
    return float(np.einsum("i,j,ij->", wr * R / 2, wt * np.pi, f))


def decay_bound(x0, lam: float, k: KernelParams, axis: int = 0) -> DecayBoundResult:
    """Compare the Sigma kernel integral at a far point with ``omega_n/(4^{n+alpha}|x0|^alpha)``.

    The intermediate quantity is the kernel integral over the ball
    ``B_{|x0|}(x1)`` with ``x1 = x0 + 3|x0| e_axis``, which lies beyond the plane.

    Raises
    ------
    BadGeometry
        Unless ``x0`` is in ``Sigma`` and ``|x0| >= 2|lam| + 1``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if len(x0) != k.n:
        raise ValueError("x0 has the wrong dimension")
    r0 = float(np.linalg.norm(x0))
    if not x0[axis] < lam or r0 < 2 * abs(lam) + 1:
        raise BadGeometry("need x0 in Sigma with |x0| >= 2|lambda| + 1")
    x1 = x0.copy()
    x1[axis] += 3 * r0
    I = sigma_integral(lam - x0[axis], k.n, k.alpha)
    ball = _ball_kernel_integral(x0, x1, r0, k.alpha)
    bound = unit_ball_volume(k.n) / (4 ** (k.n + k.alpha) * r0**k.alpha)
    return DecayBoundResult(tuple(float(c) for c in x0), I, ball, bound)


# --- coefficient field and its decay ---------------------------------------------------

@dataclass
class CoefficientField:
    """``c(x)`` on Sigma nodes with ``F(u_lam) - F(u) + c w = 0``.

    For an equation ``F(u) = f(u)`` this is
    ``c = -(f(u) - f(u_lam)) / (u - u_lam)``, using ``-f'(u)`` where
    ``|u - u_lam| < 1e-12``.  Values off Sigma are 0.
    """

    values: np.ndarray
    mask: np.ndarray
    domain: Domain
    lower_bound: float
    fallback_nodes: int


def coefficient_field(u: GridFunction, r: PlaneReflection, rhs: Callable,
                      fd_step: float = 1e-6) -> CoefficientField:
    a = u.values
    b = r.u_lam.values
    diff = a - b
    small = np.abs(diff) < 1e-12
    safe = np.where(small, 1.0, diff)
    quot = (rhs(a) - rhs(b)) / safe
    deriv = (rhs(a + fd_step) - rhs(a - fd_step)) / (2 * fd_step)
    c = -np.where(small, deriv, quot)
    c = np.where(r.sigma, c, 0.0)
    if not np.all(np.isfinite(c)):
        raise FloatingPointError("non-finite coefficient")
    lb = float(np.min(c[r.sigma])) if r.sigma.any() else 0.0
    return CoefficientField(c, r.sigma.copy(), u.domain, lb, int(np.sum(small & r.sigma)))


@dataclass
class DecayRateReport:
    passed: bool
    exponent: float               # fitted growth exponent of -|x|^alpha c on the outer nodes
    liminf_proxy: float           # min of |x|^alpha c over the outer nodes
    radii: np.ndarray
    scaled: np.ndarray            # |x|^alpha c(x) at those radii
    note: str = ""


def decay_rate_check(cfield: CoefficientField, alpha: float, outer: float = 0.2,
                     exponent_tol: float = 0.1, tol: float = 1e-12) -> DecayRateReport:
    """Boundedness test for ``|x|^alpha c(x)`` along the far field of Sigma.

    Uses the nodes of Sigma in the outer ``outer`` fraction of the sampled
    radii.  If ``|x|^alpha c >= -tol`` there, the check passes.  Otherwise the
    growth exponent ``p`` of ``-|x|^alpha c ~ |x|^p`` is fitted by least
    squares on the negative values; the check passes iff ``p <= exponent_tol``
    (bounded, as opposed to growing without bound).  ``liminf_proxy`` is the
    minimum of the scaled values over the outer nodes.
    """
    pts = cfield.domain.points()[cfield.mask.ravel()]
    c = cfield.values[cfield.mask]
    rad = np.linalg.norm(pts, axis=1)
    cut = rad.max() - outer * (rad.max() - rad.min())
    sel = rad >= cut
    radii, scaled = rad[sel], rad[sel] ** alpha * c[sel]
    order = np.argsort(radii)
    radii, scaled = radii[order], scaled[order]
    proxy = float(scaled.min()) if scaled.size else 0.0
    if proxy >= -tol:
        return DecayRateReport(True, -np.inf, proxy, radii, scaled, "nonnegative far field")
    neg = scaled < -tol
    if np.sum(neg) < 3 or np.ptp(np.log(radii[neg])) == 0:
        return DecayRateReport(False, np.nan, proxy, radii, scaled, "too few far-field samples")
    p = float(np.polyfit(np.log(radii[neg]), np.log(-scaled[neg]), 1)[0])
    return DecayRateReport(p <= exponent_tol, p, proxy, radii, scaled)


# --- plane sweep and symmetry ------------------------------------------------------------

@dataclass
class SweepRecord:
    lam: float
    min_w: float
    argmin: Optional[tuple]
    key_inequality: list = field(default_factory=list)

    @property
    def key_inequality_holds(self) -> bool:
        return all(r.holds for r in self.key_inequality)


@dataclass
class SweepResult:
    axis: int
    lambda0: float
    records: list
    tol: float

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])


def sweep_planes(u: GridFunction, axis: int = 0, tol: float = 1e-10,
                 lam_min: Optional[float] = None, lam_max: Optional[float] = None,
                 G: Optional[Nonlinearity] = None, k: Optional[KernelParams] = None,
                 q: QuadratureConfig = QuadratureConfig()) -> SweepResult:
    """Move the plane over the half-grid planes from the left edge to ``lam_max``.

    ``lam_max`` defaults to the box centre (the origin for a centred ball).
    ``lambda0`` is the last visited plane such that ``min w >= -tol`` on Sigma
    for it and every earlier plane.  When ``G`` and ``k`` are given, the key
    inequality is evaluated at every negative minimum beyond ``tol``.
    """
    dom = u.domain
    lo, hi = dom.lo[axis], dom.hi[axis]
    lam_min = lo + dom.h[axis] / 2 if lam_min is None else lam_min
    lam_max = (lo + hi) / 2 if lam_max is None else lam_max
    step = dom.h[axis] / 2
    k0 = int(math.ceil((lam_min - lo) / step - 1e-9))
    k1 = int(math.floor((lam_max - lo) / step + 1e-9))
    records = []
    lambda0 = None
    ok = True
    for j in range(k0, k1 + 1):
        lam = lo + j * step
        r = reflect(u, axis, lam)
        if r.sigma.any():
            wv = np.where(r.sigma, r.w.values, np.inf)
            i = np.unravel_index(int(np.argmin(wv)), wv.shape)
            mw, am = float(wv[i]), tuple(int(t) for t in i)
        else:
            mw, am = 0.0, None
        rec = SweepRecord(lam, mw, am)
        if G is not None and k is not None and mw < -tol:
            rec.key_inequality = check_key_inequality(u, r, G, k, q)
        records.append(rec)
        ok = ok and mw >= -tol
        if ok:
            lambda0 = lam
    if lambda0 is None:
        lambda0 = lam_min - step
    return SweepResult(axis, float(lambda0), records, tol)


def _symmetry_images(values: np.ndarray) -> list:
    """The grid function under the symmetries of the square grid (D4 in 2D)."""
    if values.ndim == 1:
        return [values[::-1]]
    imgs = []
    for t in (values, values.T):
        imgs += [t, t[::-1, :], t[:, ::-1], t[::-1, ::-1]]
    return imgs[1:]


def asymmetry_metric(u: GridFunction) -> float:
    """``max |u(x) - u(g x)|`` over the symmetries ``g`` of the centred square grid.

    These are exactly the node pairs at equal distance from the centre that a
    rotation-invariant discretisation must treat identically.
    """
    dom = u.domain
    if any(abs(a + b) > 1e-12 for a, b in zip(dom.lo, dom.hi)) or len(set(dom.shape)) != 1:
        raise ValueError("asymmetry metric needs a centred cubic grid")
    return float(max(np.max(np.abs(u.values - g)) for g in _symmetry_images(u.values)))


def equal_radius_spread(u: GridFunction, mask=None, rtol: float = 1e-12) -> float:
    """``max |u(x) - u(x')|`` over all node pairs with ``|x| = |x'|``.

    Includes pairs not related by a grid symmetry, whose values differ by the
    discretisation error of the rotation-invariant problem.
    """
    pts = u.domain.points()
    vals = u.values.ravel()
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).ravel()
        pts, vals = pts[keep], vals[keep]
    r2 = np.sum(pts**2, axis=1)
    scale = max(float(r2.max()), 1e-300)
    key = np.round(r2 / scale / rtol).astype(np.int64)
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]
    bounds = np.flatnonzero(np.diff(key)) + 1
    spread = 0.0
    for grp in np.split(vals, bounds):
        if len(grp) > 1:
            spread = max(spread, float(np.ptp(grp)))
    return spread


def monotonicity_violation(u: GridFunction) -> float:
    """Largest increase of ``u`` moving away from the centre along grid lines.

    Every row and column is scanned outward from the centre on both sides;
    for a radially decreasing function the result is ``<= 0`` up to rounding.
    """
    dom = u.domain
    centre = [(a + b) / 2 for a, b in zip(dom.lo, dom.hi)]
    worst = 0.0
    for axis in range(dom.ndim):
        x = dom.axes()[axis]
        v = np.moveaxis(u.values, axis, 0)
        right = x >= centre[axis] - 1e-12
        left = x <= centre[axis] + 1e-12
        inc_r = np.diff(v[right], axis=0)              # moving outward to the right
        inc_l = -np.diff(v[left], axis=0)              # moving outward to the left
        for inc in (inc_r, inc_l):
            if inc.size:
                worst = max(worst, float(inc.max()))
    return worst
