"""Regular grids over a box, grid functions with an explicit exterior rule.

A :class:`GridFunction` is a sample of ``u`` at the nodes of a box together
with the rule that defines ``u`` outside the box: either identically zero
(Dirichlet data) or a closed-form tail.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

MIN_NODES = 8


class NonFiniteSample(ValueError):
    def __init__(self, node):
        self.node = tuple(int(i) for i in node)
        super().__init__(f"non-finite sample at node {self.node}")


class BoundaryNode(ValueError):
    pass


class NotInLAlpha(ValueError):
    pass


# --- regions -------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    radius: float = 1.0
    center: tuple = ()


@dataclass(frozen=True)
class HalfSpace:
    axis: int
    level: float = 0.0


@dataclass(frozen=True)
class Box:
    pass


Region = Union[Ball, HalfSpace, Box]


@dataclass(frozen=True)
class Domain:
    """Box ``[lo, hi]`` in dimension 1 or 2 sampled with ``shape`` nodes per axis."""

    lo: tuple
    hi: tuple
    shape: tuple
    region: Region = field(default_factory=Box)

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        shape = tuple(int(v) for v in np.atleast_1d(self.shape))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)
        if not (len(lo) == len(hi) == len(shape)) or len(lo) not in (1, 2):
            raise ValueError("domain must be 1- or 2-dimensional with matching lo/hi/shape")
        if any(s < MIN_NODES for s in shape):
            raise ValueError(f"need at least {MIN_NODES} nodes per axis, got {shape}")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("box must have hi > lo on every axis")
        region = self.region
        if isinstance(region, Ball):
            c = tuple(float(v) for v in region.center) or (0.0,) * self.ndim
            region = Ball(float(region.radius), c)
            object.__setattr__(self, "region", region)
            if region.radius <= 0 or len(c) != self.ndim:
                raise ValueError("bad ball region")
            for k in range(self.ndim):
                if c[k] - region.radius < lo[k] - 1e-12 or c[k] + region.radius > hi[k] + 1e-12:
                    raise ValueError("box must contain the ball region")
        elif isinstance(region, HalfSpace):
            if not 0 <= region.axis < self.ndim:
                raise ValueError("half-space axis out of range")
            if not lo[region.axis] - 1e-12 <= region.level < hi[region.axis]:
                raise ValueError("half-space level must lie in the box")

    @classmethod
    def cube(cls, n: int, lo: float, hi: float, nodes: int, region: Region = None) -> "Domain":
        return cls((lo,) * n, (hi,) * n, (nodes,) * n, region if region is not None else Box())

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple:
        return tuple((b - a) / (s - 1) for a, b, s in zip(self.lo, self.hi, self.shape))

    @property
    def spacing(self) -> float:
        """Common grid spacing; raises if the axes differ."""
        h = self.h
        if max(h) - min(h) > 1e-12 * max(h):
            raise ValueError(f"anisotropic spacing {h} is not supported by the operator")
        return h[0]

    @property
    def diameter(self) -> float:
        return float(np.hypot.reduce(np.subtract(self.hi, self.lo)))

    def axes(self) -> list:
        return [np.linspace(a, b, s) for a, b, s in zip(self.lo, self.hi, self.shape)]

    def coords(self) -> tuple:
        """Node coordinate arrays, each of shape ``self.shape`` (``ij`` indexing)."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """All node coordinates as an array of shape ``(N, ndim)`` in row-major order."""
        return np.stack([c.ravel() for c in self.coords()], axis=-1)

    def node_point(self, index) -> np.ndarray:
        index = np.atleast_1d(index)
        return np.array([a + i * h for a, i, h in zip(self.lo, index, self.h)])

    def node_index(self, point, tol: float = 1e-9) -> tuple:
        """Index of the node at ``point``; raises ``ValueError`` if off-grid."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        idx = []
        for k in range(self.ndim):
            t = (point[k] - self.lo[k]) / self.h[k]
            i = int(round(t))
            if abs(t - i) > tol or not 0 <= i < self.shape[k]:
                raise ValueError(f"{point.tolist()} is not a grid node")
            idx.append(i)
        return tuple(idx)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.ones(points.shape[0], dtype=bool)
        for k in range(self.ndim):
            span = tol * (self.hi[k] - self.lo[k])
            inside &= (points[:, k] >= self.lo[k] - span) & (points[:, k] <= self.hi[k] + span)
        return inside

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.ndim):
            sl = [slice(None)] * self.ndim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask

    def region_mask(self) -> np.ndarray:
        """Nodes strictly inside the tagged region (and off the box boundary)."""
        X = self.coords()
        r = self.region
        if isinstance(r, Ball):
            r2 = sum((x - c) ** 2 for x, c in zip(X, r.center))
            mask = r2 < r.radius**2 * (1 - 1e-12)
        elif isinstance(r, HalfSpace):
            mask = X[r.axis] > r.level + 1e-12 * self.h[r.axis]
        else:
            mask = np.ones(self.shape, dtype=bool)
        return mask & ~self.boundary_mask()

    def refined(self, factor: int = 2) -> "Domain":
        shape = tuple((s - 1) * factor + 1 for s in self.shape)
        return Domain(self.lo, self.hi, shape, self.region)

    def reflected(self, axis: int, lam: float) -> "Domain":
        lo, hi = list(self.lo), list(self.hi)
        lo[axis], hi[axis] = 2 * lam - self.hi[axis], 2 * lam - self.lo[axis]
        return Domain(tuple(lo), tuple(hi), self.shape, Box())


# --- exterior rules ------------------------------------------------------------

@dataclass(frozen=True)
class Zero:
    """``u = 0`` outside the box."""

    name = "zero"

    def __call__(self, *coords):
        return np.zeros(np.broadcast(*coords).shape)


@dataclass(frozen=True)
class AnalyticTail:
    """``u = func(*coords)`` outside the box.

    ``name`` is needed only to write the function to a grid file; it must then
    be resolvable with :func:`named_function`.
    """

    func: Callable
    name: str = ""

    def __call__(self, *coords):
        return np.asarray(self.func(*coords), dtype=float) * np.ones(np.broadcast(*coords).shape)


Exterior = Union[Zero, AnalyticTail]


# --- named closed-form functions (file format and config) ----------------------

def _r2(coords):
    return sum(np.asarray(c, dtype=float) ** 2 for c in coords)


def torsion(s: float = 0.5) -> Callable:
    """``(1 - |x|^2)_+^s``."""
    return lambda *x: np.maximum(1.0 - _r2(x), 0.0) ** s


def bump(p: float = 4.0) -> Callable:
    """``(1 - |x|^2)_+^p``; C^{p-1} with compact support."""
    return lambda *x: np.maximum(1.0 - _r2(x), 0.0) ** p


def algebraic(gamma: float) -> Callable:
    """``(1 + |x|^2)^(-gamma/2)``."""
    return lambda *x: (1.0 + _r2(x)) ** (-gamma / 2)


def constant(c: float) -> Callable:
    return lambda *x: np.full(np.broadcast(*x).shape, float(c))


_NAMED = {"torsion": torsion, "bump": bump, "algebraic": algebraic, "const": constant}
_NAMED_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*\(\s*([-+0-9.eE]+)\s*\)\s*$")


def named_function(name: str) -> Callable:
    m = _NAMED_RE.match(name)
    if m is None or m.group(1) not in _NAMED:
        raise KeyError(f"unknown closed-form function {name!r}; known: {sorted(_NAMED)}")
    return _NAMED[m.group(1)](float(m.group(2)))


def named_tail(name: str) -> AnalyticTail:
    return AnalyticTail(named_function(name), name)


# --- grid functions ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridFunction:
    domain: Domain
    values: np.ndarray
    exterior: Exterior = field(default_factory=Zero)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.domain.shape)
        bad = np.argwhere(~np.isfinite(vals))
        if bad.size:
            raise NonFiniteSample(bad[0])
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def ndim(self) -> int:
        return self.domain.ndim

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.domain, values, self.exterior)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        ext = self.exterior
        if not (isinstance(ext, Zero) and isinstance(other.exterior, Zero)):
            f, g = self.exterior, other.exterior
            ext = AnalyticTail(lambda *x: f(*x) + g(*x))
        return GridFunction(self.domain, self.values + other.values, ext)

    def tail_integral(self, alpha: float, radius: float = 1e4) -> float:
        """Weighted exterior mass ``∫_{outside box} |u|/(1+|x|^{n+alpha}) dx``.

        Zero for a zero exterior.  For an analytic tail the integral is taken
        coarsely over the annulus between the box and ``radius`` in polar
        coordinates plus a power-law extrapolation beyond it.

        Raises
        ------
        NotInLAlpha
            If the tail grows like ``|x|^p`` with ``p >= alpha`` (measured
            between ``radius/10`` and ``radius``) or the integral is not finite.
        """
        if isinstance(self.exterior, Zero):
            return 0.0
        n = self.ndim
        dom = self.domain
        rbox = float(np.max(np.abs(np.concatenate([dom.lo, dom.hi]))))

        def weight(r, *x):
            return np.abs(self.exterior(*x)) / (1.0 + r ** (n + alpha))

        def sup_at(r):
            if n == 1:
                return float(np.abs(self.exterior(np.array([r, -r]))).max())
            th = np.linspace(0, 2 * np.pi, 65)
            return float(np.abs(self.exterior(r * np.cos(th), r * np.sin(th))).max())

        near, far = sup_at(radius / 10), sup_at(radius)
        if near > 0 and far > 0 and np.log10(far / near) >= alpha:
            raise NotInLAlpha(f"exterior tail grows like |x|^{np.log10(far / near):.3g}, "
                              f"not integrable against (1+|x|^(n+{alpha}))^-1")
        if n == 1:
            total = 0.0
            for a, sgn in ((dom.hi[0], 1.0), (dom.lo[0], -1.0)):
                val, _ = integrate.quad(lambda r: weight(abs(r), r), a, sgn * radius, limit=200)
                total += abs(val)
        else:
            def radial(r):
                th = np.linspace(0, 2 * np.pi, 129)[:-1]
                x, y = r * np.cos(th), r * np.sin(th)
                outside = ~dom.contains(np.stack([x, y], axis=-1))
                vals = np.where(outside, weight(r, x, y), 0.0)
                return r * vals.mean() * 2 * np.pi

            # the box boundary is crossed between rbox_in and rbox; beyond, the
            # integrand is smooth
            rbox_in = float(np.min(np.abs(np.concatenate([dom.lo, dom.hi]))))
            corner = rbox * np.sqrt(2)
            # (the sampled angular mean is piecewise constant in r there, so a
            # fixed rule is used instead of an adaptive one)
            t, wts = np.polynomial.legendre.leggauss(64)
            r = rbox_in + (corner - rbox_in) * (t + 1) / 2
            inner = (corner - rbox_in) / 2 * sum(wi * radial(ri) for wi, ri in zip(wts, r))
            outer, _ = integrate.quad(radial, corner, radius, limit=200)
            total = inner + outer
        # beyond `radius`: |u| <= far, integrand <= far * r^{-1-alpha} in polar form
        total += far * (2 if n == 1 else 2 * np.pi) * radius ** (-alpha) / alpha
        if not np.isfinite(total):
            raise NotInLAlpha("exterior tail is not integrable against (1+|x|^{n+alpha})^-1")
        return float(total)


def sample(domain: Domain, func: Callable, exterior: Exterior = None) -> GridFunction:
    """Evaluate ``func(*coords)`` at every node of ``domain``."""
    vals = np.asarray(func(*domain.coords()), dtype=float)
    vals = np.broadcast_to(vals, domain.shape)
    return GridFunction(domain, vals, exterior if exterior is not None else Zero())


def _interpolator(f: GridFunction) -> RegularGridInterpolator:
    return RegularGridInterpolator(f.domain.axes(), f.values, method="linear", bounds_error=False)


def interpolate(f: GridFunction, x) -> Union[float, np.ndarray]:
    """Multilinear interpolation inside the box, the exterior rule outside.

    ``x`` is one point (shape ``(n,)``, or a scalar in 1-D) or an array of
    points of shape ``(m, n)``; the result is a float or an array of length m.
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 0 or (pts.ndim == 1 and pts.shape[0] == f.ndim and f.ndim > 1) or (
        pts.ndim == 1 and f.ndim == 1 and pts.shape[0] == 1)
    pts = pts.reshape(-1, f.ndim)
    inside = f.domain.contains(pts)
    out = np.empty(pts.shape[0])
    if inside.any():
        p = np.clip(pts[inside], f.domain.lo, f.domain.hi)
        out[inside] = _interpolator(f)(p)
    if (~inside).any():
        q = pts[~inside]
        out[~inside] = f.exterior(*[q[:, k] for k in range(f.ndim)])
    return float(out[0]) if single else out


def _check_interior(f: GridFunction, index) -> tuple:
    index = tuple(int(i) for i in np.atleast_1d(index))
    if len(index) != f.ndim:
        raise ValueError("index dimension mismatch")
    for i, s in zip(index, f.domain.shape):
        if not 1 <= i <= s - 2:
            raise BoundaryNode(f"node {index} has no full stencil")
    return index


def discrete_gradient(f: GridFunction, index) -> np.ndarray:
    """Second-order central difference gradient at an interior node."""
    index = _check_interior(f, index)
    g = np.empty(f.ndim)
    for k, h in enumerate(f.domain.h):
        ip, im = list(index), list(index)
        ip[k] += 1
        im[k] -= 1
        g[k] = (f.values[tuple(ip)] - f.values[tuple(im)]) / (2 * h)
    return g


def discrete_laplacian(f: GridFunction, index) -> float:
    """Standard (2n+1)-point Laplacian at an interior node."""
    index = _check_interior(f, index)
    u0 = f.values[index]
    lap = 0.0
    for k, h in enumerate(f.domain.h):
        ip, im = list(index), list(index)
        ip[k] += 1
        im[k] -= 1
        lap += (f.values[tuple(ip)] - 2 * u0 + f.values[tuple(im)]) / h**2
    return float(lap)


# --- text file format ----------------------------------------------------------

def _fmt_list(vals: Sequence[float]) -> str:
    return ",".join(repr(float(v)) for v in vals)


def write_grid(f: GridFunction, path) -> None:
    """Write ``f`` in the ``nonloc-grid v1`` text format."""
    if isinstance(f.exterior, Zero):
        ext = "zero"
    elif f.exterior.name:
        ext = f"tail:{f.exterior.name}"
    else:
        raise ValueError("an analytic tail needs a name to be written to file")
    d = f.domain
    header = (f"nonloc-grid v1 dim={d.ndim} h={_fmt_list(d.h)} lo={_fmt_list(d.lo)} "
              f"hi={_fmt_list(d.hi)} exterior={ext}")
    body = "\n".join(f"{v:.17g}" for v in f.values.ravel(order="C"))
    try:
        with open(path, "w") as fh:
            fh.write(header + "\n" + body + "\n")
    except OSError as exc:
        raise OSError(f"cannot write grid file {path}: {exc}") from exc


def read_grid(path, region: Region = None) -> GridFunction:
    with open(path) as fh:
        header = fh.readline().split()
        if header[:2] != ["nonloc-grid", "v1"]:
            raise ValueError(f"{path}: not a nonloc-grid v1 file")
        meta = dict(item.split("=", 1) for item in header[2:])
        vals = np.array([float(line) for line in fh if line.strip()])
    n = int(meta["dim"])
    h = [float(v) for v in meta["h"].split(",")]
    lo = [float(v) for v in meta["lo"].split(",")]
    hi = [float(v) for v in meta["hi"].split(",")]
    shape = tuple(int(round((b - a) / s)) + 1 for a, b, s in zip(lo, hi, h))
    if len(shape) != n or math.prod(shape) != vals.size:
        raise ValueError(f"{path}: header does not match {vals.size} values")
    ext_s = meta.get("exterior", "zero")
    ext = Zero() if ext_s == "zero" else named_tail(ext_s.split(":", 1)[1])
    dom = Domain(tuple(lo), tuple(hi), shape, region if region is not None else Box())
    return GridFunction(dom, vals.reshape(shape), ext)
