"""Scalar nonlinearities G entering the operator, with sampled hypothesis checks."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

ScalarFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_PROBE_RANGE = 10.0
N_PROBES = 401


class HypothesisViolation(ValueError):
    """Raised when a candidate G fails one of the structural checks.

    ``which`` is one of ``"G(0)≠0"``, ``"G′<c0"`` or ``"derivative mismatch"``
    and ``at`` is the offending probe point.
    """

    def __init__(self, which: str, at: float, detail: str = ""):
        self.which = which
        self.at = float(at)
        msg = f"{which} at t={self.at:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class Nonlinearity:
    """A validated nonlinearity G with G(0)=0 and G' >= c0 on the probe set.

    Instances are immutable; all callables are vectorised over numpy arrays.
    Use :func:`make_nonlinearity` rather than the constructor so the checks run.
    """

    g: ScalarFn
    g_prime: ScalarFn
    g_double_prime: Optional[ScalarFn]
    c0: float
    probe_range: float = DEFAULT_PROBE_RANGE
    name: str = "custom"

    def __call__(self, t):
        return self.g(t)

    @property
    def has_second_derivative(self) -> bool:
        return self.g_double_prime is not None

    def probes(self) -> np.ndarray:
        return np.linspace(-self.probe_range, self.probe_range, N_PROBES)


def _as_vectorised(fn: ScalarFn) -> ScalarFn:
    def wrapped(t):
        t = np.asarray(t, dtype=float)
        out = np.asarray(fn(t), dtype=float)
        if out.shape != t.shape:
            out = np.broadcast_to(out, t.shape).copy()
        return out

    wrapped.__wrapped__ = fn
    return wrapped


def make_nonlinearity(
    g: ScalarFn,
    g_prime: ScalarFn,
    g_double_prime: Optional[ScalarFn] = None,
    c0: float = 1.0,
    probe_range: float = DEFAULT_PROBE_RANGE,
    name: str = "custom",
) -> Nonlinearity:
    """Build a :class:`Nonlinearity` after checking its hypotheses on probes.

    The checks are sampled on ``N_PROBES`` uniform points of
    ``[-probe_range, probe_range]``: ``|G(0)| <= 1e-14``, ``G'(t) >= c0`` and
    agreement of ``g_prime`` with a central difference of ``g`` to relative
    ``1e-6``.

    Raises
    ------
    ValueError
        If ``c0`` or ``probe_range`` is not positive.
    HypothesisViolation
        On the first failed check, carrying the offending probe point.
    """
    if not c0 > 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    if not probe_range > 0:
        raise ValueError(f"probe_range must be positive, got {probe_range}")
    g = _as_vectorised(g)
    g_prime = _as_vectorised(g_prime)
    if g_double_prime is not None:
        g_double_prime = _as_vectorised(g_double_prime)

    g0 = float(g(np.array(0.0)))
    if abs(g0) > 1e-14:
        raise HypothesisViolation("G(0)≠0", 0.0, f"G(0)={g0:.3e}")

    t = np.linspace(-probe_range, probe_range, N_PROBES)
    dg = g_prime(t)
    bad = np.flatnonzero(~(dg >= c0))
    if bad.size:
        # report the worst offender, not just the first
        k = bad[np.argmin(dg[bad])]
        raise HypothesisViolation("G′<c0", t[k], f"G'={dg[k]:.6g} < c0={c0}")

    step = 1e-5 * max(1.0, probe_range)
    fd = (g(t + step) - g(t - step)) / (2 * step)
    rel = np.abs(fd - dg) / np.maximum(np.abs(dg), 1.0)
    bad = np.flatnonzero(rel > 1e-6)
    if bad.size:
        k = bad[np.argmax(rel[bad])]
        raise HypothesisViolation("derivative mismatch", t[k], f"rel err {rel[k]:.2e}")

    return Nonlinearity(g, g_prime, g_double_prime, float(c0), float(probe_range), name)


# --- presets -----------------------------------------------------------------

def identity(probe_range: float = DEFAULT_PROBE_RANGE) -> Nonlinearity:
    return make_nonlinearity(
        lambda t: t, lambda t: np.ones_like(t), lambda t: np.zeros_like(t),
        c0=1.0, probe_range=probe_range, name="identity",
    )


def cubic(eps: float, probe_range: float = DEFAULT_PROBE_RANGE) -> Nonlinearity:
    """G(t) = t + eps*t^3; G' >= 1 for eps >= 0."""
    if eps < 0:
        raise ValueError("cubic(eps) needs eps >= 0 for a uniform derivative floor")
    return make_nonlinearity(
        lambda t: t + eps * t**3,
        lambda t: 1 + 3 * eps * t**2,
        lambda t: 6 * eps * t,
        c0=1.0, probe_range=probe_range, name=f"cubic({eps:g})",
    )


def sine(eps: float, probe_range: float = DEFAULT_PROBE_RANGE) -> Nonlinearity:
    """G(t) = t + eps*sin(t); G' >= 1 - eps."""
    if not 0 <= eps < 1:
        raise ValueError("sine(eps) needs 0 <= eps < 1")
    return make_nonlinearity(
        lambda t: t + eps * np.sin(t),
        lambda t: 1 + eps * np.cos(t),
        lambda t: -eps * np.sin(t),
        c0=1.0 - eps if eps > 0 else 1.0, probe_range=probe_range, name=f"sine({eps:g})",
    )


def quadratic(b: float, probe_range: float = 0.4) -> Nonlinearity:
    """G(t) = t + b*t^2.

    G' = 1 + 2bt is only bounded below near 0, so this preset is meant for the
    small-amplitude limit computations.  The default probe range keeps G' >= 0.2
    for |b| <= 1; ``c0`` is the minimum of G' over the probes.
    """
    c0 = 1.0 - 2.0 * abs(b) * probe_range
    return make_nonlinearity(
        lambda t: t + b * t**2,
        lambda t: 1 + 2 * b * t,
        lambda t: np.full_like(t, 2.0 * b),
        c0=c0, probe_range=probe_range, name=f"quadratic({b:g})",
    )


_PRESETS: dict[str, Callable[..., Nonlinearity]] = {
    "identity": identity,
    "cubic": cubic,
    "sine": sine,
    "quadratic": quadratic,
}

_DEFAULT_PARAM = {"cubic": 0.1, "sine": 0.5, "quadratic": 1.0}

_NAME_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$")


def builtin_library() -> dict[str, Nonlinearity]:
    """Named presets at their default parameters."""
    out = {"identity": identity()}
    for key, p in _DEFAULT_PARAM.items():
        nl = _PRESETS[key](p)
        out[nl.name] = nl
    return out


def get_nonlinearity(spec: str, probe_range: Optional[float] = None) -> Nonlinearity:
    """Look up a preset by name, e.g. ``"identity"``, ``"cubic(0.1)"``.

    The grammar is an identifier optionally followed by one parenthesised
    decimal parameter.  Unknown names raise ``KeyError``.
    """
    m = _NAME_RE.match(spec)
    if m is None:
        raise KeyError(f"malformed nonlinearity name {spec!r}")
    key, param = m.group(1), m.group(2)
    if key not in _PRESETS:
        raise KeyError(f"unknown nonlinearity {key!r}; known: {sorted(_PRESETS)}")
    kwargs = {} if probe_range is None else {"probe_range": probe_range}
    if key == "identity":
        if param is not None:
            raise KeyError("identity takes no parameter")
        return identity(**kwargs)
    value = float(param) if param is not None else _DEFAULT_PARAM[key]
    return _PRESETS[key](value, **kwargs)
