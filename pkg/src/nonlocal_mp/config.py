"""``key = value`` run configuration with typed, range-checked fields."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional


class UnknownKey(KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown configuration key {name!r}")


class ConfigTypeError(TypeError):
    """A value has the wrong type or is out of range for ``key``."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """All options understood by the solver, the checks and the suites.

    ``region`` is ``ball`` or ``halfspace``; for a ball the box is
    ``[-radius, radius]^dim``, for a half-space the box is
    ``[-width, width]^(dim-1) x [level, level + height]`` with the last axis
    normal to the boundary.  ``N`` (nodes per axis) overrides ``h``.
    """

    subcommand: str = ""
    region: str = "ball"
    radius: float = 1.0
    dim: int = 1
    h: float = 1 / 32
    N: Optional[int] = None
    alpha: float = 1.0
    c_n: Optional[float] = None
    G: str = "identity"
    rhs: str = "const(1)"
    max_iter: int = 50
    damping: float = 0.7
    residual_tol: float = 1e-8
    jacobian: str = "analytic"
    fd_step: float = 1e-7
    eps: Optional[float] = None
    edge_exponent: Optional[float] = None
    level: float = 0.0
    height: float = 1.0
    width: float = 1.0
    initial: str = "zero"
    initial_scale: float = 0.5
    seed: int = 0
    tol_scale: float = 1.0
    symmetry_N: int = 32
    corpus_size: int = 50

    def with_overrides(self, **kw) -> "RunConfig":
        return _validate(replace(self, **kw))


_CHOICES = {
    "region": ("ball", "halfspace"),
    "jacobian": ("analytic", "fd"),
}
_POSITIVE = ("radius", "h", "residual_tol", "fd_step", "height", "width", "tol_scale",
             "initial_scale")


def _validate(cfg: RunConfig) -> RunConfig:
    if not 0 < cfg.alpha < 2:
        raise ConfigTypeError("alpha", f"must lie in (0, 2), got {cfg.alpha}")
    if cfg.dim not in (1, 2):
        raise ConfigTypeError("dim", "must be 1 or 2")
    for key in _POSITIVE:
        if not getattr(cfg, key) > 0:
            raise ConfigTypeError(key, "must be positive")
    if not 0 < cfg.damping <= 1:
        raise ConfigTypeError("damping", "must lie in (0, 1]")
    if cfg.max_iter < 1:
        raise ConfigTypeError("max_iter", "must be at least 1")
    if cfg.N is not None and cfg.N < 8:
        raise ConfigTypeError("N", "must be at least 8")
    if cfg.c_n is not None and not cfg.c_n > 0:
        raise ConfigTypeError("c_n", "must be positive")
    if cfg.eps is not None and not cfg.eps > 0:
        raise ConfigTypeError("eps", "must be positive")
    for key, allowed in _CHOICES.items():
        if getattr(cfg, key) not in allowed:
            raise ConfigTypeError(key, f"must be one of {allowed}")
    if cfg.symmetry_N < 8 or cfg.corpus_size < 1:
        raise ConfigTypeError("symmetry_N" if cfg.symmetry_N < 8 else "corpus_size",
                              "too small")
    return cfg


def _convert(key: str, raw: str, default):
    ftype = {f.name: f.type for f in fields(RunConfig)}[key]
    text = raw.strip()
    try:
        if "Optional" in str(ftype) and text.lower() in ("none", ""):
            return None
        if "int" in str(ftype) and "float" not in str(ftype):
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        if "float" in str(ftype):
            return float(text)
    except ValueError:
        raise ConfigTypeError(key, f"cannot read {raw!r} as {ftype}") from None
    return text


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a :class:`RunConfig`.

    Raises
    ------
    UnknownKey
        For a key that is not a :class:`RunConfig` field.
    ConfigTypeError
        For a malformed line, an unreadable value or a value out of range.
    """
    cfg = base or RunConfig()
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigTypeError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise UnknownKey(key)
        updates[key] = _convert(key, value, getattr(cfg, key))
    return _validate(replace(cfg, **updates))


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config`: one ``key = value`` line per field.

    Floats are written with ``repr`` so the text parses back to an equal
    configuration.
    """
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if value is None:
            text = "none"
        elif isinstance(value, str):
            text = value
        else:
            text = repr(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
