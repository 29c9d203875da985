import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_mp.nonlinearity import (HypothesisViolation, builtin_library, cubic,
                                      get_nonlinearity, identity, make_nonlinearity, quadratic,
                                      sine)


def test_identity_is_valid():
    G = make_nonlinearity(lambda t: t, lambda t: np.ones_like(t), c0=1.0)
    assert G(0.7) == pytest.approx(0.7)
    assert G.c0 == 1.0


def test_cubic_third_is_valid_with_floor_one():
    G = make_nonlinearity(lambda t: t + t**3 / 3, lambda t: 1 + t**2, c0=1.0)
    assert np.all(G.g_prime(G.probes()) >= 1.0)


def test_sine_violates_floor_near_two():
    with pytest.raises(HypothesisViolation) as exc:
        make_nonlinearity(np.sin, np.cos, c0=0.5, probe_range=2.0)
    assert exc.value.which == "G′<c0"
    assert abs(abs(exc.value.at) - 2.0) < 0.1


def test_nonzero_at_origin_is_rejected():
    with pytest.raises(HypothesisViolation) as exc:
        make_nonlinearity(lambda t: t + 1e-3, lambda t: np.ones_like(t), c0=1.0)
    assert exc.value.which == "G(0)≠0"


def test_inconsistent_derivative_is_rejected():
    with pytest.raises(HypothesisViolation) as exc:
        make_nonlinearity(lambda t: t + t**3, lambda t: 1 + t**2, c0=1.0)
    assert exc.value.which == "derivative mismatch"


@pytest.mark.parametrize("c0, probe", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
def test_bad_parameters(c0, probe):
    with pytest.raises(ValueError):
        make_nonlinearity(lambda t: t, lambda t: np.ones_like(t), c0=c0, probe_range=probe)


@pytest.mark.parametrize("name, value_at_one, c0", [
    ("identity", 1.0, 1.0),
    ("cubic(0.1)", 1.1, 1.0),
    ("sine(0.5)", 1 + 0.5 * np.sin(1.0), 0.5),
    ("quadratic(1)", 2.0, 0.2),
])
def test_lookup(name, value_at_one, c0):
    G = get_nonlinearity(name)
    assert float(G(1.0)) == pytest.approx(value_at_one)
    assert G.c0 == pytest.approx(c0)


def test_unknown_name():
    with pytest.raises(KeyError):
        get_nonlinearity("unknown")


def test_library_contents():
    lib = builtin_library()
    assert {"identity", "cubic(0.1)", "sine(0.5)"} <= set(lib)


@pytest.mark.parametrize("G", list(builtin_library().values()), ids=lambda G: G.name)
def test_preset_hypotheses(G):
    assert abs(float(G(0.0))) <= 1e-14
    assert G.g_prime(G.probes()).min() >= G.c0


@pytest.mark.parametrize("make", [identity, lambda: cubic(0.3), lambda: sine(0.9),
                                  lambda: quadratic(0.5)])
@settings(max_examples=200, deadline=None)
@given(s=st.floats(-1.0, 1.0), t=st.floats(-1.0, 1.0))
def test_mean_value_surrogate(make, s, t):
    G = make()
    if abs(s - t) < 1e-6:
        return
    slope = (float(G(s)) - float(G(t))) / (s - t)
    grid = np.linspace(min(s, t), max(s, t), 2001)
    d = G.g_prime(grid)
    assert d.min() - 1e-6 <= slope <= d.max() + 1e-6
