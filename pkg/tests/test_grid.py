import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_mp.grid import (AnalyticTail, Ball, BoundaryNode, Box, Domain, GridFunction,
                              HalfSpace, NonFiniteSample, NotInLAlpha, Zero, algebraic,
                              discrete_gradient, discrete_laplacian, interpolate, named_function,
                              named_tail, read_grid, sample, torsion, write_grid)


def line(N=9, lo=-1.0, hi=1.0, region=None):
    return Domain.cube(1, lo, hi, N, region)


# --- sample -----------------------------------------------------------------------

def test_sample_constant():
    u = sample(line(9), lambda x: np.ones_like(x))
    assert u.values.shape == (9,)
    assert np.all(u.values == 1.0)


def test_sample_torsion_profile():
    u = sample(line(9), torsion(0.5))
    assert u.values[4] == 1.0
    assert u.values[0] == 0.0 and u.values[-1] == 0.0


def test_sample_identity_with_zero_exterior():
    d = line(9)
    u = sample(d, lambda x: x)
    assert isinstance(u.exterior, Zero)
    np.testing.assert_array_equal(u.values, d.coords()[0])


def test_nonfinite_sample_reports_node():
    with pytest.raises(NonFiniteSample) as exc, np.errstate(divide="ignore"):
        sample(line(9), lambda x: 1.0 / x)
    assert tuple(exc.value.node) == (4,)


def test_grid_function_is_immutable():
    u = sample(line(9), lambda x: x)
    with pytest.raises(ValueError):
        u.values[0] = 3.0


@pytest.mark.parametrize("kwargs", [
    dict(lo=(0.0,), hi=(1.0,), shape=(5,)),                 # fewer than 8 nodes
    dict(lo=(1.0,), hi=(0.0,), shape=(9,)),                 # empty box
    dict(lo=(-0.5,), hi=(0.5,), shape=(9,), region=Ball(1.0)),   # region not in box
])
def test_domain_invariants(kwargs):
    with pytest.raises(ValueError):
        Domain(**kwargs)


def test_region_masks():
    d = Domain.cube(2, -1.0, 1.0, 9, Ball(1.0))
    m = d.region_mask()
    assert m[4, 4] and not m[0, 4] and not m[4, 0]
    hs = Domain((-1.0, 0.0), (1.0, 1.0), (9, 9), HalfSpace(1, 0.0))
    m = hs.region_mask()
    assert not m[:, 0].any() and m[4, 1]


# --- interpolate ------------------------------------------------------------------

def test_interpolate_linear_exact():
    u = sample(line(9), lambda x: x)
    assert interpolate(u, 0.123) == pytest.approx(0.123, abs=1e-15)


def test_interpolate_outside_zero():
    u = sample(line(9), lambda x: x + 2)
    assert interpolate(u, 1.5) == 0.0


def test_interpolate_outside_tail():
    u = sample(line(9), algebraic(1.0), named_tail("algebraic(1)"))
    assert interpolate(u, 3.0) == pytest.approx(10 ** -0.5)


def test_interpolate_midpoint():
    d = Domain.cube(1, 0.0, 1.0, 9)
    vals = np.zeros(9)
    vals[5] = 1.0
    u = GridFunction(d, vals)
    mid = (d.node_point((4,)) + d.node_point((5,))) / 2
    assert interpolate(u, mid) == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=81, max_size=81))
def test_interpolate_sample_identity_at_nodes(vals):
    d = Domain.cube(2, -1.0, 1.0, 9)
    u = GridFunction(d, np.reshape(vals, (9, 9)))
    got = interpolate(u, d.points())
    np.testing.assert_allclose(got, u.values.ravel(), rtol=1e-14, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5),
       pts=st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20))
def test_interpolate_reproduces_affine(a, b, c, pts):
    d = Domain.cube(2, -1.0, 1.0, 9)
    u = sample(d, lambda x, y: a + b * x + c * y)
    p = np.array(pts)
    np.testing.assert_allclose(interpolate(u, p), a + b * p[:, 0] + c * p[:, 1],
                               atol=1e-12 * (1 + abs(a) + abs(b) + abs(c)))


# --- discrete calculus --------------------------------------------------------------

def test_laplacian_of_square_is_two():
    u = sample(line(17), lambda x: x**2)
    for i in range(1, 16):
        assert discrete_laplacian(u, (i,)) == pytest.approx(2.0, rel=1e-12)


def test_constant_has_zero_derivatives():
    u = sample(Domain.cube(2, -1.0, 1.0, 9), lambda x, y: np.full_like(x, 3.0))
    assert discrete_laplacian(u, (4, 4)) == 0.0
    np.testing.assert_array_equal(discrete_gradient(u, (4, 4)), [0.0, 0.0])


def test_laplacian_refinement_ratio():
    errs = []
    for N in (17, 33, 65):
        d = Domain.cube(1, 0.0, 2.0, N)
        u = sample(d, np.sin)
        i = d.node_index((1.0,))
        errs.append(abs(discrete_laplacian(u, i) + np.sin(1.0)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.02)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_laplacian_exact_on_quadratics(c):
    d = Domain.cube(2, -1.0, 1.0, 9)
    u = sample(d, lambda x, y: c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y
               + c[5] * y * y)
    exact = 2 * c[3] + 2 * c[5]
    scale = 1 + sum(abs(v) for v in c)
    assert abs(discrete_laplacian(u, (3, 5)) - exact) <= 1e-10 * scale


def test_boundary_node_rejected():
    u = sample(line(9), lambda x: x)
    with pytest.raises(BoundaryNode):
        discrete_laplacian(u, (0,))
    with pytest.raises(BoundaryNode):
        discrete_gradient(u, (8,))


# --- exterior admissibility ----------------------------------------------------------

def test_zero_exterior_tail_integral():
    assert sample(line(9), lambda x: x).tail_integral(1.0) == 0.0


@pytest.mark.parametrize("n", [1, 2])
def test_decaying_tail_is_admissible(n):
    d = Domain.cube(n, -2.0, 2.0, 9)
    u = sample(d, algebraic(1.0), named_tail("algebraic(1)"))
    assert 0 < u.tail_integral(1.0) < np.inf


def test_growing_tail_is_rejected():
    d = line(9)
    u = GridFunction(d, d.coords()[0] ** 2, AnalyticTail(lambda x: x**2))
    with pytest.raises(NotInLAlpha):
        u.tail_integral(1.0)


# --- file format ------------------------------------------------------------------------

@pytest.mark.parametrize("n, exterior", [(1, None), (2, None), (1, "algebraic(0.5)")])
def test_grid_file_round_trip(tmp_path, n, exterior):
    d = Domain.cube(n, -1.0, 1.0, 9)
    ext = named_tail(exterior) if exterior else None
    u = sample(d, lambda *x: np.exp(sum(x)) / 3, ext)
    path = tmp_path / "u.grid"
    write_grid(u, path)
    header = path.read_text().splitlines()[0]
    assert header.startswith(f"nonloc-grid v1 dim={n} h=")
    assert ("exterior=tail:" if exterior else "exterior=zero") in header
    v = read_grid(path)
    np.testing.assert_array_equal(v.values, u.values)
    assert v.domain.shape == d.shape
    assert isinstance(v.domain.region, Box)
    if exterior:
        assert v.exterior(5.0) == pytest.approx(named_function(exterior)(5.0))


def test_unknown_named_function():
    with pytest.raises(KeyError):
        named_function("nosuch(1)")
