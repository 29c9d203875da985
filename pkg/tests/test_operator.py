import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_mp.grid import (AnalyticTail, Ball, Domain, GridFunction, NotInLAlpha, bump,
                              discrete_gradient, discrete_laplacian, sample, torsion)
from nonlocal_mp.nonlinearity import (cubic, get_nonlinearity, identity, make_nonlinearity,
                                      quadratic, sine)
from nonlocal_mp.operator import (EpsTooSmall, KernelParams, MissingSecondDerivative,
                                  QuadratureConfig, alpha_limit_check, eval_operator,
                                  eval_operator_field, fractional_laplacian_constant,
                                  kernel_mass_outside, limit_coefficients, operator_and_jacobian,
                                  operator_at_nodes, sphere_area)

from oracle import bump_1d, operator_1d, torsion_1d


def torsion_closed_form(n, alpha):
    """(-Δ)^{α/2} (1-|x|^2)_+^{α/2} in the unit ball."""
    return 2**alpha * math.gamma(1 + alpha / 2) * math.gamma((n + alpha) / 2) / math.gamma(n / 2)


# --- kernel parameters ------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0, 2.5])
def test_alpha_range(alpha):
    with pytest.raises(ValueError):
        KernelParams(1, alpha)


def test_default_normalization_is_fractional_laplacian():
    for n in (1, 2):
        for alpha in (0.5, 1.0, 1.5):
            k = KernelParams(n, alpha)
            assert k.C == pytest.approx(fractional_laplacian_constant(n, alpha), rel=1e-14)
            assert k.C == pytest.approx(k.c_n_value * (2 - alpha))


def test_custom_normalization():
    k = KernelParams(2, 1.0, c_n=3.0)
    assert k.C == 3.0


# --- examples -----------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("G", [identity(), cubic(0.1)], ids=["identity", "cubic"])
def test_constant_with_matching_tail_is_zero(n, G):
    d = Domain.cube(n, -1.0, 1.0, 17)
    u = sample(d, lambda *x: np.full(np.broadcast(*x).shape, 0.7),
               AnalyticTail(lambda *x: 0.7 + 0 * x[0]))
    F = eval_operator_field(u, G, KernelParams(n, 1.2))
    assert np.abs(F.values).max() <= 1e-12


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_torsion_profile_constant_and_matches_oracle(alpha):
    d = Domain.cube(1, -1.0, 1.0, 257, Ball(1.0))
    u = sample(d, torsion(alpha / 2))
    q = QuadratureConfig(edge_exponent=alpha / 2)
    F = eval_operator_field(u, identity(), KernelParams(1, alpha), q, mask=d.region_mask())
    v = F.values[d.region_mask()]
    assert (v.max() - v.min()) / v.mean() < 0.02
    ref = operator_1d(lambda x: torsion_1d(x) ** alpha, 0.0, alpha)
    assert ref == pytest.approx(torsion_closed_form(1, alpha), rel=1e-9)
    assert v.mean() == pytest.approx(ref, rel=0.02)


def test_odd_function_vanishes_at_centre():
    d = Domain.cube(1, -1.0, 1.0, 65)
    u = sample(d, lambda x: x * np.exp(-4 * x**2))
    assert abs(eval_operator(u, (0.0,), identity(), KernelParams(1, 1.3))) <= 1e-12
    # an odd G keeps the cancellation
    assert abs(eval_operator(u, (0.0,), sine(0.5), KernelParams(1, 0.7))) <= 1e-12


@pytest.mark.parametrize("n", [1, 2])
def test_constant_gives_zero_field(n):
    d = Domain.cube(n, -1.0, 1.0, 17, Ball(1.0))
    u = sample(d, lambda *x: np.zeros(np.broadcast(*x).shape))
    assert np.all(eval_operator_field(u, cubic(0.1), KernelParams(n, 1.0)).values == 0.0)


@pytest.mark.parametrize("n, N", [(1, 65), (2, 33)])
@pytest.mark.parametrize("shift", [1, 2])
def test_translation_invariance(n, N, shift):
    d = Domain.cube(n, -2.0, 2.0, N)
    u = sample(d, lambda *x: bump(4.0)(*[1.6 * c for c in x]))
    us = u.with_values(np.roll(u.values, shift, axis=0))
    k = KernelParams(n, 1.2)
    F = eval_operator_field(u, cubic(0.3), k).values
    Fs = eval_operator_field(us, cubic(0.3), k).values
    diff = np.abs(np.roll(F, shift, axis=0) - Fs)[shift:-shift]
    assert diff.max() <= 1e-12 * np.abs(F).max()


def test_field_matches_pointwise():
    d = Domain.cube(2, -1.0, 1.0, 17, Ball(1.0))
    u = sample(d, bump(3.0))
    k = KernelParams(2, 0.8)
    F = eval_operator_field(u, cubic(0.1), k)
    for idx in [(8, 8), (3, 10), (12, 5)]:
        assert F.values[idx] == eval_operator(u, np.array(idx), cubic(0.1), k)


# --- quadrature against the oracle ----------------------------------------------------

@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("G", [identity(), cubic(0.3)], ids=["identity", "cubic"])
def test_bump_against_oracle(alpha, G):
    d = Domain.cube(1, -2.0, 2.0, 257)
    u = sample(d, bump(4.0))
    for x in (0.0, 0.25, -0.5, 0.875):
        ref = operator_1d(bump_1d, x, alpha, G=G.g)
        got = eval_operator(u, (x,), G, KernelParams(1, alpha))
        assert got == pytest.approx(ref, abs=2e-4 * max(1.0, abs(ref)))


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_refinement_order(alpha):
    xs = (0.0, 0.25, -0.5)
    ref = [operator_1d(bump_1d, x, alpha) for x in xs]
    errs = []
    for N in (65, 129, 257):
        u = sample(Domain.cube(1, -2.0, 2.0, N), bump(4.0))
        errs.append(max(abs(eval_operator(u, (x,), identity(), KernelParams(1, alpha)) - r)
                        for x, r in zip(xs, ref)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.0), orders


def test_refinement_2d_converges():
    G, k = identity(), KernelParams(2, 1.0)
    vals = []
    for N in (17, 33, 65):
        u = sample(Domain.cube(2, -2.0, 2.0, N), bump(4.0))
        vals.append(eval_operator(u, (0.5, 0.0), G, k))
    d1, d2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert d2 < d1 / 2


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_pv_stability(alpha):
    """The change from halving eps is a discretization effect that vanishes with h."""
    sens = []
    for N in (65, 129, 257):
        d = Domain.cube(1, -2.0, 2.0, N)
        u = sample(d, bump(4.0))
        h = d.spacing
        k = KernelParams(1, alpha)
        a = eval_operator(u, (0.25,), cubic(0.3), k, QuadratureConfig(eps=2 * h))
        b = eval_operator(u, (0.25,), cubic(0.3), k, QuadratureConfig(eps=h))
        sens.append(abs(a - b))
    assert sens[1] <= sens[0] / 2 and sens[2] <= sens[1] / 2


def test_truncated_far_field_close_to_closed_form():
    d = Domain.cube(1, -1.0, 1.0, 65, Ball(1.0))
    u = sample(d, bump(2.0))
    k = KernelParams(1, 1.0)
    full = eval_operator(u, (0.0,), identity(), k)
    trunc = eval_operator(u, (0.0,), identity(), k, QuadratureConfig(truncate_at=100.0))
    # the dropped mass is 2 C u(0) / (alpha 100^alpha)
    assert full - trunc == pytest.approx(2 * k.C / 100.0, rel=1e-6)


def test_eps_too_small():
    u = sample(Domain.cube(1, -1.0, 1.0, 33), bump(4.0))
    with pytest.raises(EpsTooSmall):
        eval_operator(u, (0.0,), identity(), KernelParams(1, 1.0), QuadratureConfig(eps=0.01))


def test_eps_must_be_multiple_of_h():
    u = sample(Domain.cube(1, -1.0, 1.0, 33), bump(4.0))
    with pytest.raises(ValueError):
        eval_operator(u, (0.0,), identity(), KernelParams(1, 1.0), QuadratureConfig(eps=0.1))


def test_truncation_radius_must_exceed_box():
    u = sample(Domain.cube(1, -1.0, 1.0, 33), bump(4.0))
    with pytest.raises(ValueError):
        eval_operator(u, (0.0,), identity(), KernelParams(1, 1.0),
                      QuadratureConfig(truncate_at=1.0))


def test_growing_tail_not_admissible():
    d = Domain.cube(1, -1.0, 1.0, 33)
    u = GridFunction(d, d.coords()[0] ** 2, AnalyticTail(lambda x: x**2))
    with pytest.raises(NotInLAlpha):
        eval_operator(u, (0.0,), identity(), KernelParams(1, 1.0))


def test_kernel_mass_outside_positive_and_decreasing_in_box():
    small = Domain.cube(1, -1.0, 1.0, 33)
    large = Domain.cube(1, -2.0, 2.0, 65)
    a = kernel_mass_outside(small, (16,), 1.0)
    b = kernel_mass_outside(large, (32,), 1.0)
    assert a > b > 0
    # for x at the centre and no inner correction the mass is 2 R^-alpha/alpha
    assert b == pytest.approx(2 * 2.0 ** -1.0, rel=0.05)


# --- Jacobian ---------------------------------------------------------------------------

@pytest.mark.parametrize("n, N, edge", [(1, 33, None), (2, 11, None), (1, 33, 0.5)])
def test_jacobian_matches_finite_differences(n, N, edge):
    d = Domain.cube(n, -1.2, 1.2, N, Ball(1.0))
    u = sample(d, lambda *x: np.maximum(1 - sum(c**2 for c in x), 0) ** 0.5 * (1 + 0.3 * x[0]))
    G, k, q = cubic(0.3), KernelParams(n, 1.3), QuadratureConfig(edge_exponent=edge)
    nodes = np.argwhere(d.region_mask())
    F, J = operator_and_jacobian(u, G, k, q, nodes)
    np.testing.assert_allclose(F, operator_at_nodes(u, G, k, q, nodes), rtol=1e-13, atol=1e-13)
    base = u.values.ravel()
    cols = np.flatnonzero(d.region_mask().ravel())[:: max(1, N // 6)]
    step = 1e-6
    for j in cols:
        vp, vm = base.copy(), base.copy()
        vp[j] += step
        vm[j] -= step
        fd = (operator_at_nodes(u.with_values(vp.reshape(d.shape)), G, k, q, nodes)
              - operator_at_nodes(u.with_values(vm.reshape(d.shape)), G, k, q, nodes)) / (2 * step)
        np.testing.assert_allclose(J[:, j], fd, atol=1e-6 * np.abs(J).max())


@pytest.mark.parametrize("n, N", [(1, 33), (2, 13)])
@pytest.mark.parametrize("alpha", [0.5, 1.5])
def test_discrete_operator_is_monotone(n, N, alpha):
    d = Domain.cube(n, -1.0, 1.0, N)
    u = sample(d, bump(3.0))
    nodes = np.argwhere(np.ones(d.shape, bool))
    _, J = operator_and_jacobian(u, cubic(0.2), KernelParams(n, alpha), QuadratureConfig(), nodes)
    off = J - np.diag(np.diag(J))
    assert off.max() <= 1e-12 * np.abs(J).max()


@pytest.mark.parametrize("name", ["cubic(0.3)", "sine(0.5)"])
@pytest.mark.parametrize("n, N, alpha", [(1, 33, 0.3), (1, 33, 1.5), (2, 13, 0.3),
                                         (2, 13, 1.0), (2, 13, 1.9)])
def test_jacobian_is_z_matrix_on_rough_data(name, n, N, alpha):
    d = Domain.cube(n, -1.0, 1.0, N)
    u = GridFunction(d, np.random.default_rng(3).uniform(-0.4, 0.4, d.shape))
    nodes = np.argwhere(np.ones(d.shape, bool))
    _, J = operator_and_jacobian(u, get_nonlinearity(name), KernelParams(n, alpha),
                                 QuadratureConfig(), nodes)
    off = J - np.diag(np.diag(J))
    assert off.max() <= 1e-12 * np.abs(J).max()


@pytest.mark.parametrize("offset", [(-1, 1), (1, 1), (0, 1), (1, 0), (2, -1)])
@pytest.mark.parametrize("extra", [1e-3, 1e-2, 1e-1])
def test_raising_one_neighbour_does_not_raise_operator(offset, extra):
    d = Domain.cube(2, -1.0, 1.0, 13)
    v = sample(d, bump(3.0))
    vals = v.values.copy()
    vals[8 + offset[0], 8 + offset[1]] += extra
    u = GridFunction(d, vals)
    k, G, x = KernelParams(2, 0.5), cubic(0.2), np.array([8, 8])
    assert eval_operator(u, x, G, k) <= eval_operator(v, x, G, k)


# --- properties -----------------------------------------------------------------------------

_D1 = Domain.cube(1, -1.0, 1.0, 17)
_D2 = Domain.cube(2, -1.0, 1.0, 9)
_value = st.floats(-1.0, 1.0, allow_nan=False)


def _field(dom):
    return st.lists(_value, min_size=dom.values_count if hasattr(dom, "values_count")
                    else int(np.prod(dom.shape)), max_size=int(np.prod(dom.shape)))


@settings(max_examples=25, deadline=None)
@given(a=_field(_D1), b=_field(_D1), alpha=st.sampled_from([0.5, 1.0, 1.5]))
def test_linearity_for_identity(a, b, alpha):
    u = GridFunction(_D1, np.array(a))
    v = GridFunction(_D1, np.array(b))
    k = KernelParams(1, alpha)
    Fu = eval_operator_field(u, identity(), k).values
    Fv = eval_operator_field(v, identity(), k).values
    Fuv = eval_operator_field(u + v, identity(), k).values
    scale = np.abs(Fu).max() + np.abs(Fv).max() + 1e-300
    assert np.abs(Fuv - Fu - Fv).max() <= 1e-10 * scale


@settings(max_examples=100, deadline=None)
@given(v=_field(_D2), bump_=_field(_D2), i=st.integers(0, 8), j=st.integers(0, 8),
       alpha=st.sampled_from([0.5, 1.0, 1.5]),
       name=st.sampled_from(["identity", "cubic(0.3)", "sine(0.5)"]))
def test_monotone_ellipticity(v, bump_, i, j, alpha, name):
    G = get_nonlinearity(name)
    vv = np.reshape(v, _D2.shape)
    extra = np.abs(np.reshape(bump_, _D2.shape))
    extra[i, j] = 0.0
    u = GridFunction(_D2, vv + extra)
    w = GridFunction(_D2, vv)
    k = KernelParams(2, alpha)
    Fu = eval_operator(u, np.array([i, j]), G, k)
    Fw = eval_operator(w, np.array([i, j]), G, k)
    assert Fu <= Fw + 1e-12 * (1 + abs(Fw))


@settings(max_examples=25, deadline=None)
@given(v=_field(_D1), i=st.integers(0, 16), depth=st.floats(0.01, 1.0),
       alpha=st.sampled_from([0.5, 1.0, 1.5]),
       name=st.sampled_from(["identity", "cubic(0.3)", "sine(0.5)"]))
def test_negative_at_strict_global_minimum(v, i, depth, alpha, name):
    vals = np.abs(np.array(v)) + 0.01
    vals[i] = -depth
    u = GridFunction(_D1, vals)
    assert eval_operator(u, np.array([i]), get_nonlinearity(name), KernelParams(1, alpha)) < 0


# --- alpha -> 2 limit ---------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2])
def test_identity_has_no_gradient_term(n):
    a, b = limit_coefficients(identity(), KernelParams(n, 1.5))
    assert b == 0.0
    assert a == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_limit_coefficient_ratio(n):
    a, b = limit_coefficients(quadratic(1.0), KernelParams(n, 1.5))
    # G'(0) = 1, G''(0) = 2: b/a = G''(0)/G'(0)
    assert b / a == pytest.approx(2.0, rel=1e-12)


def test_limit_coefficients_with_unit_normalization():
    k = KernelParams(1, 1.5, c_n=1.0)
    a, b = limit_coefficients(identity(), k)
    assert a == pytest.approx(sphere_area(1) / 2)     # c_n |S^0| / (2n) = 1
    d = Domain.cube(1, -2.0, 2.0, 161)
    u = sample(d, lambda x: 0.3 * bump(4.0)(x))
    rows = alpha_limit_check(u, (0.3,), identity(), k)
    errs = [r.error for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.05 * abs(rows[2].limit)


def test_missing_second_derivative():
    G = make_nonlinearity(lambda t: t, lambda t: np.ones_like(t), None, c0=1.0)
    with pytest.raises(MissingSecondDerivative):
        limit_coefficients(G, KernelParams(1, 1.5))


@pytest.mark.parametrize("n, N", [(1, 161), (2, 81)])
def test_limit_at_bump_centre(n, N):
    d = Domain.cube(n, -2.0, 2.0, N)
    u = sample(d, bump(4.0))
    centre = (0.0,) * n
    rows_id = alpha_limit_check(u, centre, identity(), KernelParams(n, 1.5),
                                laplacian=-8.0 * n, gradient=np.zeros(n))
    assert rows_id[0].limit == pytest.approx(8.0 * n)
    rows_q = alpha_limit_check(u, centre, quadratic(1.0), KernelParams(n, 1.5),
                               laplacian=-8.0 * n, gradient=np.zeros(n))
    assert rows_q[0].limit == pytest.approx(rows_id[0].limit)
    assert rows_q[-1].error < rows_q[0].error


@pytest.mark.parametrize("n, N", [(1, 161), (2, 81)])
def test_limit_off_centre(n, N):
    d = Domain.cube(n, -2.0, 2.0, N)
    u = sample(d, lambda *x: 0.3 * bump(4.0)(*x))
    x = (0.25,) + (-0.35,) * (n - 1)
    G = quadratic(1.0)
    rows = alpha_limit_check(u, x, G, KernelParams(n, 1.5))
    idx = d.node_index(x)
    a, b = limit_coefficients(G, KernelParams(n, 1.5))
    g = discrete_gradient(u, idx)
    assert np.linalg.norm(g) > 0.1
    assert rows[0].limit == pytest.approx(-a * discrete_laplacian(u, idx) + b * g @ g)
    errs = [r.error for r in rows]
    assert errs[0] > errs[1] > errs[2]
