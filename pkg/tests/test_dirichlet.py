import numpy as np
import pytest

from nonlocal_mp.dirichlet import (MaxIterExceeded, ProblemSpec, SolverOptions, get_source,
                                   residual, solve)
from nonlocal_mp.grid import AnalyticTail, Ball, Box, Domain, GridFunction, HalfSpace, sample
from nonlocal_mp.moving_planes import (asymmetry_metric, check_simple_max_principle,
                                       monotonicity_violation)
from nonlocal_mp.nonlinearity import cubic, get_nonlinearity, identity, sine
from nonlocal_mp.operator import KernelParams, QuadratureConfig, eval_operator_field

from oracle import operator_1d, torsion_1d


def ball_problem(n=1, N=33, G=None, rhs="const(1)", alpha=1.0, initial=None, **solver):
    d = Domain.cube(n, -1.0, 1.0, N, Ball(1.0))
    return ProblemSpec(d, G or identity(), KernelParams(n, alpha), get_source(rhs), initial,
                       SolverOptions(**solver))


# --- sources ------------------------------------------------------------------------------

@pytest.mark.parametrize("name, u, value, slope", [
    ("const(1)", 0.3, 1.0, 0.0),
    ("linear(2)", 0.3, 0.6, 2.0),
    ("affine(1, 0.1)", 0.5, 1.05, 0.1),
    ("lipschitz:square", 0.5, 0.25, 1.0),
    ("lipschitz:sin", 0.0, 0.0, 1.0),
    ("lipschitz:tanh", 0.0, 0.0, 1.0),
])
def test_named_sources(name, u, value, slope):
    s = get_source(name)
    assert float(s(u)) == pytest.approx(value)
    assert float(s.f_prime(np.asarray(u))) == pytest.approx(slope)


@pytest.mark.parametrize("name", ["cubic(1)", "lipschitz:nosuch", "const(x)", ""])
def test_unknown_source(name):
    with pytest.raises(KeyError):
        get_source(name)


def test_nonnegativity_flags():
    assert get_source("const(1)").nonnegative
    assert not get_source("const(-1)").nonnegative
    assert get_source("lipschitz:square").nonnegative


# --- problem validation ------------------------------------------------------------------

def test_problem_requires_ball_or_half_space():
    d = Domain.cube(1, -1.0, 1.0, 17, Box())
    with pytest.raises(ValueError):
        ProblemSpec(d, identity(), KernelParams(1, 1.0), get_source("const(1)"))


def test_problem_dimension_mismatch():
    d = Domain.cube(1, -1.0, 1.0, 17, Ball(1.0))
    with pytest.raises(ValueError):
        ProblemSpec(d, identity(), KernelParams(2, 1.0), get_source("const(1)"))


def test_initial_guess_needs_zero_exterior():
    d = Domain.cube(1, -1.0, 1.0, 17, Ball(1.0))
    g = GridFunction(d, np.zeros(17), AnalyticTail(lambda x: np.zeros_like(x)))
    with pytest.raises(ValueError):
        ProblemSpec(d, identity(), KernelParams(1, 1.0), get_source("const(1)"), g)


@pytest.mark.parametrize("kw", [dict(damping=0.0), dict(damping=1.5), dict(max_iter=0),
                                dict(residual_tol=0.0), dict(jacobian="exact")])
def test_bad_solver_options(kw):
    with pytest.raises(ValueError):
        SolverOptions(**kw)


# --- residual ---------------------------------------------------------------------------

@pytest.mark.parametrize("n, N", [(1, 17), (2, 9)])
def test_residual_of_zero_with_linear_source_vanishes(n, N):
    p = ball_problem(n, N, rhs="linear(1)")
    r = residual(p.start(), p)
    assert np.all(r.values == 0.0)


@pytest.mark.parametrize("n, N", [(1, 17), (2, 9)])
def test_residual_of_zero_with_unit_source(n, N):
    p = ball_problem(n, N)
    r = residual(p.start(), p)
    mask = p.unknowns
    np.testing.assert_array_equal(r.values[mask], -1.0)
    np.testing.assert_array_equal(r.values[~mask], 0.0)


def test_residual_needs_zero_exterior():
    p = ball_problem()
    u = GridFunction(p.domain, np.zeros(33), AnalyticTail(lambda x: np.zeros_like(x)))
    with pytest.raises(ValueError):
        residual(u, p)


# --- solve -------------------------------------------------------------------------------

@pytest.mark.parametrize("n, N, alpha", [(1, 33, 0.5), (1, 65, 1.0), (2, 13, 1.5)])
def test_identity_solve_is_linear(n, N, alpha):
    res = solve(ball_problem(n, N, alpha=alpha))
    assert res.converged
    assert res.iterations <= 2
    r = residual(res.u, ball_problem(n, N, alpha=alpha))
    assert np.abs(r.values).max() <= 1e-8


def test_torsion_solve_matches_oracle():
    """F(u) = 1 in (-1, 1) with alpha = 1 is solved by c (1 - x^2)^(1/2)."""
    d = Domain.cube(1, -1.0, 1.0, 1025, Ball(1.0))
    p = ProblemSpec(d, identity(), KernelParams(1, 1.0), get_source("const(1)"),
                    quadrature=QuadratureConfig(edge_exponent=0.5))
    res = solve(p)
    assert res.converged and res.iterations <= 2
    c = 1.0 / operator_1d(torsion_1d, 0.0, 1.0)
    assert res.u.values[512] == pytest.approx(c, rel=0.02)
    x = d.coords()[0]
    inner = np.abs(x) <= 0.9
    np.testing.assert_allclose(res.u.values[inner], c * torsion_1d(x[inner]), rtol=0.02)


@pytest.mark.parametrize("G", [identity(), cubic(0.3), sine(0.5)], ids=lambda G: G.name)
def test_linear_source_converges_to_zero(G):
    d = Domain.cube(1, -1.0, 1.0, 33, Ball(1.0))
    init = sample(d, lambda x: 0.05 * np.maximum(1 - x**2, 0))
    p = ProblemSpec(d, G, KernelParams(1, 1.0), get_source("linear(1)"), init)
    res = solve(p)
    assert res.converged
    assert np.abs(res.u.values).max() <= 1e-8


def test_nonlinear_ball_solve_is_nonnegative_and_symmetric():
    p = ball_problem(2, 17, G=cubic(0.1), rhs="affine(1, 0.1)", residual_tol=1e-9)
    res = solve(p)
    assert res.converged
    assert res.residual_history[-1] <= 1e-9
    assert res.u.values.min() >= -5e-9
    assert asymmetry_metric(res.u) <= 1e-8
    assert monotonicity_violation(res.u) <= 1e-8
    rep = check_simple_max_principle(res.u, eval_operator_field(res.u, p.G, p.kernel),
                                     p.domain.region_mask(), tol=5e-9)
    assert rep.passed


def test_fd_and_analytic_jacobians_agree():
    kw = dict(n=1, N=33, G=cubic(0.3), rhs="lipschitz:sin", residual_tol=1e-10)
    init = sample(Domain.cube(1, -1.0, 1.0, 33, Ball(1.0)),
                  lambda x: 0.3 * np.maximum(1 - x**2, 0))
    a = solve(ball_problem(initial=init, jacobian="analytic", **kw))
    f = solve(ball_problem(initial=init, jacobian="fd", **kw))
    assert a.converged and f.converged
    np.testing.assert_allclose(a.u.values, f.u.values, atol=1e-8)


def test_strict_mode_raises_with_best_iterate():
    p = ball_problem(1, 33, G=cubic(0.3), rhs="affine(1, 0.5)", max_iter=1, residual_tol=1e-14)
    res = solve(p)
    assert not res.converged
    assert res.iterations == 1
    with pytest.raises(MaxIterExceeded) as exc:
        solve(p, strict=True)
    r = exc.value.result
    assert not r.converged
    assert min(r.residual_history) == pytest.approx(r.residual_history[-1])


def test_residual_history_is_sup_norm():
    p = ball_problem(1, 33, G=cubic(0.3), rhs="affine(1, 0.5)")
    res = solve(p)
    assert res.residual_history[0] == pytest.approx(1.0)
    assert res.residual_history[-1] <= 1e-8
    assert all(s == "newton" for s in res.steps)


def test_half_space_iterates_decay():
    d = Domain((-1.0, 0.0), (1.0, 1.0), (33, 17), HalfSpace(1, 0.0))
    u0 = sample(d, lambda x, y: 0.5 * np.exp(-x**2) * 4 * y * (1 - y))
    p = ProblemSpec(d, get_nonlinearity("cubic(0.1)"), KernelParams(2, 1.0),
                    get_source("lipschitz:square"), u0, SolverOptions(residual_tol=1e-10))
    res = solve(p)
    sups = res.sup_history
    assert sups[0] == pytest.approx(0.5)
    assert all(b < a for a, b in zip(sups[3:], sups[4:]))
    assert sups[-1] < 1e-3
