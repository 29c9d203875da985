"""Nonlocal fully nonlinear operators on grids.

``F_alpha(u)(x) = C PV ∫ G(u(x) - u(z)) |x - z|^(-n-alpha) dz`` with
``C = c_n (2 - alpha)``: quadrature, a collocation Dirichlet solver, and
numerical checks of the maximum principles and the moving-plane argument.
"""
from .nonlinearity import (HypothesisViolation, Nonlinearity, builtin_library, cubic,
                           get_nonlinearity, identity, make_nonlinearity, quadratic, sine)
from .grid import (AnalyticTail, Ball, BoundaryNode, Box, Domain, GridFunction, HalfSpace,
                   NonFiniteSample, NotInLAlpha, Zero, discrete_gradient, discrete_laplacian,
                   interpolate, named_function, named_tail, read_grid, sample, write_grid)
from .operator import (EpsTooSmall, KernelParams, LimitRow, MissingSecondDerivative,
                       QuadratureConfig, alpha_limit_check, eval_operator, eval_operator_field,
                       kernel_mass_outside, limit_coefficients, operator_and_jacobian,
                       operator_at_nodes)
from .dirichlet import (MaxIterExceeded, ProblemSpec, SingularJacobian, SolveResult,
                        SolverOptions, Source, get_source, residual, solve)
from .moving_planes import (PlaneReflection, asymmetry_metric, check_key_inequality,
                            check_simple_max_principle, coefficient_field, decay_bound,
                            decay_rate_check, equal_radius_spread, monotonicity_violation,
                            narrow_region_bound, narrow_region_ladder, reflect, sweep_planes)
from .config import ConfigTypeError, RunConfig, UnknownKey, format_config, parse_config
from .report import (CheckRecord, VerificationReport, emit_csv, emit_plotdata, read_report,
                     write_report)
from .suites import run_suite

__version__ = "0.1.0"
