"""Implicit multiderivative Runge-Kutta integrators for stiff ODE systems.

The package combines an extended-tableau scheme catalogue, three derivative
strategies (exact-Jacobian, recursive, approximate), two residual
formulations (direct, dersol) and two stage couplings (dimdrk, fsmdrk) with a
damped Newton solver that records 1-norm condition numbers, plus a CLI for
convergence and conditioning sweeps.
"""

from .derivchain import (
    DerivStrategy,
    MissingCapabilityError,
    StrategyKind,
    UnsupportedOrderError,
    derivatives_direct,
    derivatives_direct_with_jacobians,
    psi_dersol,
    psi_dersol_jacobians,
)
from .lab import (
    RunRecord,
    run_conditioning,
    run_convergence,
    run_integrate,
    method_spec,
)
from .mdrk import (
    Coupling,
    Formulation,
    MethodSpec,
    MethodError,
    RunStats,
    StepFailure,
    StepTrace,
    integrate,
    step,
    step_direct,
    step_dersol,
)
from .newton import (
    NewtonConfig,
    NewtonReport,
    NonFiniteResidualError,
    SingularJacobianError,
    empirical_order_eps,
    fd_jacobian,
    solve,
)
from .odesys import (
    FluxModel,
    dahlquist_scaled,
    kaps,
    make_problem,
    pareschi_russo,
    two_var_model,
    van_der_pol,
)
from .stencil import InvalidStencilError, StencilWeights, apply_weights, make_weights
from .tableau import (
    Structure,
    Tableau,
    UnknownSchemeError,
    builtin_names,
    builtin_tableau,
    format_tableau,
    parse_tableau,
    validate,
)

__version__ = "0.1.0"
