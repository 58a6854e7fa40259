"""Variational (Jacobi) equations from the prolonged Lagrangian D_eps L.

The Euler-Lagrange equations of gamma = dL/dq . eps + dL/dqdot . epsdot on
the doubled configuration space (q, eps) reproduce the original equations of
motion together with their linearization.  This package evaluates gamma with
nested forward-mode derivatives, integrates the coupled system, and checks
inherited constants, Noether charges and Lyapunov spectra against it.
"""

__version__ = "0.1.0"

from .derivtower import (  # noqa: E402
    Dual,
    EvaluationDomainError,
    fd_oracle_partial,
    gradient,
    hessian,
    third_mixed,
)
from .models import (  # noqa: E402
    BUILTINS,
    GaugeTerm,
    LagrangianModel,
    ModelError,
    builtin,
    with_gauge,
)
from .prolongation import (  # noqa: E402
    DegeneracyError,
    ExtendedState,
    el_accel,
    el_accel_on_gamma,
    hessian_w,
    linearize_accel_oracle,
    prolong,
    variational_accel,
    variational_matrices,
)
from .dynamics import IntegratorSpec, Trajectory, integrate, two_trajectory_oracle  # noqa: E402
from .observables import (  # noqa: E402
    PointSymmetry,
    ScalarObservable,
    drift_report,
    energy,
    inherited_constant,
    lyapunov_spectrum,
    momentum,
    noether_charge_gamma,
    noether_charge_L,
)
