"""Pointwise consistency checks between independent derivative routes.

Each check compares two ways of computing the same quantity at one
extended state.  ``identity_suite`` samples random states and reports the
worst residual of each check next to its pass threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GaugeTerm, LagrangianModel, random_state, with_gauge
from .prolongation import (
    ExtendedState,
    el_accel,
    el_accel_on_gamma,
    eval_gamma,
    gamma_derivative_identities,
    hessian_w,
    homogeneity_residual,
    linearize_accel_oracle,
    prolong,
    variational_accel,
    variational_matrices,
)

__all__ = ["THRESHOLDS", "relative_difference", "random_extended_state",
           "identity_residuals", "IdentityReport", "identity_suite", "linear_gauge"]

# check name -> pass threshold on the worst residual
THRESHOLDS = {
    "dgamma_depsdot_vs_dL_dqdot": 1e-12,
    "dgamma_deps_vs_dL_dq": 1e-12,
    "homogeneity": 1e-12,
    "gamma_el_vs_variational": 1e-9,
    "variational_vs_linearized": 1e-8,
    "gauge_invariance": 1e-9,
    "hessian_w_routes": 1e-10,
}


def relative_difference(a, b) -> float:
    """||a - b|| / max(||a||, ||b||), zero when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def random_extended_state(model: LagrangianModel, rng: np.random.Generator,
                          t_range=(0.0, 10.0)) -> ExtendedState:
    q, qdot = random_state(model, rng)
    n = model.dimension
    eps = rng.uniform(-1.0, 1.0, n)
    epsdot = rng.uniform(-1.0, 1.0, n)
    t = rng.uniform(*t_range)
    return ExtendedState(t, q, qdot, eps, epsdot)


def linear_gauge(n: int) -> GaugeTerm:
    """g = q . eps, the simplest gauge term coupling both halves of D."""

    def g(q, eps, t):
        s = 0.0
        for a in range(n):
            s = s + q[a] * eps[a]
        return s

    return GaugeTerm(g, "q.eps")


def identity_residuals(model: LagrangianModel, state: ExtendedState,
                       prolonged=None, gauged=None) -> dict:
    """All pointwise residuals at one state, keyed like :data:`THRESHOLDS`."""
    prolonged = prolonged or prolong(model)
    gauged = gauged or with_gauge(prolonged, linear_gauge(model.dimension))
    r_epsdot, r_eps = gamma_derivative_identities(model, state)
    gamma = eval_gamma(model, state)

    qdd = el_accel(model, state.q, state.qdot, state.t)
    mats = variational_matrices(model, state.q, state.qdot, qdd, state.t)
    epsdd = variational_accel(mats, state.eps, state.epsdot)
    via_gamma = np.concatenate(el_accel_on_gamma(model, state, prolonged))
    via_gauge = np.concatenate(el_accel_on_gamma(model, state, gauged))
    Jq, Jv = linearize_accel_oracle(model, state.q, state.qdot, state.t)
    return {
        "dgamma_depsdot_vs_dL_dqdot": r_epsdot,
        "dgamma_deps_vs_dL_dq": r_eps,
        "homogeneity": homogeneity_residual(model, state) / (1.0 + abs(gamma)),
        "gamma_el_vs_variational": relative_difference(via_gamma, np.concatenate([qdd, epsdd])),
        "variational_vs_linearized": relative_difference(epsdd, Jq @ state.eps + Jv @ state.epsdot),
        "gauge_invariance": relative_difference(via_gauge, via_gamma),
        "hessian_w_routes": hessian_w(model, state).relative_gap,
    }


@dataclass(frozen=True)
class IdentityReport:
    model: str
    n_states: int
    worst: dict

    @property
    def passed(self) -> dict:
        return {k: bool(v < THRESHOLDS[k]) for k, v in self.worst.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {"model": self.model, "states": self.n_states,
                "max_residual": dict(self.worst), "threshold": dict(THRESHOLDS),
                "passed": self.passed}


def identity_suite(model: LagrangianModel, rng: np.random.Generator,
                   n_states: int = 100) -> IdentityReport:
    prolonged = prolong(model)
    gauged = with_gauge(prolonged, linear_gauge(model.dimension))
    worst = dict.fromkeys(THRESHOLDS, 0.0)
    for _ in range(n_states):
        state = random_extended_state(model, rng)
        for k, v in identity_residuals(model, state, prolonged, gauged).items():
            worst[k] = max(worst[k], v)
    return IdentityReport(model.name, n_states, worst)
