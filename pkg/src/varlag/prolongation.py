"""The prolonged Lagrangian gamma = D_eps L and the variational equations.

Two independent routes lead from L to the coupled flow of (q, eps):

* assemble the matrices M, C, K and solve ``M epsddot = -C epsdot - K eps``
  next to the ordinary Euler-Lagrange solve for qddot;
* treat gamma as an ordinary Lagrangian on the 2N coordinates (q, eps) and
  run the generic Euler-Lagrange solve on it.

Both are first-class so their agreement can be checked continuously.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .derivtower import (
    Dual,
    EvaluationDomainError,
    evaluate_jet,
    gradient,
    hessian,
    lift,
    lifted_gradient,
    part,
    peel,
    primal,
)
from .models import LagrangianModel

__all__ = [
    "DegeneracyError",
    "ExtendedState",
    "VariationalMatrices",
    "HessianW",
    "COND_LIMIT",
    "prolong",
    "eval_gamma",
    "gamma_derivative_identities",
    "homogeneity_residual",
    "el_accel",
    "variational_matrices",
    "variational_accel",
    "linearize_accel_oracle",
    "el_accel_on_gamma",
    "hessian_w",
    "total_derivative_identity",
    "total_derivative_series",
]

COND_LIMIT = 1e12


class DegeneracyError(ArithmeticError):
    """The velocity Hessian is singular or too ill-conditioned to invert."""

    def __init__(self, message, condition=np.inf):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True, eq=False)
class ExtendedState:
    """A point (t, q, qdot, eps, epsdot) of the extended system."""

    t: float
    q: np.ndarray
    qdot: np.ndarray
    eps: np.ndarray
    epsdot: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("q", "qdot", "eps", "epsdot"):
            a = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if a.ndim != 1:
                raise ValueError(f"{name} must be one-dimensional")
            a.setflags(write=False)
            arrays[name] = a
        n = len(arrays["q"])
        for name, a in arrays.items():
            if len(a) != n:
                raise ValueError(f"{name} has length {len(a)}, expected {n}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, a)
        t = float(self.t)
        if not np.isfinite(t):
            raise ValueError("t must be finite")
        object.__setattr__(self, "t", t)

    @property
    def n(self) -> int:
        return len(self.q)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot, self.eps, self.epsdot])

    @classmethod
    def from_vector(cls, t, y) -> "ExtendedState":
        y = np.asarray(y, dtype=float)
        if len(y) % 4:
            raise ValueError("extended state vector length must be a multiple of 4")
        n = len(y) // 4
        return cls(t, y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:])

    @classmethod
    def zero_variation(cls, t, q, qdot) -> "ExtendedState":
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return cls(t, q, qdot, np.zeros_like(q), np.zeros_like(q))

    def __eq__(self, other):
        if not isinstance(other, ExtendedState):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.vector(), other.vector())


@dataclass(frozen=True)
class VariationalMatrices:
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray


@dataclass(frozen=True)
class HessianW:
    """Second-variation density, evaluated two ways."""

    value: float
    operator_form: float

    @property
    def relative_gap(self) -> float:
        return abs(self.value - self.operator_form) / max(abs(self.value), 1e-300)


def _check_dimension(model, *arrays):
    for a in arrays:
        if len(a) != model.dimension:
            raise ValueError(
                f"{model.name} has dimension {model.dimension}, got an array of length {len(a)}"
            )


@lru_cache(maxsize=None)
def _identity(n):
    return tuple(tuple(row) for row in np.eye(n))


@lru_cache(maxsize=None)
def _rows(n, start, stop):
    return _identity(n)[start:stop]


def _flat(model: LagrangianModel):
    n = model.dimension
    return lambda x: model.function(x[:n], x[n:2 * n], x[2 * n])


# gamma ---------------------------------------------------------------------


def prolong(model: LagrangianModel) -> LagrangianModel:
    """gamma(q, eps, qdot, epsdot, t) = dL/dq . eps + dL/dqdot . epsdot.

    The result is an ordinary Lagrangian of dimension 2N with coordinates
    ordered (q, eps) and velocities (qdot, epsdot).  Its first partials of L
    come from one extra dual level, so gamma itself stays differentiable to
    any order the caller seeds.
    """
    n = model.dimension
    f = model.function

    def gamma(Q, Qd, t):
        q, eps = Q[:n], Q[n:]
        qd, epsd = Qd[:n], Qd[n:]
        _, g = lifted_gradient(lambda x: f(x[:n], x[n:], t), [*q, *qd])
        s = 0.0
        for a in range(n):
            s = s + g[a] * eps[a] + g[n + a] * epsd[a]
        return s

    return LagrangianModel(
        name=f"gamma[{model.name}]",
        dimension=2 * n,
        function=gamma,
        parameters=model.parameters,
        time_dependent=model.time_dependent,
        formula=f"D_eps ({model.formula})",
        coordinates=model.coordinates,
    )


def _extended_args(state: ExtendedState):
    return [*state.q, *state.eps, *state.qdot, *state.epsdot, state.t]


def eval_gamma(model: LagrangianModel, state: ExtendedState) -> float:
    _check_dimension(model, state.q)
    n = model.dimension
    grad_L = gradient(_flat(model), [*state.q, *state.qdot, state.t])
    return float(grad_L[:n] @ state.eps + grad_L[n:2 * n] @ state.epsdot)


def _gamma_gradient(model, state):
    """Gradient of gamma in the order (q, eps, qdot, epsdot, t)."""
    return gradient(_flat(prolong(model)), _extended_args(state))


def gamma_derivative_identities(model: LagrangianModel, state: ExtendedState):
    """Residuals (|dgamma/depsdot - dL/dqdot|, |dgamma/deps - dL/dq|)."""
    _check_dimension(model, state.q)
    n = model.dimension
    g = _gamma_gradient(model, state)
    grad_L = gradient(_flat(model), [*state.q, *state.qdot, state.t])
    r_epsdot = np.linalg.norm(g[3 * n:4 * n] - grad_L[n:2 * n])
    r_eps = np.linalg.norm(g[n:2 * n] - grad_L[:n])
    return float(r_epsdot), float(r_eps)


def homogeneity_residual(model: LagrangianModel, state: ExtendedState) -> float:
    """|gamma - dgamma/deps . eps - dgamma/depsdot . epsdot|."""
    _check_dimension(model, state.q)
    n = model.dimension
    g = _gamma_gradient(model, state)
    value = primal(prolong(model).function([*state.q, *state.eps],
                                           [*state.qdot, *state.epsdot], state.t))
    return abs(value - g[n:2 * n] @ state.eps - g[3 * n:4 * n] @ state.epsdot)


# Euler-Lagrange solves -------------------------------------------------------


def _el_system(model, q, qdot, t):
    """Mass matrix and force vector of the Euler-Lagrange equations.

    Returns ``(M, f)`` with ``M qddot = f``; entries are floats when the
    inputs are floats and duals when they carry derivative levels.
    """
    n = model.dimension
    x = [*q, *qdot, t]
    args, base = lift(x, [_identity(2 * n + 1), _rows(2 * n + 1, n, 2 * n)])
    try:
        y = model.function(args[:n], args[n:2 * n], args[2 * n])
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise EvaluationDomainError(f"{model.name}: evaluation failed: {exc}") from None
    M = [[peel(y, base, (a, n + b)) for b in range(n)] for a in range(n)]
    f = []
    for a in range(n):
        fa = peel(y, base, (None, a)) - peel(y, base, (a, 2 * n))
        for b in range(n):
            fa = fa - peel(y, base, (a, b)) * qdot[b]
        f.append(fa)
    return M, f


def _condition(M: np.ndarray) -> float:
    """2-norm condition number; inf for singular or non-finite matrices."""
    if len(M) == 1:
        return 1.0 if M[0, 0] != 0 and np.isfinite(M[0, 0]) else np.inf
    try:
        sv = np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError:
        return np.inf
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf


def _solve(M: np.ndarray, f: np.ndarray, what: str) -> np.ndarray:
    """Dense LU solve (LAPACK gesv, partial pivoting) behind a condition check."""
    if not np.isfinite(f).all():
        bad = int(np.argmax(~np.isfinite(f)))
        raise EvaluationDomainError(f"non-finite force term at coordinate {bad}", bad)
    cond = _condition(M)
    if not cond < COND_LIMIT:
        raise DegeneracyError(f"{what} is degenerate (condition number {cond:.3g})", cond)
    if len(M) == 1:
        return f / M[0, 0]
    return np.linalg.solve(M, f)


def _solve_dual(M, f):
    """Gaussian elimination with partial pivoting on primal magnitudes."""
    n = len(f)
    A = [list(row) + [f[i]] for i, row in enumerate(M)]
    for k in range(n):
        p = max(range(k, n), key=lambda i: abs(primal(A[i][k])))
        A[k], A[p] = A[p], A[k]
        for i in range(k + 1, n):
            factor = A[i][k] / A[k][k]
            for j in range(k, n + 1):
                A[i][j] = A[i][j] - factor * A[k][j]
    x = [0.0] * n
    for i in reversed(range(n)):
        s = A[i][n]
        for j in range(i + 1, n):
            s = s - A[i][j] * x[j]
        x[i] = s / A[i][i]
    return x


def _accel(model, q, qdot, t):
    M, f = _el_system(model, q, qdot, t)
    if any(isinstance(v, Dual) for v in [*q, *qdot, t]):
        Mp = np.array([[primal(v) for v in row] for row in M])
        cond = _condition(0.5 * (Mp + Mp.T))
        if not cond < COND_LIMIT:
            raise DegeneracyError(f"{model.name}: mass matrix is degenerate "
                                  f"(condition number {cond:.3g})", cond)
        return _solve_dual(M, f)
    M = np.array(M, dtype=float)
    return _solve(0.5 * (M + M.T), np.array(f, dtype=float), f"{model.name}: mass matrix")


def el_accel(model: LagrangianModel, q, qdot, t=0.0) -> np.ndarray:
    """Accelerations from ``M qddot = dL/dq - (d2L/dqdot dq) qdot - d2L/dqdot dt``."""
    _check_dimension(model, q, qdot)
    return np.asarray(_accel(model, list(map(float, q)), list(map(float, qdot)), float(t)))


def variational_matrices(model: LagrangianModel, q, qdot, qddot, t=0.0) -> VariationalMatrices:
    """M, C and K at one point of the flow.

    The total time derivatives inside C and K are expanded along the flow as
    d/dt A = A_q . qdot + A_qdot . qddot + A_t, which a third dual level
    seeded with the direction (qdot, qddot, 1) delivers exactly.
    """
    _check_dimension(model, q, qdot, qddot)
    n = model.dimension
    flow = (*qdot, *qddot, 1.0)
    y = evaluate_jet(_flat(model), [*q, *qdot, t],
                     [_identity(2 * n + 1), _rows(2 * n + 1, 0, 2 * n), (flow,)])

    def block(path_head, rows, cols):
        return np.array([[part(y, (path_head, r, c)) for c in cols] for r in rows])

    qi = range(n)
    vi = range(n, 2 * n)
    M = block(None, vi, vi)
    B = block(None, vi, qi)          # d2L / dqdot^a dq^b
    Lqq = block(None, qi, qi)
    dM = block(0, vi, vi)
    dB = block(0, vi, qi)
    if not np.isfinite(M.sum() + B.sum() + Lqq.sum() + dM.sum() + dB.sum()):
        raise EvaluationDomainError(f"{model.name}: non-finite entries in M, C or K")
    M = 0.5 * (M + M.T)
    dM = 0.5 * (dM + dM.T)
    C = dM + B - B.T
    K = dB - 0.5 * (Lqq + Lqq.T)
    return VariationalMatrices(M, C, K)


def variational_accel(matrices: VariationalMatrices, eps, epsdot) -> np.ndarray:
    """epsddot from ``M epsddot = -C epsdot - K eps``."""
    eps = np.asarray(eps, dtype=float)
    epsdot = np.asarray(epsdot, dtype=float)
    rhs = -(matrices.C @ epsdot) - matrices.K @ eps
    return _solve(matrices.M, rhs, "variational mass matrix")


def linearize_accel_oracle(model: LagrangianModel, q, qdot, t=0.0):
    """(da/dq, da/dqdot) of the acceleration map, by differentiating the solve.

    The Euler-Lagrange solve runs on dual inputs, so no matrix C or K is ever
    formed; this is the independent check on :func:`variational_accel`.
    """
    _check_dimension(model, q, qdot)
    n = model.dimension
    x, _ = lift([*map(float, q), *map(float, qdot)], [_identity(2 * n)])
    acc = _accel(model, x[:n], x[n:], float(t))
    J = np.array([[part(a, (k,)) for k in range(2 * n)] for a in acc])
    if not np.all(np.isfinite(J)):
        raise EvaluationDomainError(f"{model.name}: non-finite linearisation")
    return J[:, :n], J[:, n:]


def el_accel_on_gamma(model: LagrangianModel, state: ExtendedState, prolonged=None):
    """(qddot, epsddot) from the Euler-Lagrange equations of gamma on D.

    ``prolonged`` overrides the Lagrangian on D, e.g. with a gauge term added.
    """
    _check_dimension(model, state.q)
    gam = prolonged if prolonged is not None else prolong(model)
    n = model.dimension
    acc = _accel(gam, [*state.q, *state.eps], [*state.qdot, *state.epsdot], state.t)
    acc = np.asarray(acc, dtype=float)
    return acc[:n], acc[n:]


def hessian_w(model: LagrangianModel, state: ExtendedState) -> HessianW:
    """W from the second partials of L, and again as 1/2 D_eps gamma."""
    _check_dimension(model, state.q)
    n = model.dimension
    H = hessian(_flat(model), [*state.q, *state.qdot, state.t])
    Lqq, Lqv, Lvv = H[:n, :n], H[:n, n:2 * n], H[n:2 * n, n:2 * n]
    eps, epsdot = state.eps, state.epsdot
    direct = 0.5 * eps @ Lqq @ eps + eps @ Lqv @ epsdot + 0.5 * epsdot @ Lvv @ epsdot

    # D_eps moves q along eps and qdot along epsdot, leaving eps, epsdot fixed
    zeros = np.zeros(n)
    direction = np.concatenate([eps, zeros, epsdot, zeros, [0.0]])
    y = evaluate_jet(_flat(prolong(model)), _extended_args(state), [[direction]])
    operator = 0.5 * part(y, (0,))
    return HessianW(float(direct), float(operator))


def total_derivative_series(model: LagrangianModel, samples: Sequence[ExtendedState]):
    """(t, gamma - d/dt(dgamma/depsdot . eps)) at the interior samples.

    The time derivative is a second-order centred difference on the sample
    grid (non-uniform spacing allowed), so the residual scales as h**2.
    """
    if len(samples) < 3:
        raise ValueError("the total-derivative identity needs at least 3 samples")
    n = model.dimension
    times = np.array([s.t for s in samples])
    gam = np.empty(len(samples))
    P = np.empty(len(samples))
    for i, s in enumerate(samples):
        g = _gamma_gradient(model, s)
        gam[i] = eval_gamma(model, s)
        P[i] = g[3 * n:4 * n] @ s.eps
    dP = np.gradient(P, times)
    return times[1:-1], gam[1:-1] - dP[1:-1]


def total_derivative_identity(model: LagrangianModel, samples: Sequence[ExtendedState]) -> float:
    """Max |gamma - d/dt(dgamma/depsdot . eps)| over interior samples."""
    return float(np.max(np.abs(total_derivative_series(model, samples)[1])))
