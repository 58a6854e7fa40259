"""Conserved quantities, Noether charges, drift checks and Lyapunov spectra.

Everything here is restricted to one-parameter symmetry groups acting on
mechanics (one time parameter), so every Noether current is a scalar charge.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .derivtower import Dual, lift, lifted_gradient, peel, primal
from .dynamics import IntegratorSpec, Trajectory, integrate_ode, original_fn
from .models import LagrangianModel
from .prolongation import (
    ExtendedState,
    el_accel,
    prolong,
    variational_accel,
    variational_matrices,
)

__all__ = [
    "ScalarObservable",
    "ExtendedObservable",
    "PointSymmetry",
    "DriftReport",
    "LyapunovResult",
    "LyapunovOverflowError",
    "energy",
    "momentum",
    "charge_L",
    "charge_gamma",
    "inherited",
    "inherited_constant",
    "noether_charge_L",
    "noether_charge_gamma",
    "inherited_relation_check",
    "symmetry_residual",
    "drift_report",
    "drift_of",
    "lyapunov_spectrum",
    "two_trajectory_lyapunov",
]

DRIFT_THRESHOLD = 1e-7
DRIFT_FLOOR = 1e-12
OVERFLOW_NORM = 1e100


# observables ---------------------------------------------------------------


@dataclass(frozen=True)
class ScalarObservable:
    """A function J(q, qdot, t) built from dual-aware operations."""

    name: str
    evaluate: Callable

    def __call__(self, q, qdot, t=0.0):
        return self.evaluate(q, qdot, t)

    def on_state(self, state: ExtendedState) -> float:
        return float(primal(self.evaluate(list(state.q), list(state.qdot), state.t)))


@dataclass(frozen=True)
class ExtendedObservable:
    """A function of the full extended state (q, qdot, eps, epsdot, t)."""

    name: str
    evaluate: Callable[[ExtendedState], float]

    def on_state(self, state: ExtendedState) -> float:
        return float(self.evaluate(state))


def _partials(model: LagrangianModel, q, qdot, t):
    """L and its first partials in (q, qdot, t), lifted over any dual inputs."""
    n = model.dimension
    value, g = lifted_gradient(lambda x: model.function(x[:n], x[n:2 * n], x[2 * n]),
                               [*q, *qdot, t])
    return value, g[:n], g[n:2 * n], g[2 * n]


def energy(model: LagrangianModel) -> ScalarObservable:
    """Jacobi integral E = p . qdot - L; conserved when L has no explicit t."""

    def E(q, qdot, t=0.0):
        value, _, p, _ = _partials(model, q, qdot, t)
        s = -value
        for a in range(model.dimension):
            s = s + p[a] * qdot[a]
        return s

    return ScalarObservable("E", E)


def momentum(model: LagrangianModel, index: int) -> ScalarObservable:
    """Conjugate momentum dL/dqdot^index."""
    if not 0 <= index < model.dimension:
        raise IndexError(f"{model.name} has no coordinate {index}")

    def p(q, qdot, t=0.0):
        return _partials(model, q, qdot, t)[2][index]

    return ScalarObservable(f"p_{index}", p)


# symmetry generators -------------------------------------------------------


def _positional_arity(fn) -> int:
    try:
        params = inspect.signature(fn).parameters.values()
    except (TypeError, ValueError):
        return 2
    return sum(p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD) for p in params)


@dataclass(frozen=True)
class PointSymmetry:
    """Infinitesimal generators of a one-parameter point transformation.

    ``zeta`` moves q, ``eta`` moves eps and ``xi`` moves t.  Each is either
    a constant or a callable; ``zeta`` and ``xi`` take (q, t), ``eta`` takes
    (q, t) or (q, eps, t).  Missing generators are zero.
    """

    zeta: object = None
    xi: object = 0.0
    eta: object = None
    name: str = "V"

    def __post_init__(self):
        for label in ("zeta", "eta"):
            g = getattr(self, label)
            if g is not None and not callable(g):
                object.__setattr__(self, label, tuple(float(v) for v in np.ravel(g)))
        if not callable(self.xi):
            object.__setattr__(self, "xi", float(self.xi))
        if self.is_constant and not (any(self.zeta or ()) or any(self.eta or ()) or self.xi):
            raise ValueError(f"symmetry {self.name}: every generator is zero")

    @property
    def is_constant(self) -> bool:
        return not any(callable(g) for g in (self.zeta, self.xi, self.eta))

    @property
    def acts_on_q_only(self) -> bool:
        """True when eta vanishes identically (declared as absent or zero)."""
        return self.eta is None or (not callable(self.eta) and not any(self.eta))

    def generators(self, q, eps, t):
        """(zeta, xi, eta) at a point; works on floats and duals alike."""
        n = len(q)
        zeta = self._vector(self.zeta, n, q, t)
        if callable(self.eta) and _positional_arity(self.eta) == 3:
            eta = list(self.eta(q, eps, t))
        else:
            eta = self._vector(self.eta, n, q, t)
        xi = self.xi(q, t) if callable(self.xi) else self.xi
        if len(zeta) != n or len(eta) != n:
            raise ValueError(f"symmetry {self.name}: generators must have {n} components")
        return zeta, xi, eta

    @staticmethod
    def _vector(g, n, q, t):
        if g is None:
            return [0.0] * n
        if callable(g):
            return list(g(q, t))
        return list(g)


def _charge(value, p, coords_gen, xi, velocities):
    """value*xi + p . (gen - v*xi) for one Lagrangian and one generator."""
    s = value * xi
    for a in range(len(p)):
        s = s + p[a] * (coords_gen[a] - velocities[a] * xi)
    return s


def _charge_L_expr(model, sym, q, qdot, t):
    if not sym.acts_on_q_only:
        raise ValueError(f"symmetry {sym.name} moves eps; the charge of L needs eta = 0")
    value, _, p, _ = _partials(model, q, qdot, t)
    zeta, xi, _ = sym.generators(q, [0.0] * model.dimension, t)
    return _charge(value, p, zeta, xi, qdot)


def noether_charge_L(model: LagrangianModel, sym: PointSymmetry, q, qdot, t=0.0) -> float:
    """J = L xi + p . (zeta - qdot xi)."""
    return float(primal(_charge_L_expr(model, sym, list(q), list(qdot), t)))


def charge_L(model: LagrangianModel, sym: PointSymmetry) -> ScalarObservable:
    """The charge of L as an observable, so D_eps can act on it."""
    return ScalarObservable(f"J[{sym.name}]",
                            lambda q, qdot, t=0.0: _charge_L_expr(model, sym, q, qdot, t))


def noether_charge_gamma(model: LagrangianModel, sym: PointSymmetry, state: ExtendedState,
                         prolonged: Optional[LagrangianModel] = None) -> float:
    """j = gamma xi + dgamma/dqdot . (zeta - qdot xi) + dgamma/depsdot . (eta - epsdot xi)."""
    gamma = prolonged or prolong(model)
    n = model.dimension
    q, eps, t = list(state.q), list(state.eps), state.t
    Qd = [*state.qdot, *state.epsdot]
    value, g = lifted_gradient(lambda x: gamma.function(x[:2 * n], x[2 * n:4 * n], x[4 * n]),
                               [*q, *eps, *Qd, t])
    zeta, xi, eta = sym.generators(q, eps, t)
    return float(primal(_charge(value, g[2 * n:4 * n], [*zeta, *eta], xi, Qd)))


def charge_gamma(model: LagrangianModel, sym: PointSymmetry) -> ExtendedObservable:
    gamma = prolong(model)
    return ExtendedObservable(f"j[{sym.name}]",
                              lambda s: noether_charge_gamma(model, sym, s, gamma))


# D_eps -----------------------------------------------------------------------


def inherited_constant(J, state: ExtendedState) -> float:
    """j = dJ/dq . eps + dJ/dqdot . epsdot at ``state``."""
    n = state.n
    direction = [*state.eps, *state.epsdot, 0.0]
    args, base = lift([*state.q, *state.qdot, state.t], [[direction]])
    y = J(args[:n], args[n:2 * n], args[2 * n])
    return float(primal(peel(y, base, (0,))))


def inherited(J: ScalarObservable) -> ExtendedObservable:
    return ExtendedObservable(f"D_eps {J.name}", lambda s: inherited_constant(J, s))


def inherited_relation_check(model: LagrangianModel, sym: PointSymmetry,
                             J: Optional[ScalarObservable], state: ExtendedState) -> float:
    """|j_gamma - D_eps J| for a symmetry acting on q only.

    ``J`` defaults to the Noether charge of L for the same generators.  For
    constant generators the two coincide; a non-constant generator that is
    still a symmetry of gamma generally breaks the equality.
    """
    if not sym.acts_on_q_only:
        raise ValueError(f"symmetry {sym.name} moves eps; the relation needs eta = 0")
    if J is None:
        J = charge_L(model, sym)
    return abs(noether_charge_gamma(model, sym, state) - inherited_constant(J, state))


def symmetry_residual(model: LagrangianModel, sym: PointSymmetry,
                      states: Sequence[ExtendedState]) -> float:
    """Max over ``states`` of the first-order change of gamma dt under ``sym``.

    The prolonged generator moves (q, eps) by (zeta, eta), t by xi, and the
    velocities by D_t(zeta, eta) - (qdot, epsdot) D_t xi; the change of the
    measure contributes gamma D_t xi.  A strict symmetry scores zero.
    """
    gamma = prolong(model)
    n = model.dimension
    worst = 0.0
    for s in states:
        value, g = lifted_gradient(
            lambda x: gamma.function(x[:2 * n], x[2 * n:4 * n], x[4 * n]),
            [*s.q, *s.eps, *s.qdot, *s.epsdot, s.t])
        value, g = primal(value), [primal(v) for v in g]
        # generators and their total time derivatives along the flow
        flow = [*s.qdot, *s.epsdot, 1.0]
        args, base = lift([*s.q, *s.eps, s.t], [[flow]])
        zeta, xi, eta = sym.generators(args[:n], args[n:2 * n], args[2 * n])
        Z = [*zeta, *eta]
        Zv = [primal(peel(z, base, (None,))) for z in Z]
        DZ = [primal(peel(z, base, (0,))) for z in Z]
        xi_v, Dxi = primal(peel(xi, base, (None,))), primal(peel(xi, base, (0,)))
        Qd = flow[:-1]
        r = xi_v * g[4 * n] + value * Dxi
        for A in range(2 * n):
            r += Zv[A] * g[A] + (DZ[A] - Qd[A] * Dxi) * g[2 * n + A]
        worst = max(worst, abs(r))
    return worst


# drift -----------------------------------------------------------------------


@dataclass(frozen=True)
class DriftReport:
    name: str
    initial: float
    max_drift: float
    relative_drift: float
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "initial": self.initial, "max_drift": self.max_drift,
                "relative_drift": self.relative_drift, "threshold": self.threshold,
                "passed": self.passed}


def observable_series(trajectory: Trajectory, observable) -> np.ndarray:
    return np.array([observable.on_state(s) for s in trajectory.samples])


def drift_report(trajectory: Trajectory, observables, threshold: float = DRIFT_THRESHOLD,
                 floor: float = DRIFT_FLOOR) -> list:
    """Max |v(t) - v(0)| per observable, relative to max(|v(0)|, floor)."""
    return [drift_of(ob.name, observable_series(trajectory, ob), threshold, floor)
            for ob in observables]


def drift_of(name: str, values, threshold: float = DRIFT_THRESHOLD,
             floor: float = DRIFT_FLOOR) -> DriftReport:
    values = np.asarray(values, dtype=float)
    v0 = float(values[0])
    drift = float(np.max(np.abs(values - v0)))
    rel = drift / max(abs(v0), floor)
    return DriftReport(name, v0, drift, rel, threshold, bool(rel < threshold))


# Lyapunov spectra ------------------------------------------------------------


class LyapunovOverflowError(ArithmeticError):
    """Deviation vectors blew up before they could be renormalized."""


@dataclass(frozen=True)
class LyapunovResult:
    exponents: np.ndarray
    times: np.ndarray
    running: np.ndarray  # running estimates, one row per renormalization
    renorm_interval: float
    steps: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"exponents": self.exponents.tolist(), "renorm_interval": self.renorm_interval,
                "renormalizations": int(len(self.times)), "steps": self.steps,
                "t_total": float(self.times[-1] - self.extra.get("t0", 0.0))
                if len(self.times) else 0.0}


def _gram_schmidt(V: np.ndarray):
    """Classical Gram-Schmidt, applied twice for stability; returns (Q, diag R)."""
    Q = np.zeros_like(V)
    r = np.zeros(V.shape[1])
    for k in range(V.shape[1]):
        v = V[:, k].copy()
        for _ in range(2):
            v -= Q[:, :k] @ (Q[:, :k].T @ v)
        r[k] = np.linalg.norm(v)
        if not r[k] > 0:
            raise LyapunovOverflowError(f"deviation vector {k} collapsed onto the others")
        Q[:, k] = v / r[k]
    return Q, r


def _chunks(t0, t_total, interval):
    n = max(1, math.ceil(t_total / interval - 1e-9))
    return [(t0 + i * interval, t0 + t_total if i == n - 1 else t0 + (i + 1) * interval)
            for i in range(n)]


def _bundle_fn(model: LagrangianModel, k: int):
    n = model.dimension

    def f(t, y):
        q, qdot = y[:n], y[n:2 * n]
        qddot = el_accel(model, q, qdot, t)
        mats = variational_matrices(model, q, qdot, qddot, t)
        out = [qdot, qddot]
        for b in range(k):
            e = y[2 * n + 2 * n * b: 2 * n + 2 * n * (b + 1)]
            out += [e[n:], variational_accel(mats, e[:n], e[n:])]
        return np.concatenate(out)

    return f


def _run_chunk(f, y, t0, t1, spec):
    res = integrate_ode(f, y, spec.with_span(t0, t1))
    if res.termination != "completed":
        raise ArithmeticError(f"integration ended with {res.termination} at t={res.times[-1]:.6g}: "
                              f"{res.message}")
    return res.ys[-1], res.accepted


def lyapunov_spectrum(model: LagrangianModel, q0, qdot0, n_exponents: Optional[int] = None,
                      renorm_interval: float = 1.0, t_total: float = 100.0,
                      spec: Optional[IntegratorSpec] = None, t0: float = 0.0) -> LyapunovResult:
    """Benettin estimate from ``n_exponents`` copies of the variational block.

    The bundle starts as the first canonical directions of (eps, epsdot)
    space and is re-orthonormalized every ``renorm_interval``.
    """
    n = model.dimension
    k = 2 * n if n_exponents is None else int(n_exponents)
    if not 1 <= k <= 2 * n:
        raise ValueError(f"n_exponents must be in [1, {2 * n}]")
    if not renorm_interval > 0 or not t_total > 0:
        raise ValueError("renorm_interval and t_total must be positive")
    spec = spec or IntegratorSpec()
    f = _bundle_fn(model, k)
    base = np.concatenate([np.asarray(q0, float), np.asarray(qdot0, float)])
    V = np.eye(2 * n)[:, :k]
    logs = np.zeros(k)
    times, running, steps = [], [], 0
    for a, b in _chunks(t0, t_total, renorm_interval):
        y, acc = _run_chunk(f, np.concatenate([base, V.T.ravel()]), a, b, spec)
        steps += acc
        base = y[:2 * n]
        V = y[2 * n:].reshape(k, 2 * n).T
        norms = np.linalg.norm(V, axis=0)
        if not np.all(np.isfinite(norms)) or np.max(norms) > OVERFLOW_NORM:
            raise LyapunovOverflowError(
                f"deviation norm exceeded {OVERFLOW_NORM:g} before renormalization at t={b:.6g}; "
                "use a smaller renorm_interval")
        V, r = _gram_schmidt(V)
        logs += np.log(r)
        times.append(b)
        running.append(logs / (b - t0))
    return LyapunovResult(logs / t_total, np.array(times), np.array(running),
                          renorm_interval, steps, {"t0": t0})


def two_trajectory_lyapunov(model: LagrangianModel, q0, qdot0, delta: float = 1e-7,
                            renorm_interval: float = 1.0, t_total: float = 100.0,
                            spec: Optional[IntegratorSpec] = None, t0: float = 0.0,
                            direction=None) -> LyapunovResult:
    """Largest exponent from two nearby solutions of the original equations.

    The pair is integrated as one system so both see the same steps; their
    phase-space separation is rescaled back to ``delta`` every interval.
    No variational equation is involved.
    """
    n = model.dimension
    if not delta > 0:
        raise ValueError("delta must be positive")
    spec = spec or IntegratorSpec()
    g = original_fn(model)

    def f(t, y):
        return np.concatenate([g(t, y[:2 * n]), g(t, y[2 * n:])])

    u = np.eye(2 * n)[0] if direction is None else np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    base = np.concatenate([np.asarray(q0, float), np.asarray(qdot0, float)])
    other = base + delta * u
    total, times, running, steps = 0.0, [], [], 0
    for a, b in _chunks(t0, t_total, renorm_interval):
        y, acc = _run_chunk(f, np.concatenate([base, other]), a, b, spec)
        steps += acc
        base, d = y[:2 * n], y[2 * n:] - y[:2 * n]
        r = np.linalg.norm(d)
        if not r > 0 or not np.isfinite(r):
            raise LyapunovOverflowError(f"separation became {r} at t={b:.6g}")
        total += math.log(r / delta)
        other = base + delta * d / r
        times.append(b)
        running.append([total / (b - t0)])
    return LyapunovResult(np.array([total / t_total]), np.array(times), np.array(running),
                          renorm_interval, steps, {"t0": t0, "delta": delta})
