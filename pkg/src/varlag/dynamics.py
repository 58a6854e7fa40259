"""Integration of the extended first-order system (q, qdot, eps, epsdot)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .derivtower import EvaluationDomainError
from .models import LagrangianModel
from .prolongation import (
    DegeneracyError,
    ExtendedState,
    el_accel,
    el_accel_on_gamma,
    prolong,
    variational_accel,
    variational_matrices,
)

__all__ = [
    "IntegratorSpec",
    "Trajectory",
    "DeviationSeries",
    "extended_rhs",
    "integrate",
    "integrate_ode",
    "replay_steps",
    "two_trajectory_oracle",
    "fit_order",
]

METHODS = ("rk4_fixed", "rkf45_adaptive")

# step-size controller; fixed for reproducibility
SAFETY = 0.9
GROWTH_MIN = 0.2
GROWTH_MAX = 5.0


@dataclass(frozen=True)
class IntegratorSpec:
    """Integration method and its controls.

    ``rk4_fixed`` uses ``step``; ``rkf45_adaptive`` uses the tolerances and
    step bounds.  ``output_interval`` (optional) makes both methods land
    exactly on a uniform grid and report only those points.
    """

    method: str = "rkf45_adaptive"
    t_span: tuple = (0.0, 1.0)
    step: float = 1e-2
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float = 0.1
    min_step: float = 1e-12
    output_interval: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        t0, t1 = (float(v) for v in self.t_span)
        object.__setattr__(self, "t_span", (t0, t1))
        if not t1 > t0:
            raise ValueError("t_span must satisfy t1 > t0")
        if self.method == "rk4_fixed" and not self.step > 0:
            raise ValueError("step must be positive")
        if self.method == "rkf45_adaptive":
            if not (self.abs_tol > 0 and self.rel_tol > 0):
                raise ValueError("abs_tol and rel_tol must be positive")
            if not 0 < self.min_step < self.max_step:
                raise ValueError("need 0 < min_step < max_step")
        if self.output_interval is not None and not self.output_interval > 0:
            raise ValueError("output_interval must be positive")

    def with_span(self, t0, t1) -> "IntegratorSpec":
        return IntegratorSpec(self.method, (t0, t1), self.step, self.abs_tol, self.rel_tol,
                              self.max_step, self.min_step, self.output_interval)

    @property
    def tolerance(self) -> float:
        return max(self.abs_tol, self.rel_tol) if self.method == "rkf45_adaptive" else self.step ** 4


@dataclass
class _OdeResult:
    times: np.ndarray
    ys: np.ndarray
    fs: np.ndarray
    accepted: int
    rejected: int
    termination: str
    message: str = ""


@dataclass
class Trajectory:
    """Sampled extended trajectory plus the accepted-step knots behind it."""

    times: np.ndarray
    states: np.ndarray
    accepted_steps: int
    rejected_steps: int
    termination: str
    message: str = ""
    knot_times: np.ndarray = field(default=None, repr=False)
    knot_states: np.ndarray = field(default=None, repr=False)
    knot_derivs: np.ndarray = field(default=None, repr=False)

    @property
    def completed(self) -> bool:
        return self.termination == "completed"

    @property
    def samples(self) -> list:
        return [ExtendedState.from_vector(t, y) for t, y in zip(self.times, self.states)]

    def __len__(self):
        return len(self.times)

    def interpolate(self, t) -> np.ndarray:
        return hermite(self.knot_times, self.knot_states, self.knot_derivs, t)


# right-hand sides ------------------------------------------------------------


def extended_rhs(model: LagrangianModel, state: ExtendedState, route: str = "matrices",
                 prolonged: Optional[LagrangianModel] = None) -> np.ndarray:
    """(qdot, qddot, epsdot, epsddot) at ``state``.

    ``route="matrices"`` solves for qddot, assembles M, C, K at the same point
    and solves the variational equation.  ``route="gamma"`` runs the generic
    Euler-Lagrange solve on the prolonged Lagrangian (or on ``prolonged``).
    """
    if route == "matrices":
        qddot = el_accel(model, state.q, state.qdot, state.t)
        mats = variational_matrices(model, state.q, state.qdot, qddot, state.t)
        epsddot = variational_accel(mats, state.eps, state.epsdot)
    elif route == "gamma":
        qddot, epsddot = el_accel_on_gamma(model, state, prolonged)
    else:
        raise ValueError(f"unknown route {route!r}")
    return np.concatenate([state.qdot, qddot, state.epsdot, epsddot])


def _extended_fn(model, route, prolonged):
    """Array-level twin of :func:`extended_rhs` used inside the integrators."""
    n = model.dimension
    if route == "matrices":
        def f(t, y):
            q, qdot, eps, epsdot = y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:]
            qddot = el_accel(model, q, qdot, t)
            mats = variational_matrices(model, q, qdot, qddot, t)
            return np.concatenate([qdot, qddot, epsdot, variational_accel(mats, eps, epsdot)])
    elif route == "gamma":
        gam = prolonged if prolonged is not None else prolong(model)

        def f(t, y):
            Q = np.concatenate([y[:n], y[2 * n:3 * n]])
            Qd = np.concatenate([y[n:2 * n], y[3 * n:]])
            acc = el_accel(gam, Q, Qd, t)
            return np.concatenate([Qd[:n], acc[:n], Qd[n:], acc[n:]])
    else:
        raise ValueError(f"unknown route {route!r}")
    return f


def original_fn(model: LagrangianModel):
    """Right-hand side of the original system on (q, qdot)."""
    n = model.dimension

    def f(t, y):
        return np.concatenate([y[n:], el_accel(model, y[:n], y[n:], t)])

    return f


# Runge-Kutta steps -----------------------------------------------------------

# Fehlberg 4(5) tableau
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_E = tuple(b5 - b4 for b5, b4 in zip(_B5, _B4))


def _rk4_step(f, t, y, h, k1):
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), None


def _rkf45_step(f, t, y, h, k1):
    """One Fehlberg step; returns the fifth-order update and the error vector."""
    k = [k1]
    for i in range(1, 6):
        yi = y.copy()
        for a, kj in zip(_A[i], k):
            if a:
                yi = yi + (h * a) * kj
        k.append(f(t + _C[i] * h, yi))
    y5 = y.copy()
    err = np.zeros_like(y)
    for b, e, kj in zip(_B5, _E, k):
        if b:
            y5 = y5 + (h * b) * kj
        if e:
            err = err + (h * e) * kj
    return y5, err


_STEPPERS = {"rk4_fixed": _rk4_step, "rkf45_adaptive": _rkf45_step}

_STOP = {DegeneracyError: "degenerate_M", EvaluationDomainError: "domain_error"}


def _termination_for(exc):
    for cls, name in _STOP.items():
        if isinstance(exc, cls):
            return name
    raise exc


def integrate_ode(f: Callable, y0, spec: IntegratorSpec) -> _OdeResult:
    """Integrate ``y' = f(t, y)`` over ``spec.t_span``.

    Returns every accepted step as a knot, with the derivative at each knot
    for Hermite dense output.  With ``spec.output_interval`` set, steps are
    shortened so that every output time is hit exactly.  Degenerate mass
    matrices and evaluation failures end the run early with the matching
    termination tag.
    """
    t0, t1 = spec.t_span
    stops = (_output_grid(t0, t1, spec.output_interval)[1:]
             if spec.output_interval is not None else np.array([t1]))
    y = np.array(y0, dtype=float)
    times, ys, fs = [t0], [y.copy()], []
    accepted = rejected = 0
    step_fn = _STEPPERS[spec.method]

    def finish(termination, message=""):
        # the derivative at the final knot is needed for interpolation
        if len(fs) < len(ys):
            try:
                fs.append(f(times[-1], ys[-1]))
            except (DegeneracyError, EvaluationDomainError):
                fs.append(fs[-1] if fs else np.zeros_like(y))
        return _OdeResult(np.array(times), np.array(ys), np.array(fs),
                          accepted, rejected, termination, message)

    t = t0
    try:
        k1 = f(t, y)
    except (DegeneracyError, EvaluationDomainError) as exc:
        return finish(_termination_for(exc), str(exc))
    fs.append(k1)

    if spec.method == "rk4_fixed":
        # equal steps no longer than ``step`` between consecutive stops
        for a, b in zip([t0, *stops[:-1]], stops):
            n_steps = max(1, math.ceil((b - a) / spec.step - 1e-9))
            for i in range(n_steps):
                t_next = b if i == n_steps - 1 else a + (i + 1) * (b - a) / n_steps
                try:
                    y, _ = step_fn(f, t, y, t_next - t, k1)
                    k1 = f(t_next, y)
                except (DegeneracyError, EvaluationDomainError) as exc:
                    return finish(_termination_for(exc), str(exc))
                t = t_next
                accepted += 1
                times.append(t)
                ys.append(y.copy())
                fs.append(k1)
        return finish("completed")

    h = min(spec.max_step, 0.01 * (t1 - t0))
    stop_index = 0
    while t < t1:
        target = stops[stop_index]
        landing = t + h >= target or (target - (t + h)) < spec.min_step
        h_free = h
        if landing:
            h = target - t
        try:
            y_new, err = step_fn(f, t, y, h, k1)
        except (DegeneracyError, EvaluationDomainError) as exc:
            return finish(_termination_for(exc), str(exc))
        scale = spec.abs_tol + spec.rel_tol * max(np.max(np.abs(y)), np.max(np.abs(y_new)))
        ratio = float(np.max(np.abs(err))) / scale if np.isfinite(err).all() else np.inf
        if ratio <= 1.0:
            t_new = target if landing else t + h
            try:
                k_new = f(t_new, y_new)
            except (DegeneracyError, EvaluationDomainError) as exc:
                return finish(_termination_for(exc), str(exc))
            t, y, k1 = t_new, y_new, k_new
            accepted += 1
            times.append(t)
            ys.append(y.copy())
            fs.append(k1)
            factor = GROWTH_MAX if ratio == 0 else SAFETY * ratio ** -0.2
            h = min(spec.max_step, h * min(GROWTH_MAX, max(GROWTH_MIN, factor)))
            if landing:
                stop_index += 1
                # a step shortened only to hit an output time says nothing
                # about the step the error allows
                h = max(h, min(h_free, spec.max_step))
        else:
            rejected += 1
            factor = SAFETY * ratio ** -0.2 if np.isfinite(ratio) else GROWTH_MIN
            h = h * min(1.0, max(GROWTH_MIN, factor))
            if h < spec.min_step:
                return finish("step_underflow",
                              f"required step {h:.3g} below min_step {spec.min_step:.3g} at t={t:.6g}")
    return finish("completed")


def replay_steps(f: Callable, y0, times: Sequence[float], method: str) -> np.ndarray:
    """Apply the given method along a prescribed grid of step endpoints."""
    step_fn = _STEPPERS[method]
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    for t, t_next in zip(times[:-1], times[1:]):
        y, _ = step_fn(f, t, y, t_next - t, f(t, y))
        out.append(y.copy())
    return np.array(out)


def hermite(knot_t, knot_y, knot_f, t):
    """Cubic Hermite interpolation between accepted steps."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.clip(np.searchsorted(knot_t, t, side="right") - 1, 0, len(knot_t) - 2)
    out = np.empty((len(t), knot_y.shape[1]))
    for j, (i, tj) in enumerate(zip(idx, t)):
        h = knot_t[i + 1] - knot_t[i]
        s = (tj - knot_t[i]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out[j] = (h00 * knot_y[i] + h10 * h * knot_f[i]
                  + h01 * knot_y[i + 1] + h11 * h * knot_f[i + 1])
        if tj == knot_t[i + 1]:
            out[j] = knot_y[i + 1]
        elif tj == knot_t[i]:
            out[j] = knot_y[i]
    return out


def _output_grid(t0, t1, interval):
    n = int(math.floor((t1 - t0) / interval + 1e-9))
    grid = t0 + interval * np.arange(n + 1)
    if t1 - grid[-1] > 1e-9 * interval:
        grid = np.append(grid, t1)
    else:
        grid[-1] = t1
    return grid


def _to_trajectory(res: _OdeResult, spec: IntegratorSpec) -> Trajectory:
    times, states = res.times, res.ys
    if spec.output_interval is not None:
        # knots include every output time exactly; keep just those
        grid = _output_grid(*spec.t_span, spec.output_interval)
        keep = np.isin(res.times, grid)
        times, states = res.times[keep], res.ys[keep]
    return Trajectory(times, states, res.accepted, res.rejected, res.termination,
                      res.message, res.times, res.ys, res.fs)


def integrate(model: LagrangianModel, initial: ExtendedState, spec: IntegratorSpec,
              route: str = "matrices", prolonged: Optional[LagrangianModel] = None) -> Trajectory:
    """Integrate the coupled Euler-Lagrange and variational equations.

    ``initial.t`` is ignored in favour of ``spec.t_span[0]``.
    """
    if initial.n != model.dimension:
        raise ValueError(f"initial state has dimension {initial.n}, model {model.dimension}")
    f = _extended_fn(model, route, prolonged)
    return _to_trajectory(integrate_ode(f, initial.vector(), spec), spec)


# two-trajectory oracle -----------------------------------------------------


@dataclass
class DeviationSeries:
    """Finite-difference deviation (q' - q)/delta against the integrated eps."""

    times: np.ndarray
    deviation: np.ndarray
    eps: np.ndarray
    delta: float

    @property
    def error(self) -> np.ndarray:
        return np.linalg.norm(self.deviation - self.eps, axis=1)

    @property
    def max_error(self) -> float:
        return float(np.max(self.error))


def two_trajectory_oracle(model: LagrangianModel, base: ExtendedState, direction,
                          delta: float, spec: IntegratorSpec,
                          trajectory: Optional[Trajectory] = None) -> DeviationSeries:
    """Compare eps(t) with the difference quotient of two ordinary solutions.

    The extended system is integrated from ``base`` with eps(0), epsdot(0)
    taken from ``direction``.  The original system (eps ignored) is then run
    from (q, qdot) and from (q, qdot) + delta*(eps0, epsdot0) with the very
    same step sequence, and (q'(t) - q(t))/delta is returned on that grid.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    n = model.dimension
    eps0, epsdot0 = (np.asarray(d, dtype=float) for d in direction)
    start = ExtendedState(spec.t_span[0], base.q, base.qdot, eps0, epsdot0)
    if trajectory is None:
        trajectory = integrate(model, start, IntegratorSpec(
            spec.method, spec.t_span, spec.step, spec.abs_tol, spec.rel_tol,
            spec.max_step, spec.min_step))
    if not trajectory.completed:
        raise RuntimeError(f"base integration ended with {trajectory.termination}: "
                           f"{trajectory.message}")
    grid = trajectory.knot_times
    f = original_fn(model)
    y0 = np.concatenate([base.q, base.qdot])
    dy = np.concatenate([eps0, epsdot0])
    ref = replay_steps(f, y0, grid, spec.method)
    pert = replay_steps(f, y0 + delta * dy, grid, spec.method)
    deviation = (pert[:, :n] - ref[:, :n]) / delta
    return DeviationSeries(grid, deviation, trajectory.knot_states[:, 2 * n:3 * n], delta)


def fit_order(deltas: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(delta)."""
    x = np.log(np.asarray(deltas, dtype=float))
    y = np.log(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    return float(np.polyfit(x, y, 1)[0])
