"""Lagrangian models and the built-in library of mechanical systems."""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from .derivtower import cos, lifted_gradient

__all__ = [
    "ModelError",
    "LagrangianModel",
    "GaugeTerm",
    "BUILTINS",
    "builtin",
    "with_gauge",
    "random_state",
]


class ModelError(ValueError):
    """Unknown model, bad parameters, or an ill-formed gauge term."""


@dataclass(frozen=True, eq=False)
class LagrangianModel:
    """An evaluatable L(q, qdot, t) in ``dimension`` degrees of freedom.

    ``function`` receives sequences of scalars (floats or duals) and must be
    written with the dual-aware operations of :mod:`varlag.derivtower`.
    Parameters are frozen at construction; build a new model to vary them.
    """

    name: str
    dimension: int
    function: Callable
    parameters: Mapping[str, float] = field(default_factory=dict)
    time_dependent: bool = False
    formula: str = ""
    coordinates: tuple = ()
    notes: str = ""

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ModelError(f"{self.name}: dimension must be positive")
        object.__setattr__(self, "parameters", MappingProxyType(dict(self.parameters)))

    def evaluate(self, q: Sequence, qdot: Sequence, t=0.0):
        return self.function(q, qdot, t)

    def __call__(self, q, qdot, t=0.0):
        return self.function(q, qdot, t)


# built-in library ----------------------------------------------------------


@dataclass(frozen=True)
class _Builtin:
    make: Callable[[Mapping[str, float]], Callable]
    defaults: Mapping[str, float]
    dimension: Callable[[Mapping[str, float]], int]
    formula: str
    coordinates: tuple
    positive: tuple = ()
    time_dependent: bool = False
    notes: str = ""
    # box (q_lo, q_hi, qdot_lo, qdot_hi) for random test states
    state_box: tuple = (-1.0, 1.0, -1.0, 1.0)


def _free_particle(p):
    m = p["m"]

    def L(q, qd, t):
        s = 0.0
        for v in qd:
            s = s + v * v
        return 0.5 * m * s

    return L


def _harmonic_oscillator(p):
    m, k = p["m"], p["k"]

    def L(q, qd, t):
        return 0.5 * m * qd[0] * qd[0] - 0.5 * k * q[0] * q[0]

    return L


def _pendulum(p):
    m, g, l = p["m"], p["g"], p["l"]

    def L(q, qd, t):
        return 0.5 * m * l * l * qd[0] * qd[0] + m * g * l * cos(q[0])

    return L


def _kepler_polar(p):
    mu = p["mu"]

    def L(q, qd, t):
        r = q[0]
        return 0.5 * (qd[0] * qd[0] + r * r * qd[1] * qd[1]) + mu / r

    return L


def _double_pendulum(p):
    m1, m2, l1, l2, g = p["m1"], p["m2"], p["l1"], p["l2"], p["g"]

    def L(q, qd, t):
        a, b = q
        wa, wb = qd
        kinetic = (0.5 * (m1 + m2) * l1 * l1 * wa * wa
                   + 0.5 * m2 * l2 * l2 * wb * wb
                   + m2 * l1 * l2 * wa * wb * cos(a - b))
        potential = -(m1 + m2) * g * l1 * cos(a) - m2 * g * l2 * cos(b)
        return kinetic - potential

    return L


def _henon_heiles(p):
    def L(q, qd, t):
        x, y = q
        return (0.5 * (qd[0] * qd[0] + qd[1] * qd[1])
                - 0.5 * (x * x + y * y) - x * x * y + y * y * y / 3.0)

    return L


def _driven_oscillator(p):
    amplitude, omega = p["A"], p["omega"]

    def L(q, qd, t):
        return 0.5 * qd[0] * qd[0] - 0.5 * q[0] * q[0] + q[0] * amplitude * cos(omega * t)

    return L


BUILTINS: dict[str, _Builtin] = {
    "free_particle": _Builtin(
        _free_particle, {"m": 1.0, "n": 1}, lambda p: int(p["n"]),
        "L = 1/2 m |qdot|^2", ("q_i: Cartesian position components",),
        positive=("m", "n"),
        notes="every coordinate is ignorable; n sets the dimension",
        state_box=(-2.0, 2.0, -2.0, 2.0)),
    "harmonic_oscillator": _Builtin(
        _harmonic_oscillator, {"m": 1.0, "k": 1.0}, lambda p: 1,
        "L = 1/2 m qdot^2 - 1/2 k q^2", ("q: displacement",),
        positive=("m", "k"), state_box=(-2.0, 2.0, -2.0, 2.0)),
    "pendulum": _Builtin(
        _pendulum, {"m": 1.0, "g": 1.0, "l": 1.0}, lambda p: 1,
        "L = 1/2 m l^2 qdot^2 + m g l cos(q)", ("q: angle from the downward vertical",),
        positive=("m", "g", "l"), state_box=(-2.0, 2.0, -1.0, 1.0)),
    "kepler_polar": _Builtin(
        _kepler_polar, {"mu": 1.0}, lambda p: 2,
        "L = 1/2 (rdot^2 + r^2 thetadot^2) + mu/r",
        ("q_0 = r: radial distance", "q_1 = theta: polar angle"),
        positive=("mu",),
        notes="theta is ignorable (absent from L); p_theta = r^2 thetadot is conserved",
        state_box=(0.7, 1.5, -0.3, 0.3)),
    "double_pendulum": _Builtin(
        _double_pendulum, {"m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0, "g": 1.0},
        lambda p: 2,
        "L = 1/2 (m1+m2) l1^2 a'^2 + 1/2 m2 l2^2 b'^2 + m2 l1 l2 a' b' cos(a-b)"
        " + (m1+m2) g l1 cos(a) + m2 g l2 cos(b)",
        ("q_0 = a: absolute angle of the upper rod", "q_1 = b: absolute angle of the lower rod"),
        positive=("m1", "m2", "l1", "l2", "g"),
        notes="det M = m2 l1^2 l2^2 (m1 + m2 sin^2(a-b)) > 0, so M never degenerates",
        state_box=(-0.5, 0.5, -0.5, 0.5)),
    "henon_heiles": _Builtin(
        _henon_heiles, {}, lambda p: 2,
        "L = 1/2 (xdot^2 + ydot^2) - 1/2 (x^2 + y^2) - x^2 y + y^3/3",
        ("q_0 = x", "q_1 = y"),
        notes="escape energy 1/6; chaotic orbits fill much of the section near it",
        state_box=(-0.3, 0.3, -0.3, 0.3)),
    "driven_oscillator": _Builtin(
        _driven_oscillator, {"A": 1.0, "omega": 1.0}, lambda p: 1,
        "L = 1/2 qdot^2 - 1/2 q^2 + q A cos(omega t)", ("q: displacement",),
        time_dependent=True, state_box=(-2.0, 2.0, -2.0, 2.0)),
}


def builtin(name: str, **parameters) -> LagrangianModel:
    """Build a library model; unspecified parameters take their defaults."""
    try:
        spec = BUILTINS[name]
    except KeyError:
        raise ModelError(
            f"unknown model {name!r}; choose one of {', '.join(sorted(BUILTINS))}"
        ) from None
    unknown = set(parameters) - set(spec.defaults)
    if unknown:
        raise ModelError(f"{name}: unknown parameter(s) {', '.join(sorted(unknown))}")
    params = {**spec.defaults, **parameters}
    for key, value in params.items():
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ModelError(f"{name}: parameter {key} must be a real number") from None
        if not math.isfinite(value):
            raise ModelError(f"{name}: parameter {key} must be finite")
        if key in spec.positive and value <= 0:
            raise ModelError(f"{name}: parameter {key} must be positive, got {value}")
        params[key] = value
    if name == "free_particle":
        if params["n"] != int(params["n"]):
            raise ModelError("free_particle: parameter n must be an integer")
        params["n"] = int(params["n"])
    return LagrangianModel(
        name=name,
        dimension=spec.dimension(params),
        function=spec.make(params),
        parameters=params,
        time_dependent=spec.time_dependent,
        formula=spec.formula,
        coordinates=spec.coordinates,
        notes=spec.notes,
    )


def random_state(model: LagrangianModel, rng: np.random.Generator):
    """Draw (q, qdot) uniformly from the model's documented test box."""
    box = BUILTINS[model.name].state_box if model.name in BUILTINS else (-1, 1, -1, 1)
    n = model.dimension
    q = rng.uniform(box[0], box[1], n)
    qdot = rng.uniform(box[2], box[3], n)
    return q, qdot


# gauge terms ---------------------------------------------------------------


@dataclass(frozen=True)
class GaugeTerm:
    """A function g(q, eps, t) whose total time derivative is added to gamma.

    The signature is checked at construction: exactly three positional
    parameters, so g cannot see velocities.
    """

    g: Callable
    name: str = "g"

    def __post_init__(self):
        try:
            sig = inspect.signature(self.g)
        except (TypeError, ValueError):
            return
        params = [p for p in sig.parameters.values()
                  if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
        varargs = any(p.kind is p.VAR_POSITIONAL for p in sig.parameters.values())
        if varargs or len(params) != 3:
            raise ModelError(
                f"gauge term {self.name} must take exactly (q, eps, t); velocities are not allowed"
            )

    @classmethod
    def from_point_function(cls, f: Callable, name: str = "f") -> "GaugeTerm":
        """g = (df/dq^a) eps^a for a point function f(q, t) on configuration space."""

        def g(q, eps, t):
            _, df = lifted_gradient(lambda x: f(x[:-1], x[-1]), [*q, t])
            s = 0.0
            for a, e in enumerate(eps):
                s = s + df[a] * e
            return s

        return cls(g, f"grad({name}).eps")


def with_gauge(model: LagrangianModel, gauge) -> LagrangianModel:
    """Return the Lagrangian on D plus the total time derivative of ``gauge``.

    ``model`` must be a Lagrangian on the extended space, coordinates ordered
    (q, eps) with velocities (qdot, epsdot).  The added term is
    g_q . qdot + g_eps . epsdot + g_t, with partials from the derivative tower.
    """
    if not isinstance(gauge, GaugeTerm):
        gauge = GaugeTerm(gauge)
    if model.dimension % 2:
        raise ModelError(f"{model.name} is not a Lagrangian on an extended space")
    n = model.dimension // 2
    base = model.function

    def gauged(Q, Qd, t):
        q, eps = list(Q[:n]), list(Q[n:])
        _, dg = lifted_gradient(lambda x: gauge.g(x[:n], x[n:2 * n], x[2 * n]), [*q, *eps, t])
        total = dg[2 * n]
        for a in range(2 * n):
            total = total + dg[a] * Qd[a]
        return base(Q, Qd, t) + total

    return LagrangianModel(
        name=f"{model.name}+d/dt[{gauge.name}]",
        dimension=model.dimension,
        function=gauged,
        parameters=model.parameters,
        time_dependent=model.time_dependent,
        formula=f"{model.formula} + d/dt {gauge.name}",
        coordinates=model.coordinates,
    )
