"""Nested forward-mode dual numbers.

A :class:`Dual` carries a value and one tangent per seeded direction.  Nesting
a ``Dual`` inside another gives derivatives of derivatives, so three levels
expose mixed partials up to order three.  Every ``Dual`` records its nesting
``depth``; an operand of lower depth is treated as a constant with respect to
the outer levels, which is what lets tangents stay plain floats until
something actually depends on them.

Model code is written against the elementary functions exported here
(:func:`sin`, :func:`cos`, :func:`exp`, :func:`log`, :func:`sqrt`) and the
usual operators; the same code then runs on floats and on duals of any depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Dual",
    "EvaluationDomainError",
    "FDEstimate",
    "register_elementary",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "primal",
    "depth",
    "lift",
    "peel",
    "seed",
    "part",
    "evaluate_jet",
    "gradient",
    "hessian",
    "third_mixed",
    "lifted_gradient",
    "fd_oracle_partial",
]


class EvaluationDomainError(ArithmeticError):
    """A function or one of its derivatives is undefined or non-finite."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


def depth(x) -> int:
    return x.depth if isinstance(x, Dual) else 0


def primal(x) -> float:
    """Strip every derivative level and return the plain float value."""
    while isinstance(x, Dual):
        x = x.value
    return float(x)


class Dual:
    """Value plus directional derivatives along ``len(tangents)`` seeds.

    ``value`` and each tangent may themselves be ``Dual`` objects of lower
    depth, or plain floats.  Multiplying by an exact zero returns the float
    ``0.0``; most seeded tangents are zeros and this keeps them cheap.
    """

    __slots__ = ("value", "tangents", "depth")
    __array_ufunc__ = None  # keep numpy scalars from swallowing duals

    def __init__(self, value, tangents, depth=None):
        self.value = value
        self.tangents = tangents if type(tangents) is list else list(tangents)
        self.depth = depth if depth is not None else _depth_of(value) + 1

    @classmethod
    def constant(cls, value, n_tangents, depth=1):
        return cls(value, [0.0] * n_tangents, depth)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangents!r}, depth={self.depth})"

    # arithmetic -------------------------------------------------------------

    def __neg__(self):
        return Dual(-self.value, [-t for t in self.tangents], self.depth)

    def __pos__(self):
        return self

    def __add__(self, other):
        if type(other) is Dual:
            if other.depth == self.depth:
                if len(self.tangents) != len(other.tangents):
                    _width_error(self, other)
                return Dual(self.value + other.value,
                            [a + b for a, b in zip(self.tangents, other.tangents)],
                            self.depth)
            if other.depth > self.depth:
                return other.__radd__(self)
        elif not isinstance(other, _NUMBERS):
            return NotImplemented
        elif other == 0:
            return self
        return Dual(self.value + other, self.tangents, self.depth)

    def __radd__(self, other):
        if type(other) is not Dual:
            if not isinstance(other, _NUMBERS):
                return NotImplemented
            if other == 0:
                return self
        return Dual(other + self.value, self.tangents, self.depth)

    def __sub__(self, other):
        if type(other) is Dual:
            if other.depth == self.depth:
                if len(self.tangents) != len(other.tangents):
                    _width_error(self, other)
                return Dual(self.value - other.value,
                            [a - b for a, b in zip(self.tangents, other.tangents)],
                            self.depth)
            if other.depth > self.depth:
                return other.__rsub__(self)
        elif not isinstance(other, _NUMBERS):
            return NotImplemented
        elif other == 0:
            return self
        return Dual(self.value - other, self.tangents, self.depth)

    def __rsub__(self, other):
        if type(other) is not Dual and not isinstance(other, _NUMBERS):
            return NotImplemented
        return Dual(other - self.value, [-t for t in self.tangents], self.depth)

    def __mul__(self, other):
        if type(other) is Dual:
            if other.depth == self.depth:
                if len(self.tangents) != len(other.tangents):
                    _width_error(self, other)
                a, b = self.value, other.value
                return Dual(a * b,
                            [da * b + a * db for da, db in zip(self.tangents, other.tangents)],
                            self.depth)
            if other.depth > self.depth:
                return other.__rmul__(self)
        elif not isinstance(other, _NUMBERS):
            return NotImplemented
        elif other == 0:
            return 0.0
        return Dual(self.value * other, [t * other for t in self.tangents], self.depth)

    def __rmul__(self, other):
        if type(other) is not Dual:
            if not isinstance(other, _NUMBERS):
                return NotImplemented
            if other == 0:
                return 0.0
        return Dual(other * self.value, [other * t for t in self.tangents], self.depth)

    def __truediv__(self, other):
        if type(other) is Dual and other.depth >= self.depth:
            if other.depth > self.depth:
                return other.__rtruediv__(self)
            return self * _reciprocal(other)
        if type(other) is not Dual and not isinstance(other, _NUMBERS):
            return NotImplemented
        inv = _reciprocal(other)
        return Dual(self.value * inv, [t * inv for t in self.tangents], self.depth)

    def __rtruediv__(self, other):
        if type(other) is not Dual and not isinstance(other, _NUMBERS):
            return NotImplemented
        return other * _reciprocal(self)

    def __pow__(self, other):
        if type(other) is Dual:
            return exp(other * log(self))
        if not isinstance(other, _NUMBERS):
            return NotImplemented
        p = other
        if p == 0:
            return 1.0
        if p == 1:
            return self
        if p == 2:
            return self * self
        x = self.value
        scale = p * _pow(x, p - 1)
        return Dual(_pow(x, p), [scale * t for t in self.tangents], self.depth)

    def __rpow__(self, other):
        if not isinstance(other, _NUMBERS):
            return NotImplemented
        return exp(self * _log(other))

    # comparisons act on the primal value so models may branch
    def __lt__(self, other):
        return primal(self) < primal(other)

    def __le__(self, other):
        return primal(self) <= primal(other)

    def __gt__(self, other):
        return primal(self) > primal(other)

    def __ge__(self, other):
        return primal(self) >= primal(other)


_NUMBERS = (float, int, np.floating, np.integer)


def _depth_of(x):
    return x.depth if type(x) is Dual else 0


def _width_error(a, b):
    raise ValueError(
        f"cannot combine duals seeded with {len(a.tangents)} and "
        f"{len(b.tangents)} directions at depth {a.depth}"
    )


def _reciprocal(x):
    if isinstance(x, Dual):
        inv = _reciprocal(x.value)
        scale = -(inv * inv)
        return Dual(inv, [scale * t for t in x.tangents], x.depth)
    try:
        return 1.0 / x
    except ZeroDivisionError:
        raise EvaluationDomainError("division by zero") from None


def _pow(x, p):
    if isinstance(x, Dual):
        return x ** p
    try:
        y = float(x) ** p
    except (ZeroDivisionError, OverflowError) as exc:
        raise EvaluationDomainError(f"power {p} undefined at {x!r}: {exc}") from None
    if isinstance(y, complex):
        raise EvaluationDomainError(f"power {p} undefined at {x!r}")
    return y


def _log(x):
    try:
        return math.log(x)
    except ValueError:
        raise EvaluationDomainError(f"log undefined at {x!r}") from None


# elementary functions ------------------------------------------------------

_ELEMENTARY: dict[str, tuple[Callable, Callable]] = {}


def register_elementary(name: str, primal_fn: Callable[[float], float],
                        derivative: Callable) -> Callable:
    """Register a unary function and return its dual-aware wrapper.

    ``primal_fn`` acts on floats.  ``derivative`` must itself be written with
    dual-aware operations (operators or other registered functions) so that
    the wrapper nests to any depth.
    """

    def apply(x):
        if isinstance(x, Dual):
            if all(type(t) is not Dual and t == 0 for t in x.tangents):
                # nothing flows through this level; f' may not even exist here
                return apply(x.value)
            d = derivative(x.value)
            return Dual(apply(x.value), [d * t for t in x.tangents], x.depth)
        try:
            y = primal_fn(x)
        except (ValueError, OverflowError, ZeroDivisionError) as exc:
            raise EvaluationDomainError(f"{name} undefined at {x!r}: {exc}") from None
        return y

    apply.__name__ = name
    apply.__qualname__ = name
    apply.__doc__ = f"Dual-aware {name}."
    _ELEMENTARY[name] = (primal_fn, derivative)
    return apply


sin = register_elementary("sin", math.sin, lambda x: cos(x))
cos = register_elementary("cos", math.cos, lambda x: -sin(x))
exp = register_elementary("exp", math.exp, lambda x: exp(x))
log = register_elementary("log", math.log, lambda x: 1.0 / x)
sqrt = register_elementary("sqrt", math.sqrt, lambda x: 0.5 / sqrt(x))


# seeding and extraction ----------------------------------------------------


def lift(args: Sequence, levels: Sequence[Sequence[Sequence[float]]]):
    """Wrap ``args`` in ``len(levels)`` new outer derivative levels.

    ``levels[0]`` becomes the innermost of the new levels.  Each level is a
    sequence of direction vectors of length ``len(args)``.  Arguments may be
    floats or duals; the new levels sit above the deepest of them.  Returns
    ``(lifted_args, base_depth)``.
    """
    base = max((depth(a) for a in args), default=0)
    out = []
    for k, a in enumerate(args):
        v = a if isinstance(a, Dual) else float(a)
        for lvl, dirs in enumerate(levels, start=base + 1):
            v = Dual(v, [d[k] for d in dirs], lvl)
        out.append(v)
    return out, base


def peel(y, base: int, path: Sequence):
    """Walk down from the outermost level to ``base`` along ``path``.

    ``path`` lists, outermost first, either ``None`` (take the value) or a
    tangent index.  Levels the result does not carry contribute a zero
    derivative.  What remains (a float or a dual of depth <= ``base``) is
    returned.
    """
    top = base + len(path)
    for i, idx in enumerate(path):
        lvl = top - i
        if isinstance(y, Dual) and y.depth == lvl:
            y = y.value if idx is None else y.tangents[idx]
        elif idx is not None:
            return 0.0
    return y


def seed(x: Sequence[float], levels):
    """Lift a float point into nested duals of depth ``len(levels)``."""
    return lift([float(v) for v in x], levels)[0]


def part(y, path: Sequence) -> float:
    """One float component of a nested dual built by :func:`seed`."""
    return primal(peel(y, 0, path))


def evaluate_jet(f: Callable, x: Sequence[float], levels):
    """Evaluate ``f`` on seeded duals, translating arithmetic faults."""
    args = seed(x, levels)
    try:
        return f(args)
    except EvaluationDomainError:
        raise
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise EvaluationDomainError(f"evaluation failed at x={list(x)}: {exc}") from None


def _identity(n):
    return np.eye(n).tolist()


def _check_finite(values, what, index_of=lambda i: i):
    arr = np.asarray(values, dtype=float)
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        loc = tuple(int(i) for i in bad[0])
        coord = index_of(loc[0] if len(loc) == 1 else loc)
        raise EvaluationDomainError(f"non-finite {what} at coordinate {coord}", coord)
    return arr


def _located_jet(f: Callable, x: Sequence[float], levels, order: int):
    """evaluate_jet, naming the coordinate when an arithmetic fault hits a derivative.

    On failure the value is re-evaluated alone, then along one coordinate
    direction at a time (repeated ``order`` times); the first direction that
    fails is reported.
    """
    try:
        return evaluate_jet(f, x, levels)
    except EvaluationDomainError as exc:
        if exc.coordinate is not None:
            raise
        evaluate_jet(f, x, [])
        e = _identity(len(x))
        for i in range(len(x)):
            try:
                evaluate_jet(f, x, [[e[i]]] * order)
            except EvaluationDomainError:
                raise EvaluationDomainError(f"{exc} (derivative along coordinate {i})", i) from None
        raise


def gradient(f: Callable, x: Sequence[float]) -> np.ndarray:
    """Exact first partials of scalar ``f`` at ``x``."""
    n = len(x)
    if n < 1:
        raise ValueError("gradient needs at least one variable")
    y = _located_jet(f, x, [_identity(n)], 1)
    _check_finite([part(y, (None,))], "value")
    return _check_finite([part(y, (i,)) for i in range(n)], "first partial")


def hessian(f: Callable, x: Sequence[float]) -> np.ndarray:
    """Symmetrised matrix of second partials."""
    n = len(x)
    e = _identity(n)
    y = _located_jet(f, x, [e, e], 2)
    h = _check_finite([[part(y, (i, j)) for j in range(n)] for i in range(n)],
                      "second partial")
    return 0.5 * (h + h.T)


def third_mixed(f: Callable, x: Sequence[float], i: int, j: int, k: int) -> float:
    n = len(x)
    e = np.eye(n)
    y = _located_jet(f, x, [[e[i]], [e[j]], [e[k]]], 3)
    return float(_check_finite([part(y, (0, 0, 0))], "third partial",
                               lambda _: (i, j, k))[0])


def lifted_gradient(f: Callable, args: Sequence):
    """Gradient of ``f`` at arguments that may already be duals.

    Wraps the arguments in one extra outer level, evaluates, and returns the
    tangents: each partial comes back as a dual carrying every derivative
    level the arguments had.  This is how a function of first partials (for
    example the prolonged Lagrangian) stays differentiable.
    """
    d = max((depth(a) for a in args), default=0) + 1
    n = len(args)
    lifted = [Dual(a, [1.0 if m == k else 0.0 for m in range(n)], d)
              for k, a in enumerate(args)]
    y = f(lifted)
    if isinstance(y, Dual) and y.depth == d:
        return y.value, list(y.tangents)
    return y, [0.0] * n


# finite-difference oracle --------------------------------------------------

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class FDEstimate:
    value: float
    steps: tuple
    cancellation_warning: bool


def fd_oracle_partial(f: Callable, x: Sequence[float], multi_index: Sequence[int],
                      step=None) -> FDEstimate:
    """Central finite-difference estimate of a partial derivative up to order 3.

    The estimate applies one centred difference per entry of ``multi_index``,
    so repeated indices use the widened stencil ``x +- 2h``.  Truncation error
    is O(h**2).  Default steps are ``1e-5*max(1,|x_i|)`` for first order and
    ``1e-4*max(1,|x_i|)`` otherwise.  ``step`` may be a float, scaled the same
    way.  ``cancellation_warning`` is set when a step falls two decades below
    the round-off optimum ``eps**(1/(order+2))`` for that order.
    """
    order = len(multi_index)
    if not 1 <= order <= 3:
        raise ValueError("finite-difference oracle supports orders 1 to 3")
    x = np.asarray(x, dtype=float)
    base = (1e-5 if order == 1 else 1e-4) if step is None else float(step)
    if base <= 0:
        raise ValueError("step must be positive")
    h = [base * max(1.0, abs(x[i])) for i in multi_index]
    optimum = _EPS ** (1.0 / (order + 2))
    warn = any(hi < 1e-2 * optimum * max(1.0, abs(x[i]))
               for hi, i in zip(h, multi_index))

    total = 0.0
    for signs in np.ndindex(*(2,) * order):
        s = [1.0 if b == 0 else -1.0 for b in signs]
        xp = x.copy()
        for sm, hm, i in zip(s, h, multi_index):
            xp[i] += sm * hm
        total += float(np.prod(s)) * float(f(list(xp)))
    value = total / float(np.prod([2.0 * hm for hm in h]))
    return FDEstimate(value, tuple(h), warn)
