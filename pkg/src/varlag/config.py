"""Run configuration: TOML in, validated dataclasses out, canonical JSON back."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dynamics import METHODS, IntegratorSpec
from .models import BUILTINS, LagrangianModel, ModelError, builtin

__all__ = ["ConfigError", "ObservableSpec", "RunConfig", "load_config", "MODES"]

MODES = ("run", "oracle", "lyapunov", "identities")
OBSERVABLE_KINDS = ("energy", "momentum", "noether_L", "noether_gamma")
U64_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _check_keys(table, allowed, path):
    if not isinstance(table, dict):
        _fail(path, "expected a table")
    extra = sorted(set(table) - set(allowed))
    if extra:
        _fail(path, f"unknown key(s) {', '.join(extra)}")


def _real(value, path, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        _fail(path, "must be finite")
    if positive and value <= 0:
        _fail(path, "must be positive")
    return value


def _vector(value, n, path):
    if not isinstance(value, list):
        _fail(path, f"expected an array of {n} numbers")
    if len(value) != n:
        _fail(path, f"expected {n} values (model dimension), got {len(value)}")
    return tuple(_real(v, f"{path}[{i}]") for i, v in enumerate(value))


def _int(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        _fail(path, f"must be in [{lo}, {hi}]")
    return value


@dataclass(frozen=True)
class ObservableSpec:
    """A conserved quantity requested in the config.

    ``energy`` and ``momentum`` are functions of (q, qdot); ``noether_L``
    is the charge of L for constant generators (zeta, xi); ``noether_gamma``
    is the charge of gamma for (zeta, xi, eta).  ``inherited`` applies
    D_eps to the first three kinds.
    """

    kind: str
    index: Optional[int] = None
    zeta: Optional[tuple] = None
    xi: float = 0.0
    eta: Optional[tuple] = None
    inherited: bool = False
    name: Optional[str] = None

    @property
    def column(self) -> str:
        if self.name:
            base = self.name
        elif self.kind == "energy":
            base = "E"
        elif self.kind == "momentum":
            base = f"p_{self.index}"
        else:
            base = "J" if self.kind == "noether_L" else "j"
        return f"Deps_{base}" if self.inherited else base

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key in ("index", "zeta", "eta", "name"):
            v = getattr(self, key)
            if v is not None:
                d[key] = list(v) if isinstance(v, tuple) else v
        if self.kind in ("noether_L", "noether_gamma"):
            d["xi"] = self.xi
        if self.inherited:
            d["inherited"] = True
        return d

    @classmethod
    def from_dict(cls, d, n, path) -> "ObservableSpec":
        _check_keys(d, ("kind", "index", "zeta", "xi", "eta", "inherited", "name"), path)
        kind = d.get("kind")
        if kind not in OBSERVABLE_KINDS:
            _fail(f"{path}.kind", f"unknown observable {kind!r}; choose one of "
                  f"{', '.join(OBSERVABLE_KINDS)}")
        inherited = d.get("inherited", False)
        if not isinstance(inherited, bool):
            _fail(f"{path}.inherited", "expected true or false")
        if inherited and kind == "noether_gamma":
            _fail(f"{path}.inherited", "D_eps applies to functions of (q, qdot) only")
        name = d.get("name")
        if name is not None and (not isinstance(name, str) or not name
                                 or any(c in name for c in ',"\n')):
            _fail(f"{path}.name", "expected a non-empty string without commas or quotes")
        index = None
        if kind == "momentum":
            if "index" not in d:
                _fail(f"{path}.index", "required for a momentum observable")
            index = _int(d["index"], f"{path}.index", 0, n - 1)
        elif "index" in d:
            _fail(f"{path}.index", f"not used by {kind}")
        zeta = eta = None
        xi = 0.0
        if kind in ("noether_L", "noether_gamma"):
            zeta = _vector(d["zeta"], n, f"{path}.zeta") if "zeta" in d else None
            xi = _real(d.get("xi", 0.0), f"{path}.xi")
            if "eta" in d:
                if kind == "noether_L":
                    _fail(f"{path}.eta", "the charge of L takes no eps generator")
                eta = _vector(d["eta"], n, f"{path}.eta")
            if not (any(zeta or ()) or any(eta or ()) or xi):
                _fail(path, "at least one generator must be nonzero")
        else:
            for key in ("zeta", "xi", "eta"):
                if key in d:
                    _fail(f"{path}.{key}", f"not used by {kind}")
        return cls(kind, index, zeta, xi, eta, inherited, name)


@dataclass(frozen=True)
class RunConfig:
    model: str
    parameters: dict
    q: tuple
    qdot: tuple
    eps: tuple
    epsdot: tuple
    integrator: IntegratorSpec
    mode: str = "run"
    observables: tuple = ()
    seed: int = 42
    output_dir: str = "."
    drift_threshold: float = 1e-7
    deltas: tuple = (1e-3, 1e-4, 1e-5)
    n_exponents: Optional[int] = None
    renorm_interval: float = 1.0
    n_states: int = 100

    def build_model(self) -> LagrangianModel:
        return builtin(self.model, **self.parameters)

    def to_dict(self) -> dict:
        spec = self.integrator
        integ = {"method": spec.method, "t_span": list(spec.t_span), "step": spec.step,
                 "abs_tol": spec.abs_tol, "rel_tol": spec.rel_tol,
                 "max_step": spec.max_step, "min_step": spec.min_step}
        if spec.output_interval is not None:
            integ["output_interval"] = spec.output_interval
        d = {
            "mode": self.mode,
            "seed": self.seed,
            "model": {"name": self.model, "parameters": dict(sorted(self.parameters.items()))},
            "initial": {"q": list(self.q), "qdot": list(self.qdot),
                        "eps": list(self.eps), "epsdot": list(self.epsdot)},
            "integrator": integ,
            "observables": [o.to_dict() for o in self.observables],
            "output": {"directory": self.output_dir},
            "checks": {"drift_threshold": self.drift_threshold},
            "oracle": {"deltas": list(self.deltas)},
            "lyapunov": {"renorm_interval": self.renorm_interval},
            "identities": {"states": self.n_states},
        }
        if self.n_exponents is not None:
            d["lyapunov"]["n_exponents"] = self.n_exponents
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, ("mode", "seed", "model", "initial", "integrator", "observables",
                        "output", "checks", "oracle", "lyapunov", "identities"), "config")
        mode = d.get("mode", "run")
        if mode not in MODES:
            _fail("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
        seed = _int(d.get("seed", 42), "seed", 0, U64_MAX)

        m = d.get("model")
        if m is None:
            _fail("model", "missing section")
        _check_keys(m, ("name", "parameters"), "model")
        name = m.get("name")
        if name not in BUILTINS:
            _fail("model.name", f"unknown model {name!r}; choose one of "
                  f"{', '.join(sorted(BUILTINS))}")
        params = m.get("parameters", {})
        _check_keys(params, BUILTINS[name].defaults, "model.parameters")
        params = {k: _real(v, f"model.parameters.{k}") for k, v in params.items()}
        try:
            n = builtin(name, **params).dimension
        except ModelError as exc:
            _fail("model.parameters", str(exc))

        init = d.get("initial")
        if init is None:
            _fail("initial", "missing section")
        _check_keys(init, ("q", "qdot", "eps", "epsdot"), "initial")
        vecs = {}
        for key in ("q", "qdot", "eps", "epsdot"):
            if key in init:
                vecs[key] = _vector(init[key], n, f"initial.{key}")
            elif key in ("q", "qdot"):
                _fail(f"initial.{key}", "required")
            else:
                vecs[key] = (0.0,) * n

        integ = d.get("integrator", {})
        fields = ("method", "t_span", "step", "abs_tol", "rel_tol", "max_step", "min_step",
                  "output_interval")
        _check_keys(integ, fields, "integrator")
        kwargs = {}
        if "method" in integ:
            if integ["method"] not in METHODS:
                _fail("integrator.method", f"expected one of {', '.join(METHODS)}")
            kwargs["method"] = integ["method"]
        if "t_span" in integ:
            span = integ["t_span"]
            if not isinstance(span, list) or len(span) != 2:
                _fail("integrator.t_span", "expected [t0, t1]")
            kwargs["t_span"] = tuple(_real(v, f"integrator.t_span[{i}]")
                                     for i, v in enumerate(span))
        for key in fields[2:]:
            if key in integ:
                kwargs[key] = _real(integ[key], f"integrator.{key}", positive=True)
        try:
            spec = IntegratorSpec(**kwargs)
        except ValueError as exc:
            _fail("integrator", str(exc))

        obs = d.get("observables", [])
        if not isinstance(obs, list):
            _fail("observables", "expected an array of tables")
        observables = tuple(ObservableSpec.from_dict(o, n, f"observables[{i}]")
                            for i, o in enumerate(obs))
        columns = [o.column for o in observables]
        dup = sorted({c for c in columns if columns.count(c) > 1})
        if dup:
            _fail("observables", f"duplicate column name(s) {', '.join(dup)}; set 'name'")

        out = d.get("output", {})
        _check_keys(out, ("directory",), "output")
        output_dir = out.get("directory", ".")
        if not isinstance(output_dir, str):
            _fail("output.directory", "expected a string")

        checks = d.get("checks", {})
        _check_keys(checks, ("drift_threshold",), "checks")
        threshold = _real(checks.get("drift_threshold", 1e-7), "checks.drift_threshold", True)

        oracle = d.get("oracle", {})
        _check_keys(oracle, ("deltas",), "oracle")
        deltas = oracle.get("deltas", [1e-3, 1e-4, 1e-5])
        if not isinstance(deltas, list) or len(deltas) < 2:
            _fail("oracle.deltas", "expected at least two values")
        deltas = tuple(_real(v, f"oracle.deltas[{i}]", True) for i, v in enumerate(deltas))

        ly = d.get("lyapunov", {})
        _check_keys(ly, ("n_exponents", "renorm_interval"), "lyapunov")
        n_exp = ly.get("n_exponents")
        if n_exp is not None:
            n_exp = _int(n_exp, "lyapunov.n_exponents", 1, 2 * n)
        renorm = _real(ly.get("renorm_interval", 1.0), "lyapunov.renorm_interval", True)

        ident = d.get("identities", {})
        _check_keys(ident, ("states",), "identities")
        n_states = _int(ident.get("states", 100), "identities.states", 1)

        return cls(name, params, vecs["q"], vecs["qdot"], vecs["eps"], vecs["epsdot"], spec,
                   mode, observables, seed, output_dir, threshold, deltas, n_exp, renorm,
                   n_states)


def load_config(path, mode: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Read a TOML config; ``mode`` and ``seed`` come from the command line.

    A config that declares a different mode from the requested one is an
    error rather than being silently overridden.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    if mode is not None:
        if data.get("mode", mode) != mode:
            raise ConfigError(f"mode: config declares {data['mode']!r} but {mode!r} was requested")
        data["mode"] = mode
    if seed is not None:
        data["seed"] = seed
    return RunConfig.from_dict(data)
