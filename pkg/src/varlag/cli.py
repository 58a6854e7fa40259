"""Command-line front end: ``varlag run|oracle|lyapunov|identities|list-models``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import U64_MAX, ConfigError, ObservableSpec, RunConfig, load_config
from .derivtower import EvaluationDomainError
from .dynamics import fit_order, integrate, two_trajectory_oracle
from .identities import identity_suite
from .models import BUILTINS, LagrangianModel, ModelError, builtin
from .observables import (
    LyapunovOverflowError,
    PointSymmetry,
    charge_gamma,
    charge_L,
    drift_of,
    energy,
    inherited,
    lyapunov_spectrum,
    momentum,
)
from .prolongation import (
    DegeneracyError,
    ExtendedState,
    gamma_derivative_identities,
    hessian_w,
    homogeneity_residual,
    total_derivative_identity,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2
EXIT_DEGENERATE = 3

ORDER_WINDOW = (0.8, 1.2)


# output helpers --------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_summary(path: Path, summary: dict) -> None:
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


def _base_summary(cfg: Optional[RunConfig], mode: str) -> dict:
    return {
        "tool": "varlag",
        "version": __version__,
        "mode": mode,
        "config": cfg.to_dict() if cfg else None,
        "config_sha256": cfg.sha256() if cfg else None,
    }


def _observable(model: LagrangianModel, spec: ObservableSpec):
    if spec.kind == "energy":
        ob = energy(model)
    elif spec.kind == "momentum":
        ob = momentum(model, spec.index)
    else:
        sym = PointSymmetry(spec.zeta, spec.xi, spec.eta, name=spec.name or spec.kind)
        ob = charge_L(model, sym) if spec.kind == "noether_L" else charge_gamma(model, sym)
    ob = inherited(ob) if spec.inherited else ob
    return replace(ob, name=spec.column)


def _initial(cfg: RunConfig) -> ExtendedState:
    return ExtendedState(cfg.integrator.t_span[0], cfg.q, cfg.qdot, cfg.eps, cfg.epsdot)


# subcommands -----------------------------------------------------------------


def cmd_run(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    model = cfg.build_model()
    n = model.dimension
    start = _initial(cfg)
    summary = _base_summary(cfg, "run")
    traj = integrate(model, start, cfg.integrator)
    summary.update(termination=traj.termination, message=traj.message,
                   accepted_steps=traj.accepted_steps, rejected_steps=traj.rejected_steps,
                   samples=len(traj))

    observables = [_observable(model, o) for o in cfg.observables]
    columns = [o.column for o in cfg.observables]
    states = traj.samples
    try:
        values = np.array([[ob.on_state(s) for ob in observables] for s in states])
        values = values.reshape(len(states), len(observables))
    except (EvaluationDomainError, DegeneracyError) as exc:
        summary.update(status="degenerate", error=str(exc))
        return EXIT_DEGENERATE, summary
    reports = [drift_of(c, values[:, i], cfg.drift_threshold) for i, c in enumerate(columns)]
    summary["drift"] = [r.to_dict() for r in reports]

    r_epsdot, r_eps = gamma_derivative_identities(model, start)
    summary["identities"] = {
        "dgamma_depsdot_vs_dL_dqdot": r_epsdot,
        "dgamma_deps_vs_dL_dq": r_eps,
        "homogeneity": homogeneity_residual(model, start),
        "hessian_w_relative_gap": hessian_w(model, start).relative_gap,
        "total_derivative": total_derivative_identity(model, states) if len(states) >= 3 else None,
    }

    header = ["t", *(f"q_{i}" for i in range(n)), *(f"qd_{i}" for i in range(n)),
              *(f"eps_{i}" for i in range(n)), *(f"epsd_{i}" for i in range(n)), *columns]
    rows = (np.concatenate([[t], y, v]) for t, y, v in
            zip(traj.times, traj.states, values))
    write_csv(out / "trajectory.csv", header, rows)
    summary["artifacts"] = {"trajectory": "trajectory.csv"}

    if not traj.completed:
        summary["status"] = "degenerate"
        return EXIT_DEGENERATE, summary
    if not all(r.passed for r in reports):
        summary["status"] = "drift_failure"
        return EXIT_CHECK_FAILED, summary
    summary["status"] = "ok"
    return EXIT_OK, summary


def cmd_oracle(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    model = cfg.build_model()
    start = _initial(cfg)
    summary = _base_summary(cfg, "oracle")
    if not (any(cfg.eps) or any(cfg.epsdot)):
        raise ConfigError("initial.eps: the oracle needs a nonzero (eps, epsdot) direction")
    spec = cfg.integrator
    traj = integrate(model, start, spec)
    summary.update(termination=traj.termination, message=traj.message,
                   accepted_steps=traj.accepted_steps, rejected_steps=traj.rejected_steps)
    if not traj.completed:
        summary["status"] = "degenerate"
        return EXIT_DEGENERATE, summary
    errors = []
    try:
        for delta in cfg.deltas:
            series = two_trajectory_oracle(model, start, (cfg.eps, cfg.epsdot), delta, spec,
                                           trajectory=traj)
            errors.append(series.max_error)
    except (EvaluationDomainError, DegeneracyError) as exc:
        summary.update(status="degenerate", error=str(exc))
        return EXIT_DEGENERATE, summary
    order = fit_order(cfg.deltas, errors)
    passed = ORDER_WINDOW[0] <= order <= ORDER_WINDOW[1]
    summary["oracle"] = {"deltas": list(cfg.deltas), "max_error": errors,
                         "fitted_order": order, "order_window": list(ORDER_WINDOW),
                         "passed": passed}
    write_csv(out / "oracle.csv", ["delta", "max_error"], zip(cfg.deltas, errors))
    summary["artifacts"] = {"oracle": "oracle.csv"}
    summary["status"] = "ok" if passed else "order_failure"
    return (EXIT_OK if passed else EXIT_CHECK_FAILED), summary


def cmd_lyapunov(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    model = cfg.build_model()
    summary = _base_summary(cfg, "lyapunov")
    spec = cfg.integrator
    t0, t1 = spec.t_span
    try:
        res = lyapunov_spectrum(model, cfg.q, cfg.qdot, cfg.n_exponents, cfg.renorm_interval,
                                t1 - t0, spec, t0)
    except (LyapunovOverflowError, ArithmeticError) as exc:
        summary.update(status="degenerate", error=str(exc))
        return EXIT_DEGENERATE, summary
    k = len(res.exponents)
    summary["lyapunov"] = {**res.to_dict(), "sum": float(np.sum(res.exponents))}
    write_csv(out / "lyapunov.csv", ["t", *(f"lambda_{i}" for i in range(k))],
              (np.concatenate([[t], r]) for t, r in zip(res.times, res.running)))
    summary["artifacts"] = {"lyapunov": "lyapunov.csv"}
    summary["status"] = "ok"
    return EXIT_OK, summary


def cmd_identities(cfg: Optional[RunConfig], seed: int, out: Path) -> tuple[int, dict]:
    summary = _base_summary(cfg, "identities")
    if cfg is not None:
        models, n_states, seed = [cfg.build_model()], cfg.n_states, cfg.seed
    else:
        models, n_states = [builtin(name) for name in BUILTINS], 100
    summary.update(seed=seed, states=n_states)
    rng = np.random.Generator(np.random.PCG64(seed))
    reports = []
    try:
        for model in models:
            reports.append(identity_suite(model, rng, n_states))
    except (EvaluationDomainError, DegeneracyError) as exc:
        summary.update(status="degenerate", error=str(exc))
        return EXIT_DEGENERATE, summary
    summary["identities"] = [r.to_dict() for r in reports]
    ok = all(r.all_passed for r in reports)
    summary["status"] = "ok" if ok else "identity_failure"
    return (EXIT_OK if ok else EXIT_CHECK_FAILED), summary


def list_models() -> str:
    lines = []
    for name, spec in BUILTINS.items():
        lines.append(name)
        lines.append(f"  {spec.formula}")
        params = ", ".join(f"{k}={v:g}" for k, v in spec.defaults.items()) or "(none)"
        lines.append(f"  parameters: {params}")
        for c in spec.coordinates:
            lines.append(f"  coordinate {c}")
        if spec.time_dependent:
            lines.append("  explicitly time dependent")
        if spec.notes:
            lines.append(f"  note: {spec.notes}")
    return "\n".join(lines)


# entry point -------------------------------------------------------------------


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varlag", description=(
        "Integrate Euler-Lagrange systems together with their variational "
        "(Jacobi) equations and check conserved quantities."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=["run", "oracle", "lyapunov", "identities", "list-models"])
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--out", type=Path, help="output directory (default: config output.directory)")
    p.add_argument("--seed", type=_seed, help="PRNG seed, overrides the config (default 42)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-models":
        print(list_models())
        return EXIT_OK

    started = time.perf_counter()
    try:
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config, mode=args.command, seed=args.seed)
        elif args.command != "identities":
            raise ConfigError(f"--config: required for {args.command}")
        out = args.out or Path(cfg.output_dir if cfg else ".")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"--out: cannot create {out} ({exc.strerror})") from None
        if args.command == "run":
            code, summary = cmd_run(cfg, out)
        elif args.command == "oracle":
            code, summary = cmd_oracle(cfg, out)
        elif args.command == "lyapunov":
            code, summary = cmd_lyapunov(cfg, out)
        else:
            seed = args.seed if args.seed is not None else 42
            code, summary = cmd_identities(cfg, seed, out)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    summary["exit_code"] = code
    summary["timing"] = {"wall_seconds": time.perf_counter() - started}
    write_summary(out / "summary.json", summary)
    print(f"{args.command}: {summary['status']} (exit {code}); summary in {out / 'summary.json'}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
