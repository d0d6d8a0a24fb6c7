"""Command-line front end.

    geodyn simulate|verify|flows|equilibria [--jobs N] [--out-dir DIR] <scenario.json ...>

Exit codes: 0 all requested checks pass, 1 a check failed, 2 invalid
scenario or usage, 3 integration failed at run time.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import dynamics as dyn
from . import flows as fl
from . import geometry as geo
from . import verify as vf
from .vfexpr import ExprError

log = logging.getLogger("geodyn")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
CHECKS = ("conservation", "pregeodesic", "horizontal", "euler_lagrange", "three_energy_regimes")
SECOND_ORDER_ONLY = {"pregeodesic", "horizontal", "euler_lagrange"}


class ScenarioError(ValueError):
    def __init__(self, field_: str, msg: str):
        self.field = field_
        super().__init__(f"{field_}: {msg}")


@dataclass
class Scenario:
    path: str
    flow_name: str
    g: geo.MetricField
    X: geo.VectorField
    system: dyn.Kind
    x0: np.ndarray
    v0: np.ndarray | None
    t0: float
    t1: float
    integrator: Any
    H0: float | None
    checks: list[str]
    outputs: dict
    bvp: dict = field(default_factory=dict)
    seeds: list | None = None
    seed_grid: dict | None = None
    warnings: list[str] = field(default_factory=list)


def _vector(data: dict, key: str, n: int, required: bool = True):
    if key not in data or data[key] is None:
        if required:
            raise ScenarioError(key, "missing")
        return None
    val = data[key]
    if not isinstance(val, list) or not all(isinstance(c, (int, float)) for c in val):
        raise ScenarioError(key, "must be a list of numbers")
    if len(val) != n:
        raise ScenarioError(key, f"has length {len(val)}, flow dimension is {n}")
    return np.array(val, dtype=float)


def _load_flow(data: dict) -> tuple[str, geo.MetricField, geo.VectorField]:
    spec = data.get("flow")
    if not isinstance(spec, dict):
        raise ScenarioError("flow", "must be an object")
    params = spec.get("params") or {}
    if not isinstance(params, dict):
        raise ScenarioError("flow.params", "must be an object")
    try:
        if "name" in spec:
            try:
                f = fl.builtin(spec["name"], **params)
            except KeyError as exc:
                raise ScenarioError("flow.name", str(exc.args[0])) from None
            except TypeError as exc:
                raise ScenarioError("flow.params", str(exc)) from None
            return f.name, f.metric, f.field
        inline = spec.get("inline", spec)
        if "X" not in inline:
            raise ScenarioError("flow", "needs a built-in 'name' or inline 'X' components")
        comps = inline["X"]
        dim = int(inline.get("dim", len(comps)))
        if len(comps) != dim:
            raise ScenarioError("flow.X", f"has {len(comps)} components, dim is {dim}")
        params = {**params, **(inline.get("params") or {})}
        X = geo.VectorField.from_strings(comps, params)
        metric = inline.get("metric")
        if metric is None:
            g = geo.MetricField.euclidean(dim)
        else:
            if len(metric) != dim or any(len(row) != dim for row in metric):
                raise ScenarioError("flow.metric", f"must be a {dim}x{dim} grid")
            sig = inline.get("signature")
            g = geo.MetricField.from_strings(metric, tuple(sig) if sig else None, params)
        return "inline", g, X
    except ExprError as exc:
        raise ScenarioError("flow", f"expression error: {exc}") from None
    except geo.GeometryError as exc:
        raise ScenarioError("flow.metric", str(exc)) from None


def _load_integrator(data: dict):
    spec = data.get("integrator") or {"name": "dopri45"}
    name = spec.get("name", "dopri45")
    if name == "rk4":
        dt = spec.get("dt")
        if not isinstance(dt, (int, float)) or dt <= 0:
            raise ScenarioError("integrator.dt", "must be a positive number")
        return dyn.RK4(float(dt))
    if name == "dopri45":
        rtol = float(spec.get("rtol", 1e-10))
        atol = float(spec.get("atol", 1e-12))
        if rtol <= 0 or atol <= 0:
            raise ScenarioError("integrator", "tolerances must be positive")
        return dyn.Dopri45(rtol, atol, float(spec.get("max_step", np.inf)))
    raise ScenarioError("integrator.name", f"unknown integrator {name!r} (rk4 | dopri45)")


def load_scenario(path: str | Path, require_state: bool = True) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError("file", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("file", f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("file", "top level must be an object")
    name, g, X = _load_flow(data)
    n = X.dim
    try:
        kind = dyn.Kind(data.get("system", "gd"))
    except ValueError:
        raise ScenarioError("system", f"unknown system {data.get('system')!r}; "
                            f"one of {[k.value for k in dyn.Kind]}") from None
    warnings = []
    x0 = _vector(data, "x0", n, required=require_state)
    v0 = None
    if kind is dyn.Kind.KINEMATIC:
        if data.get("v0") is not None:
            warnings.append("v0 is ignored for the kinematic system")
    else:
        v0 = _vector(data, "v0", n, required=require_state)
    t0 = float(data.get("t0", 0.0))
    t1 = float(data.get("t1", 10.0))
    if require_state and not t1 > t0:
        raise ScenarioError("t1", "must exceed t0")
    checks = data.get("checks") or []
    for c in checks:
        if c not in CHECKS:
            raise ScenarioError("checks", f"unknown check {c!r}; one of {list(CHECKS)}")
        if c in SECOND_ORDER_ONLY and kind is dyn.Kind.KINEMATIC:
            raise ScenarioError("checks", f"{c!r} needs a second-order system")
    H0 = data.get("H0")
    if H0 is not None and not isinstance(H0, (int, float)):
        raise ScenarioError("H0", "must be a number")
    outputs = data.get("outputs") or {}
    if not isinstance(outputs, dict):
        raise ScenarioError("outputs", "must be an object")
    return Scenario(str(path), name, g, X, kind, x0, v0, t0, t1, _load_integrator(data),
                    None if H0 is None else float(H0), list(checks), outputs,
                    data.get("bvp") or {}, data.get("seeds"), data.get("seed_grid"), warnings)


# --------------------------------------------------------------------------- running

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, traj: dyn.Trajectory, rec: dyn.EnergyRecord, kind: dyn.Kind) -> None:
    n = traj.x.shape[1]
    header = ["t"] + [f"x{i+1}" for i in range(n)] + [f"v{i+1}" for i in range(n)] + ["H", "f", "L"]
    if kind is dyn.Kind.POTENTIAL:
        L = rec.L_potential
    elif kind in (dyn.Kind.GD, dyn.Kind.SYS3):
        L = rec.L_gd
    else:
        L = None
    lines = [",".join(header)]
    for k in range(len(traj)):
        row = [_fmt(traj.t[k])] + [_fmt(c) for c in traj.x[k]] + [_fmt(c) for c in traj.v[k]]
        row += [_fmt(rec.H[k]), _fmt(rec.f[k]), "" if L is None else _fmt(L[k])]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def run_checks(sc: Scenario, traj, rec) -> vf.DiagnosticsReport:
    report = vf.DiagnosticsReport()
    H0 = sc.H0 if sc.H0 is not None else float(rec.H[0])
    sys_ = dyn.DynSystem(sc.system, sc.g, sc.X)
    for name in sc.checks:
        if name == "conservation":
            r = report.add(vf.check_conservation(traj, rec))
            if sc.system not in (dyn.Kind.POTENTIAL, dyn.Kind.GD, dyn.Kind.SYS3, dyn.Kind.KINEMATIC):
                r.notes += "; system not claimed conservative"
        elif name == "pregeodesic":
            r = report.add(vf.check_pregeodesic(traj, geo.jacobi_structure(sc.g, sc.X, H0)))
            if sc.system is not dyn.Kind.POTENTIAL:
                r.notes += "; applies to the potential system"
        elif name == "horizontal":
            a, b = vf.check_horizontal(traj, geo.jacobi_structure(sc.g, sc.X, H0))
            report.add(a)
            report.add(b)
        elif name == "euler_lagrange":
            res = vf.euler_lagrange_residual(sys_, traj)
            report.add(vf._stats("euler_lagrange", res, vf.EQUATION_TOL, "relative Euler-Lagrange residual"))
        elif name == "three_energy_regimes":
            target = sc.bvp.get("target")
            if target is None or len(target) != sc.X.dim:
                raise ScenarioError("bvp.target", f"three_energy_regimes needs a target point of length {sc.X.dim}")
            start = sc.bvp.get("start", sc.x0.tolist())
            times = sc.bvp.get("times") or np.linspace(0.5, 3.0, 6).tolist()
            report.add(vf.check_three_energy_regimes(sc.g, sc.X, start, target, times))
    return report


def _resolve(out_dir: Path, value: str | None, default: str) -> Path:
    p = Path(value) if value else Path(default)
    return p if p.is_absolute() else out_dir / p


def execute(path: str, command: str, out_dir: str | None) -> int:
    """Run one scenario file; returns the process exit code."""
    t_start = time.perf_counter()
    try:
        sc = load_scenario(path)
        for w in sc.warnings:
            log.warning("%s: %s", path, w)
        sys_ = dyn.DynSystem(sc.system, sc.g, sc.X)
        traj, rec = dyn.integrate(sys_, sc.x0, sc.v0, sc.t0, sc.t1, sc.integrator)
        t_int = time.perf_counter()
        report = run_checks(sc, traj, rec)
    except ScenarioError as exc:
        print(f"{path}: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (dyn.IntegrationError, geo.GeometryError, ExprError) as exc:
        print(f"{path}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    t_end = time.perf_counter()
    base = Path(out_dir) if out_dir else Path(".")
    base.mkdir(parents=True, exist_ok=True)
    stem = Path(path).stem
    doc = {
        "scenario": str(path),
        "system": sc.system.value,
        "flow": sc.flow_name,
        "checks": [c.to_dict() for c in report.checks],
        "timing": {"integrate_s": t_int - t_start, "checks_s": t_end - t_int,
                   "samples": len(traj), "accepted": traj.accepted, "rejected": traj.rejected},
    }
    if command == "simulate":
        write_csv(_resolve(base, sc.outputs.get("trajectory"), f"{stem}.csv"), traj, rec, sc.system)
        _resolve(base, sc.outputs.get("report"), f"{stem}.report.json").write_text(json.dumps(doc, indent=2))
    else:
        if sc.outputs.get("report"):
            _resolve(base, sc.outputs["report"], "").write_text(json.dumps(doc, indent=2))
        for c in report.checks:
            print(f"{stem}: {c.name}: {c.status} max_residual={c.max_residual:.3e} "
                  f"tolerance={c.tolerance:g} samples={c.samples_used}")
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def equilibria(path: str) -> int:
    try:
        sc = load_scenario(path, require_state=False)
    except ScenarioError as exc:
        print(f"{path}: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    n = sc.X.dim
    if sc.seeds:
        seeds = np.asarray(sc.seeds, dtype=float)
        if seeds.ndim != 2 or seeds.shape[1] != n:
            print(f"{path}: invalid scenario: seeds: each seed needs {n} coordinates", file=sys.stderr)
            return EXIT_INVALID
    else:
        grid = sc.seed_grid or {}
        lo = np.broadcast_to(np.asarray(grid.get("lo", -20.0), dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(grid.get("hi", 20.0), dtype=float), (n,))
        k = int(grid.get("n", 5))
        axes = [np.linspace(lo[i], hi[i], k) for i in range(n)]
        seeds = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    pts, dropped = fl.find_equilibria(sc.X, seeds)
    pts.sort(key=lambda p: tuple(np.round(p, 9)))
    for p in pts:
        print(" ".join(_fmt(c) for c in p))
    print(f"# {len(pts)} equilibria from {len(seeds)} seeds ({dropped} did not converge)", file=sys.stderr)
    return EXIT_OK


def list_flows() -> int:
    print(json.dumps([f().describe() for f in fl.BUILTINS.values()], indent=2))
    return EXIT_OK


def _run_one(args: tuple[str, str, str | None]) -> int:
    command, path, out_dir = args
    if command == "equilibria":
        return equilibria(path)
    return execute(path, command, out_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geodyn", description="Geometric dynamics of flows.")
    sub = p.add_subparsers(dest="command")
    for name, help_ in [("simulate", "integrate and write trajectory CSV + report JSON"),
                        ("verify", "integrate and run the requested checks"),
                        ("equilibria", "find zeros of the vector field from a seed grid")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("scenarios", nargs="+")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--out-dir", default=None)
    sub.add_parser("flows", help="list built-in flows and their stored data")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    if args.command == "flows":
        return list_flows()
    jobs = [(args.command, s, args.out_dir) for s in args.scenarios]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            codes = list(ex.map(_run_one, jobs))
    else:
        codes = [_run_one(j) for j in jobs]
    return max(codes)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
