"""Post-processing checks on integrated trajectories.

Every check is a deterministic function of its inputs and returns a
:class:`CheckResult`. Accelerations are recovered from the sampled
velocities with 5-point finite differences (degree-4 interpolation on the
possibly non-uniform grid), never from the right-hand side that produced the
trajectory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import dynamics as dyn
from .dynamics import DynSystem, EnergyRecord, Kind, Trajectory
from .geometry import (
    DEGENERACY_TOL, GeometryError, JacobiStructure, MetricLike, VectorField, _helicity_parts,
    _inverse, christoffel, energy_jet,
)

__all__ = [
    "CheckResult", "DiagnosticsReport", "VanishingVelocity", "fd_weights", "time_derivative",
    "check_pregeodesic", "check_horizontal", "check_conservation", "check_three_energy_regimes",
    "euler_lagrange_residual", "shoot", "EQUATION_TOL", "GEOMETRIC_TOL", "CONSERVATION_TOL",
    "MIN_SAMPLES",
]

EQUATION_TOL = 1e-5
GEOMETRIC_TOL = 1e-4
CONSERVATION_TOL = 1e-7
MIN_SAMPLES = 10


class VanishingVelocity(GeometryError):
    def __init__(self, t, norm2):
        self.t = t
        super().__init__(f"velocity vanishes at t={t:.6g} (|v|^2={norm2:.3e}); reparametrization undefined")


@dataclass
class CheckResult:
    name: str
    max_residual: float
    mean_residual: float
    tolerance: float
    samples_used: int
    notes: str = ""
    trajectory_based: bool = True
    inconclusive: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        if self.inconclusive or (self.trajectory_based and self.samples_used < MIN_SAMPLES):
            return "inconclusive"
        return "pass" if self.max_residual <= self.tolerance else "fail"

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "max_residual": self.max_residual,
            "mean_residual": self.mean_residual,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "status": self.status,
            "samples_used": self.samples_used,
            "notes": self.notes,
        }
        if self.extra:
            d["extra"] = self.extra
        return d


@dataclass
class DiagnosticsReport:
    checks: list[CheckResult] = field(default_factory=list)

    def add(self, result: CheckResult) -> CheckResult:
        self.checks.append(result)
        return result

    @property
    def all_passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def to_dict(self) -> dict:
        return {"checks": [c.to_dict() for c in self.checks]}

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


# --------------------------------------------------------------------------- differencing

def fd_weights(t: np.ndarray, k: int, half: int = 2) -> np.ndarray:
    """Weights of d/dt at t[k] from the interpolating polynomial through t[k-half..k+half]."""
    ts = t[k - half:k + half + 1]
    s = float(np.max(np.abs(ts - t[k])))
    tau = (ts - t[k]) / s
    m = 2 * half + 1
    V = np.vander(tau, m, increasing=True).T  # V[p, j] = tau_j^p
    rhs = np.zeros(m)
    rhs[1] = 1.0 / s
    return np.linalg.solve(V, rhs)


def time_derivative(t: np.ndarray, y: np.ndarray, half: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Derivative of samples ``y`` at interior indices; returns (indices, dy/dt)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    idx = np.arange(half, len(t) - half)
    out = np.empty((len(idx),) + y.shape[1:])
    for row, k in enumerate(idx):
        w = fd_weights(t, k, half)
        out[row] = np.tensordot(w, y[k - half:k + half + 1], axes=1)
    return idx, out


def _norm(G, u) -> float:
    return float(np.sqrt(abs(u @ G @ u)))


def _perp_residual(G, a, v, t) -> float:
    vv = float(v @ G @ v)
    if abs(vv) < 1e-12:
        raise VanishingVelocity(t, vv)
    perp = a - (float(a @ G @ v) / vv) * v
    return _norm(G, perp) / max(_norm(G, a), 1.0)


def _stats(name, res, tol, notes="", **kw) -> CheckResult:
    res = np.asarray(res, dtype=float)
    if res.size == 0:
        return CheckResult(name, float("nan"), float("nan"), tol, 0, notes or "no usable samples", **kw)
    return CheckResult(name, float(res.max()), float(res.mean()), tol, int(res.size), notes, **kw)


def _deflected_residuals(traj: Trajectory, js: JacobiStructure, with_force: bool):
    idx, vdot = time_derivative(traj.t, traj.v)
    metric = js.metric
    res = []
    skipped = 0
    for row, k in enumerate(idx):
        x, v = traj.x[k], traj.v[k]
        if js.factor(x) <= DEGENERACY_TOL:
            skipped += 1
            continue
        G = metric.at(x)
        a = vdot[row] + np.einsum("ijk,j,k->i", christoffel(metric, x).gamma, v, v)
        if with_force:
            g0 = js.g.at(x)
            Xv, J = js.X.jet1(x)
            gam = christoffel(js.g, x).gamma
            A = J + np.einsum("ijh,h->ij", gam, Xv)
            F, _ = _helicity_parts(g0, _inverse(g0, x), A)
            a = a - F @ v
        res.append(_perp_residual(G, a, v, traj.t[k]))
    return res, skipped


def check_pregeodesic(traj: Trajectory, js: JacobiStructure, tolerance: float = GEOMETRIC_TOL) -> CheckResult:
    """Is the sampled curve a pregeodesic of ḡ = (H0+f)g?

    Residual: ḡ-norm of the part of the ḡ-covariant acceleration orthogonal to
    the velocity, divided by max(|ā|_ḡ, 1).
    """
    res, skipped = _deflected_residuals(traj, js, with_force=False)
    notes = f"H0={js.H0:.17g}"
    if skipped:
        notes += f"; {skipped} samples with H0+f <= {DEGENERACY_TOL:g} excluded"
    return _stats("pregeodesic", res, tolerance, notes)


def check_horizontal(traj: Trajectory, js: JacobiStructure, eq_tolerance: float = EQUATION_TOL,
                     geo_tolerance: float = GEOMETRIC_TOL) -> tuple[CheckResult, CheckResult]:
    """(a) residual of the geometric-dynamics equation along the samples and
    (b) ḡ-pregeodesic residual with the helicity force F(v) removed.

    (a) is |v̇ + Γ(v,v) − grad f − F(v)|∞ / max(1, |v̇ + Γ(v,v)|∞).
    (b) is an operational reading of horizontality with respect to the
    nonlinear connection N = Γy − F, not a definition taken as settled.
    """
    idx, vdot = time_derivative(traj.t, traj.v)
    g, X = js.g, js.X
    res_a = []
    for row, k in enumerate(idx):
        x, v = traj.x[k], traj.v[k]
        G = g.at(x)
        Ginv = _inverse(G, x)
        gam = christoffel(g, x).gamma
        Xv, J = X.jet1(x)
        A = J + np.einsum("ijh,h->ij", gam, Xv)
        F, _ = _helicity_parts(G, Ginv, A)
        lhs = vdot[row] + np.einsum("ijk,j,k->i", gam, v, v)
        rhs_ = Ginv @ energy_jet(g, X, x)[1] + F @ v
        res_a.append(float(np.abs(lhs - rhs_).max()) / max(1.0, float(np.abs(lhs).max())))
    a = _stats("horizontal_equation", res_a, eq_tolerance, "geometric-dynamics equation residual")
    res_b, skipped = _deflected_residuals(traj, js, with_force=True)
    notes = "operational interpretation: ḡ-pregeodesic with N-deflection F(v) removed"
    if skipped:
        notes += f"; {skipped} samples with H0+f <= {DEGENERACY_TOL:g} excluded"
    b = _stats("horizontal_pregeodesic", res_b, geo_tolerance, notes)
    return a, b


def check_conservation(traj: Trajectory, record: EnergyRecord, tolerance: float = CONSERVATION_TOL) -> CheckResult:
    """max_k |H(t_k) − H(t_0)| / max(1, |H(t_0)|)."""
    H = np.asarray(record.H)
    scale = max(1.0, abs(float(H[0])))
    drift = np.abs(H - H[0]) / scale
    return _stats("conservation", drift, tolerance, f"H0={H[0]:.17g}; kind={traj.kind}")


def euler_lagrange_residual(sys: DynSystem, traj: Trajectory) -> np.ndarray:
    """|d/dt(∂L/∂v) − ∂L/∂x|∞ / max(1, |d/dt(∂L/∂v)|∞) at interior samples,
    for the potential and geometric-dynamics systems.

    Momenta and ∂L/∂x come from metric and field jets; the time derivative
    of the momentum is taken by finite differences on the samples.
    """
    if sys.kind not in (Kind.POTENTIAL, Kind.GD):
        raise dyn.UnsupportedSystem("Euler-Lagrange residual needs a Lagrangian system")
    g, X = sys.g, sys.X
    K = len(traj)
    p = np.empty((K, sys.dim))
    dLdx = np.empty((K, sys.dim))
    for k in range(K):
        x, v = traj.x[k], traj.v[k]
        G, dG = g.jet1(x)
        Xv, J = X.jet1(x)
        _, df = energy_jet(g, X, x)
        if sys.kind is Kind.POTENTIAL:
            p[k] = G @ v
            dLdx[k] = 0.5 * np.einsum("kij,i,j->k", dG, v, v) + df
        else:
            w = v - Xv
            p[k] = G @ w
            dLdx[k] = 0.5 * np.einsum("kij,i,j->k", dG, w, w) - J.T @ (G @ w)
    idx, pdot = time_derivative(traj.t, p)
    scale = np.maximum(1.0, np.abs(pdot).max(axis=1))
    return np.abs(pdot - dLdx[idx]).max(axis=1) / scale


# --------------------------------------------------------------------------- boundary values

def shoot(sys: DynSystem, x_start, x_end, T: float, v_guess, integrator=None, tol: float = 1e-10,
          max_iter: int = 30) -> np.ndarray | None:
    """Chord-Newton shooting on v0 so that x(T) = x_end; None when it fails.

    The endpoint Jacobian is formed once, by forward differences, at the guess.
    """
    integrator = integrator or dyn.Dopri45(1e-11, 1e-13)
    n = sys.dim
    x_start = np.asarray(x_start, dtype=float)
    x_end = np.asarray(x_end, dtype=float)
    v = np.asarray(v_guess, dtype=float).copy()

    def endpoint(v0):
        tr, _ = dyn.integrate(sys, x_start, v0, 0.0, T, integrator)
        return tr.x[-1]

    try:
        r = endpoint(v) - x_end
        Jm = np.empty((n, n))
        eps = 1e-6 * max(1.0, float(np.abs(v).max()))
        for j in range(n):
            dv = np.zeros(n)
            dv[j] = eps
            Jm[:, j] = (endpoint(v + dv) - x_end - r) / eps
        for _ in range(max_iter):
            if np.abs(r).max() < tol:
                return v
            v = v - np.linalg.solve(Jm, r)
            r = endpoint(v) - x_end
    except (dyn.IntegrationError, GeometryError, np.linalg.LinAlgError):
        return None
    return None


class _ShootFailed(Exception):
    pass


def check_three_energy_regimes(g: MetricLike, X: VectorField, x_start, x_end,
                               times: Sequence[float], zero_tol: float = 1e-8) -> CheckResult:
    """Search geometric-dynamics solutions joining two fixed points with H < 0, H = 0, H > 0.

    For each travel time T in ``times`` the initial velocity is found by
    Newton shooting; a sign change of H between neighbouring times is then
    refined by bisection in T to an H = 0 solution.
    """
    sys = DynSystem(Kind.GD, g, X)
    x_start = np.asarray(x_start, dtype=float)
    found: list[tuple[float, np.ndarray, float]] = []
    guess = X.at(x_start)
    for T in times:
        v = shoot(sys, x_start, x_end, T, guess)
        if v is None:
            continue
        guess = v
        found.append((float(T), v, dyn.hamiltonian(g, X, x_start, v)))
    regimes: dict[str, dict] = {}
    for T, v, H in found:
        if H < -zero_tol:
            regimes.setdefault("H<0", {"T": T, "v0": v.tolist(), "H": H})
        elif H > zero_tol:
            regimes.setdefault("H>0", {"T": T, "v0": v.tolist(), "H": H})
        else:
            regimes.setdefault("H=0", {"T": T, "v0": v.tolist(), "H": H})
    if "H=0" not in regimes:
        for (Ta, va, Ha), (Tb, vb, Hb) in zip(found, found[1:]):
            if Ha * Hb >= 0:
                continue
            cache: dict[float, np.ndarray] = {}

            def H_of(T, va=va):
                vm = shoot(sys, x_start, x_end, T, cache.get("last", va))
                if vm is None:
                    raise _ShootFailed(T)
                cache["last"] = vm
                return dyn.hamiltonian(g, X, x_start, vm)
            try:
                Tz = brentq(H_of, Ta, Tb, xtol=1e-13, rtol=1e-13)
            except _ShootFailed:
                continue
            vz = shoot(sys, x_start, x_end, Tz, cache["last"])
            if vz is not None:
                Hz = dyn.hamiltonian(g, X, x_start, vz)
                if abs(Hz) <= zero_tol:
                    regimes["H=0"] = {"T": Tz, "v0": vz.tolist(), "H": Hz}
                    break
    missing = [r for r in ("H<0", "H=0", "H>0") if r not in regimes]
    scan = [{"T": T, "H": H} for T, _, H in found]
    notes = "travel-time scan with Newton shooting on v0"
    if missing:
        notes += "; not found: " + ", ".join(missing)
    res = CheckResult(
        "three_energy_regimes", float(len(missing)), float(len(missing)), 0.0,
        len(found), notes, trajectory_based=False, inconclusive=bool(missing),
        extra={"regimes": regimes, "scan": scan},
    )
    return res


def dumps(report: DiagnosticsReport, **meta) -> str:
    d = dict(meta)
    d.update(report.to_dict())
    return json.dumps(d, indent=2)
