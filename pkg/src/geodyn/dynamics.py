"""Second-order prolongations of a flow, their energies, and time stepping.

All second-order systems are written on the state (x, v) with coordinate
acceleration

    dv^i/dt = -Γ^i_{jk} v^j v^k + R^i(x, v)

where R is the covariant right-hand side of the chosen prolongation.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import MetricLike, VectorField, christoffel, point_data

__all__ = [
    "Kind", "DynSystem", "Trajectory", "EnergyRecord", "RK4", "Dopri45",
    "IntegrationError", "StepSizeUnderflow", "NonFiniteState", "IntegrationDomainError",
    "UnsupportedSystem", "NonParallelWarning",
    "rhs", "lagrangian", "hamiltonian", "integrate", "integrate_field",
    "perturb_parallel", "energy_record",
]

DT_MIN = 1e-12
MAX_STEPS = 10_000_000


class Kind(str, enum.Enum):
    KINEMATIC = "kinematic"   # dx/dt = X
    PROLONGED = "prolonged"   # ∇_t v = (∇X)(v)
    SYS3 = "sys3"             # ∇_t v = S(X) + F(v), S = g⁻¹⊗g(∇X)
    POTENTIAL = "potential"   # ∇_t v = grad f
    GD = "gd"                 # ∇_t v = grad f + F(v)
    SYS4 = "sys4"             # ∇_t v = S(v) + F(X)
    SYS5 = "sys5"             # ∇_t v = S(X) + F(X)


class UnsupportedSystem(ValueError):
    pass


class NonParallelWarning(UserWarning):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, t: float, msg: str):
        self.t = t
        super().__init__(f"t={t:.6g}: {msg}")


class StepSizeUnderflow(IntegrationError):
    def __init__(self, t, dt):
        self.dt = dt
        super().__init__(t, f"step size {dt:.3e} below minimum {DT_MIN:.0e}")


class NonFiniteState(IntegrationError):
    def __init__(self, t):
        super().__init__(t, "non-finite state")


class IntegrationDomainError(IntegrationError):
    def __init__(self, t, cause: Exception):
        self.cause = cause
        super().__init__(t, f"evaluation failed: {cause}")


@dataclass(frozen=True, eq=False)
class DynSystem:
    kind: Kind
    g: MetricLike
    X: VectorField
    Y: VectorField | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.Y is not None and self.kind is not Kind.PROLONGED and self.kind is not Kind.KINEMATIC:
            raise UnsupportedSystem("a parallel perturbation applies to the flow and its prolongation only")

    @property
    def dim(self) -> int:
        return self.X.dim

    @property
    def second_order(self) -> bool:
        return self.kind is not Kind.KINEMATIC

    def flow_velocity(self, x) -> np.ndarray:
        """X(x), plus the perturbation Y(x) when one is attached."""
        u = self.X.at(x)
        if self.Y is not None:
            u = u + self.Y.at(x)
        return u


def rhs(sys: DynSystem, t: float, x, v) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate right-hand side (dx/dt, dv/dt) of ``sys`` at state (x, v)."""
    x = np.asarray(x, dtype=float)
    n = sys.dim
    if sys.kind is Kind.KINEMATIC:
        return sys.flow_velocity(x), np.zeros(n)
    v = np.asarray(v, dtype=float)
    pd = point_data(sys.g, sys.X, x)
    gam = pd.gamma
    kind = sys.kind
    if kind is Kind.PROLONGED:
        acc = pd.A @ v
        if sys.Y is not None:
            Yv, JY = sys.Y.jet1(x)
            acc = acc + (JY + np.einsum("ijh,h->ij", gam, Yv)) @ v
    elif kind is Kind.POTENTIAL:
        acc = pd.grad_f
    elif kind is Kind.GD:
        acc = pd.grad_f + pd.F @ v
    elif kind is Kind.SYS3:
        acc = pd.S @ pd.X + pd.F @ v
    elif kind is Kind.SYS4:
        acc = pd.S @ v + pd.F @ pd.X
    elif kind is Kind.SYS5:
        acc = pd.S @ pd.X + pd.F @ pd.X
    else:  # pragma: no cover
        raise UnsupportedSystem(kind)
    if gam.any():
        acc = acc - np.einsum("ijk,j,k->i", gam, v, v)
    return v.copy(), acc


def hamiltonian(g: MetricLike, X: VectorField, x, v) -> float:
    """H = ½ g(v, v) − f(x)."""
    G = g.at(x)
    v = np.asarray(v, dtype=float)
    Xv = X.at(x)
    return 0.5 * float(v @ G @ v) - 0.5 * float(Xv @ G @ Xv)


def lagrangian(sys: DynSystem, x, v) -> float:
    """L = ½g(v,v) + f for the potential system, ½g(v−X, v−X) for geometric dynamics."""
    G = sys.g.at(x)
    v = np.asarray(v, dtype=float)
    Xv = sys.X.at(x)
    if sys.kind is Kind.POTENTIAL:
        return 0.5 * float(v @ G @ v) + 0.5 * float(Xv @ G @ Xv)
    if sys.kind in (Kind.GD, Kind.SYS3):
        w = v - Xv
        return 0.5 * float(w @ G @ w)
    raise UnsupportedSystem(f"no Lagrangian for system kind {sys.kind.value!r}")


def perturb_parallel(sys: DynSystem, Y: VectorField, sample_points=None, tol: float = 1e-8) -> DynSystem:
    """Attach a parallel field Y: the prolongation of dx/dt = X + Y.

    Parallelism is checked at ``sample_points`` (a default spread when omitted);
    a :class:`NonParallelWarning` reports the largest |∇Y| found.
    """
    if sys.kind not in (Kind.PROLONGED, Kind.KINEMATIC):
        raise UnsupportedSystem("perturbation is defined for the prolonged system")
    if Y.dim != sys.dim:
        raise ValueError("perturbation dimension mismatch")
    if sample_points is None:
        rng = np.random.default_rng(0)
        sample_points = rng.uniform(-1.0, 1.0, size=(16, sys.dim))
    worst = 0.0
    for p in sample_points:
        gam = christoffel(sys.g, p).gamma
        Yv, JY = Y.jet1(p)
        worst = max(worst, float(np.abs(JY + np.einsum("ijh,h->ij", gam, Yv)).max()))
    if worst > tol:
        warnings.warn(f"perturbation is not parallel: max |∇Y| = {worst:.3e}", NonParallelWarning, stacklevel=2)
    return replace(sys, Y=Y)


# --------------------------------------------------------------------------- integrators

@dataclass(frozen=True)
class RK4:
    dt: float
    name: str = "rk4"

    def policy(self) -> dict:
        return {"dt": self.dt}


@dataclass(frozen=True)
class Dopri45:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float = math.inf
    name: str = "dopri45"

    def policy(self) -> dict:
        d = {"rtol": self.rtol, "atol": self.atol}
        if math.isfinite(self.max_step):
            d["max_step"] = self.max_step
        return d


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    integrator: str
    policy: dict
    accepted: int = 0
    rejected: int = 0
    kind: str = ""

    def __len__(self):
        return len(self.t)


@dataclass
class EnergyRecord:
    H: np.ndarray
    f: np.ndarray
    L_potential: np.ndarray
    L_gd: np.ndarray


_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus embedded fourth-order weights
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _guard(fun, t, y):
    try:
        out = fun(t, y)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise IntegrationDomainError(t, exc) from exc
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(t)
    return out


def _rk4(fun, y0, t0, t1, dt):
    span = t1 - t0
    nsteps = int(math.ceil(span / dt - 1e-9))
    ts = [t0]
    ys = [y0]
    y = y0
    for k in range(nsteps):
        ta = t0 + k * dt
        tb = t1 if k == nsteps - 1 else t0 + (k + 1) * dt
        h = tb - ta
        k1 = _guard(fun, ta, y)
        k2 = _guard(fun, ta + h / 2, y + h / 2 * k1)
        k3 = _guard(fun, ta + h / 2, y + h / 2 * k2)
        k4 = _guard(fun, tb, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(tb)
        ts.append(tb)
        ys.append(y)
    return np.array(ts), np.array(ys), nsteps, 0


def _initial_step(fun, t0, y0, f0, rtol, atol, order=5):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = _guard(fun, t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / order)
    return min(100 * h0, h1)


def _dopri(fun, y0, t0, t1, rtol, atol, max_step):
    ts = [t0]
    ys = [y0]
    t, y = t0, y0
    f = _guard(fun, t, y)
    h = min(_initial_step(fun, t, y, f, rtol, atol), max_step, t1 - t0)
    accepted = rejected = 0
    K = np.empty((7, y0.size))
    while t < t1:
        if accepted + rejected >= MAX_STEPS:
            raise IntegrationError(t, f"exceeded {MAX_STEPS} steps")
        if h < DT_MIN:
            raise StepSizeUnderflow(t, h)
        last = t + h >= t1
        if last:
            h = t1 - t
        K[0] = f
        for s in range(1, 7):
            K[s] = _guard(fun, t + _DP_C[s] * h, y + h * (np.dot(_DP_A[s], K[:s])))
        y_new = y + h * (_DP_B @ K)
        err_vec = h * (_DP_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err):
            err = np.inf
        if err <= 1.0:
            t = t1 if last else t + h
            y = y_new
            if not np.all(np.isfinite(y)):
                raise NonFiniteState(t)
            f = K[6].copy()
            ts.append(t)
            ys.append(y)
            accepted += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = min(h * fac, max_step)
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2) if np.isfinite(err) else 0.2
    return np.array(ts), np.array(ys), accepted, rejected


def integrate_field(fun: Callable[[float, np.ndarray], np.ndarray], y0, t0: float, t1: float, integrator):
    """Integrate a plain first-order field dy/dt = fun(t, y).

    Returns (ts, ys, accepted, rejected).
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    y0 = np.asarray(y0, dtype=float)
    if isinstance(integrator, RK4):
        if not integrator.dt > 0:
            raise ValueError("dt must be positive")
        return _rk4(fun, y0, t0, t1, integrator.dt)
    if isinstance(integrator, Dopri45):
        if not (integrator.rtol > 0 and integrator.atol > 0):
            raise ValueError("tolerances must be positive")
        return _dopri(fun, y0, t0, t1, integrator.rtol, integrator.atol, integrator.max_step)
    raise TypeError(f"unknown integrator {integrator!r}")


def energy_record(sys: DynSystem, x: np.ndarray, v: np.ndarray) -> EnergyRecord:
    K = len(x)
    H = np.empty(K)
    f = np.empty(K)
    Lp = np.empty(K)
    Lg = np.empty(K)
    for k in range(K):
        G = sys.g.at(x[k])
        Xv = sys.X.at(x[k])
        kin = 0.5 * float(v[k] @ G @ v[k])
        f[k] = 0.5 * float(Xv @ G @ Xv)
        H[k] = kin - f[k]
        Lp[k] = kin + f[k]
        w = v[k] - Xv
        Lg[k] = 0.5 * float(w @ G @ w)
    return EnergyRecord(H, f, Lp, Lg)


def integrate(sys: DynSystem, x0, v0, t0: float, t1: float, integrator) -> tuple[Trajectory, EnergyRecord]:
    """Integrate ``sys`` from (x0, v0) over [t0, t1].

    Kinematic runs ignore ``v0`` and record v = X(x) at every sample.
    """
    n = sys.dim
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    if sys.kind is Kind.KINEMATIC:
        ts, ys, acc, rej = integrate_field(lambda t, y: sys.flow_velocity(y), x0, t0, t1, integrator)
        xs = ys
        vs = np.array([sys.flow_velocity(p) for p in xs])
    else:
        if v0 is None:
            raise ValueError("v0 is required for second-order systems")
        v0 = np.asarray(v0, dtype=float)
        if v0.shape != (n,):
            raise ValueError(f"v0 must have length {n}")

        def fun(t, y):
            dx, dv = rhs(sys, t, y[:n], y[n:])
            return np.concatenate([dx, dv])

        ts, ys, acc, rej = integrate_field(fun, np.concatenate([x0, v0]), t0, t1, integrator)
        xs, vs = ys[:, :n], ys[:, n:]
    traj = Trajectory(ts, np.ascontiguousarray(xs), np.ascontiguousarray(vs), integrator.name,
                      integrator.policy(), acc, rej, sys.kind.value)
    return traj, energy_record(sys, traj.x, traj.v)
