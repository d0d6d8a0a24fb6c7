"""Built-in flows: plane pendulum, Lorenz, ABC.

Each :class:`FlowSpec` carries the closed-form knowledge printed alongside
the flow (energy formula, curl, divergence, equilibria, solution families).
None of it is trusted by the engine; the test-suite checks every stored
formula against the generic autodiff pipeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import vfexpr
from .geometry import MetricField, VectorField

__all__ = [
    "FlowSpec", "SolutionFamily", "ThresholdUndefined", "pendulum", "lorenz", "abc",
    "builtin", "BUILTINS", "find_equilibria", "curl", "divergence", "lorenz_threshold",
]


class ThresholdUndefined(ValueError):
    pass


@dataclass(frozen=True)
class SolutionFamily:
    """Closed-form solutions x(t; c) of one system kind, linear in the coefficients.

    ``basis(t)`` returns an array of shape (ncoef, len(t), dim) so that
    x(t) = Σ_k c_k basis[k]; ``dbasis`` is its time derivative.
    """

    kind: str
    coefficients: tuple[str, ...]
    basis: Callable[[np.ndarray], np.ndarray]
    dbasis: Callable[[np.ndarray], np.ndarray]
    ddbasis: Callable[[np.ndarray], np.ndarray]
    description: str = ""

    def evaluate(self, coef, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(coef, dtype=float)
        return (np.tensordot(c, self.basis(t), axes=1),
                np.tensordot(c, self.dbasis(t), axes=1),
                np.tensordot(c, self.ddbasis(t), axes=1))

    def fit(self, t, x) -> tuple[np.ndarray, float]:
        """Least-squares coefficients for samples ``x`` and the max abs residual."""
        B = self.basis(np.asarray(t, dtype=float))  # (ncoef, m, n)
        M = B.reshape(B.shape[0], -1).T
        rhs = np.asarray(x, dtype=float).reshape(-1)
        coef, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        resid = float(np.abs(M @ coef - rhs).max())
        return coef, resid


@dataclass(frozen=True, eq=False)
class FlowSpec:
    name: str
    dim: int
    metric: MetricField
    field: VectorField
    params: Mapping[str, float]
    energy_formula: vfexpr.Expr | None = None
    curl_formula: tuple[vfexpr.Expr, ...] | None = None
    divergence_value: float | None = None
    equilibria: tuple[tuple[float, ...], ...] = ()
    equilibrium_surface: vfexpr.Expr | None = None
    families: Mapping[str, SolutionFamily] = field(default_factory=dict)
    threshold: float | None = None
    notes: tuple[str, ...] = ()

    @property
    def X(self) -> VectorField:
        return self.field

    @property
    def g(self) -> MetricField:
        return self.metric

    def stored_energy(self, x) -> float:
        return vfexpr.evaluate(self.energy_formula, x, self.params)

    def stored_curl(self, x) -> np.ndarray:
        return np.array([vfexpr.evaluate(e, x, self.params) for e in self.curl_formula])

    def on_equilibrium_surface(self, x) -> float:
        return vfexpr.evaluate(self.equilibrium_surface, x, self.params)

    def describe(self) -> dict:
        d = {
            "name": self.name,
            "dim": self.dim,
            "params": dict(self.params),
            "X": [vfexpr.to_str(c) for c in self.field.components],
            "metric": "euclidean" if self.metric.constant else "expression",
        }
        if self.energy_formula is not None:
            d["f"] = vfexpr.to_str(self.energy_formula)
        if self.curl_formula is not None:
            d["rot X"] = [vfexpr.to_str(c) for c in self.curl_formula]
        if self.divergence_value is not None:
            d["div X"] = self.divergence_value
        if self.equilibria:
            d["equilibria"] = [list(p) for p in self.equilibria]
        if self.equilibrium_surface is not None:
            d["equilibrium surface"] = vfexpr.to_str(self.equilibrium_surface) + " = 0"
        if self.families:
            d["solution families"] = {k: fam.description for k, fam in self.families.items()}
        if self.threshold is not None:
            d["chaos threshold"] = self.threshold
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def _spec(name, comps, params, **kw) -> FlowSpec:
    n = len(comps)
    X = VectorField.from_strings(comps, params)
    names = list(params)
    parse = lambda s: vfexpr.parse(s, n, names)
    if "energy_formula" in kw:
        kw["energy_formula"] = parse(kw["energy_formula"])
    if "curl_formula" in kw:
        kw["curl_formula"] = tuple(parse(s) for s in kw["curl_formula"])
    if kw.get("equilibrium_surface"):
        kw["equilibrium_surface"] = parse(kw["equilibrium_surface"])
    return FlowSpec(name, n, MetricField.euclidean(n), X, dict(params), **kw)


# --------------------------------------------------------------------------- pendulum

def _stack(*cols):
    # cols: K entries each a tuple of per-component arrays
    return np.array([np.stack(c, axis=-1) for c in cols])


def _pendulum_families() -> dict[str, SolutionFamily]:
    c, s = np.cos, np.sin

    def circle(t):
        return _stack((c(t), s(t)), (s(t), -c(t)))

    def dcircle(t):
        return _stack((-s(t), c(t)), (c(t), s(t)))

    def ddcircle(t):
        return _stack((-c(t), -s(t)), (-s(t), c(t)))

    def centre(t, d=0):
        one = np.ones_like(t) if d == 0 else np.zeros_like(t)
        zero = np.zeros_like(t)
        return _stack((one, zero), (zero, one))

    def spiral(t):
        return np.concatenate([circle(t), _stack((t * c(t), t * s(t)), (t * s(t), -t * c(t)))])

    def dspiral(t):
        return np.concatenate([dcircle(t), _stack(
            (c(t) - t * s(t), s(t) + t * c(t)),
            (s(t) + t * c(t), -c(t) + t * s(t)))])

    def ddspiral(t):
        return np.concatenate([ddcircle(t), _stack(
            (-2 * s(t) - t * c(t), 2 * c(t) - t * s(t)),
            (2 * c(t) - t * s(t), 2 * s(t) + t * c(t)))])

    return {
        "kinematic": SolutionFamily(
            "kinematic", ("c1", "c2"), circle, dcircle, ddcircle,
            "x1 = c1 cos t + c2 sin t, x2 = c1 sin t - c2 cos t (circles, common centre)"),
        "prolonged": SolutionFamily(
            "prolonged", ("a1", "a2", "h", "k"),
            lambda t: np.concatenate([circle(t), centre(t)]),
            lambda t: np.concatenate([dcircle(t), centre(t, 1)]),
            lambda t: np.concatenate([ddcircle(t), centre(t, 2)]),
            "x1 = a1 cos t + a2 sin t + h, x2 = a1 sin t - a2 cos t + k (circles)"),
        "gd": SolutionFamily(
            "gd", ("b1", "b2", "b3", "b4"), spiral, dspiral, ddspiral,
            "x1 = b1 cos t + b2 sin t + b3 t cos t + b4 t sin t, "
            "x2 = b1 sin t - b2 cos t + b3 t sin t - b4 t cos t (spirals)"),
    }


def pendulum() -> FlowSpec:
    """Small oscillations of a plane pendulum, X = (-x2, x1) on Euclidean R²."""
    return _spec(
        "pendulum", ["-x2", "x1"], {},
        energy_formula="(x1^2 + x2^2)/2",
        curl_formula=["0", "0", "2"],
        divergence_value=0.0,
        equilibria=((0.0, 0.0),),
        families=_pendulum_families(),
        notes=("area preserving (div X = 0)",),
    )


# --------------------------------------------------------------------------- Lorenz

def lorenz_threshold(sigma: float, b: float) -> float:
    """r0 = σ(σ + b + 3)/(σ − b − 1), onset of chaotic behaviour."""
    den = sigma - b - 1.0
    if den == 0.0:
        raise ThresholdUndefined("sigma - b - 1 = 0")
    return sigma * (sigma + b + 3.0) / den


def lorenz(sigma: float = 10.0, r: float = 28.0, b: float = 8.0 / 3.0) -> FlowSpec:
    params = {"sigma": float(sigma), "r": float(r), "b": float(b)}
    eq = [(0.0, 0.0, 0.0)]
    if sigma != 0 and b * (r - 1) > 0:
        q = math.sqrt(b * (r - 1))
        eq += [(q, q, r - 1), (-q, -q, r - 1)]
    try:
        r0 = lorenz_threshold(sigma, b)
    except ThresholdUndefined:
        r0 = None
    return _spec(
        "lorenz",
        ["-sigma*x1 + sigma*x2", "-x1*x3 + r*x1 - x2", "x1*x2 - b*x3"],
        params,
        energy_formula="((-sigma*x1 + sigma*x2)^2 + (-x1*x3 + r*x1 - x2)^2 + (x1*x2 - b*x3)^2)/2",
        curl_formula=["2*x1", "-x2", "r - x3 - sigma"],
        equilibria=tuple(eq),
        threshold=r0,
        notes=("chaos threshold r0 = sigma*(sigma + b + 3)/(sigma - b - 1)",),
    )


# --------------------------------------------------------------------------- ABC

def abc(A: float = 1.0, B: float = 1.0, C: float = 1.0) -> FlowSpec:
    params = {"A": float(A), "B": float(B), "C": float(C)}
    notes = ["Beltrami field: rot X = X; solenoidal, volume preserving"]
    if not (A == B == C == 1.0):
        notes.append("stored energy constant reads A+B+C; 1/2 g(X,X) has A^2+B^2+C^2 "
                      "(differs by a constant, gradient unaffected)")
    return _spec(
        "abc",
        ["A*sin(x3) + C*cos(x2)", "B*sin(x1) + A*cos(x3)", "C*sin(x2) + B*cos(x1)"],
        params,
        energy_formula="(A + B + C + 2*A*C*sin(x3)*cos(x2) + 2*B*A*sin(x1)*cos(x3)"
                       " + 2*C*B*sin(x2)*cos(x1))/2",
        curl_formula=["A*sin(x3) + C*cos(x2)", "B*sin(x1) + A*cos(x3)", "C*sin(x2) + B*cos(x1)"],
        divergence_value=0.0,
        equilibrium_surface="sin(x1)*sin(x2)*sin(x3) + cos(x1)*cos(x2)*cos(x3)",
        notes=tuple(notes),
    )


BUILTINS: dict[str, Callable[..., FlowSpec]] = {"pendulum": pendulum, "lorenz": lorenz, "abc": abc}


def builtin(name: str, **params) -> FlowSpec:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown flow {name!r}; built-ins are {sorted(BUILTINS)}") from None
    return factory(**params)


# --------------------------------------------------------------------------- analysis

def curl(X: VectorField, x) -> np.ndarray:
    """rot X by autodiff; planar fields are embedded as (0, 0, ∂1X2 − ∂2X1)."""
    _, J = X.jet1(x)
    if X.dim == 2:
        return np.array([0.0, 0.0, J[1, 0] - J[0, 1]])
    if X.dim != 3:
        raise ValueError("curl needs a 2- or 3-dimensional field")
    return np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])


def divergence(X: VectorField, x) -> float:
    _, J = X.jet1(x)
    return float(np.trace(J))


def find_equilibria(spec: FlowSpec | VectorField, seeds, tol: float = 1e-10, dedupe: float = 1e-6,
                    max_iter: int = 100) -> tuple[list[np.ndarray], int]:
    """Damped Newton on X(x) = 0 from each seed.

    Returns the deduplicated converged points and the number of seeds that
    failed to converge.
    """
    X = spec.field if isinstance(spec, FlowSpec) else spec
    found: list[np.ndarray] = []
    dropped = 0
    for seed in seeds:
        x = np.asarray(seed, dtype=float).copy()
        ok = False
        for _ in range(max_iter):
            F, J = X.jet1(x)
            res = float(np.linalg.norm(F))
            if res < tol * 1e-3:
                break
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
            lam = 1.0
            while lam > 1e-8:
                trial = x + lam * step
                if np.linalg.norm(X.at(trial)) < res:
                    x = trial
                    break
                lam *= 0.5
            else:
                break
        if np.all(np.isfinite(x)) and np.linalg.norm(X.at(x)) < tol:
            ok = True
        if not ok:
            dropped += 1
            continue
        if all(np.linalg.norm(x - p) > dedupe for p in found):
            found.append(x)
    return found, dropped
