"""Semi-Riemannian kernel: metric fields, Levi-Civita connection, energy,
helicity tensor and the conformally rescaled (Jacobi) metric.

Index conventions used throughout:

* ``G[i, j]`` is g_ij, ``dG[k, i, j]`` is the partial derivative of g_ij with
  respect to x^k.
* ``J[i, j]`` is the partial derivative of X^i with respect to x^j.
* ``Gam[i, j, k]`` is the Christoffel symbol Γ^i_{jk}.
* Mixed tensors ``A[i, j]`` carry the upper index first, so A(v) = A @ v.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import vfexpr
from .vfexpr import Expr, Jet

__all__ = [
    "GeometryError", "SingularMetric", "SignatureMismatch", "DegenerateConformalFactor",
    "EmptySample", "MetricField", "VectorField", "ConformalMetric", "MetricLike",
    "ChristoffelAt", "HelicityAt", "JacobiStructure",
    "energy", "energy_jet", "classify", "christoffel", "christoffel_conformal",
    "nabla_X", "helicity", "grad_f", "grad_f_connection", "jacobi_structure",
    "finsler_diagnostics", "DEGENERACY_TOL", "PointData", "point_data",
]

DEGENERACY_TOL = 1e-12


class GeometryError(ValueError):
    pass


class SingularMetric(GeometryError):
    def __init__(self, x, det):
        self.x = np.asarray(x, dtype=float)
        self.det = det
        super().__init__(f"metric is singular at x={self.x.tolist()} (det={det:.3e})")


class SignatureMismatch(GeometryError):
    pass


class DegenerateConformalFactor(GeometryError):
    def __init__(self, x, factor):
        self.x = np.asarray(x, dtype=float)
        self.factor = factor
        super().__init__(f"conformal factor H0+f={factor:.3e} is degenerate at x={self.x.tolist()}")


class EmptySample(GeometryError):
    pass


# --------------------------------------------------------------------------- fields

class MetricLike(Protocol):
    dim: int

    def at(self, x) -> np.ndarray: ...

    def jet1(self, x) -> tuple[np.ndarray, np.ndarray]: ...


def _is_literal(e: Expr) -> bool:
    if isinstance(e, (vfexpr.Num, vfexpr.Const, vfexpr.Param)):
        return True
    if isinstance(e, vfexpr.Neg):
        return _is_literal(e.operand)
    if isinstance(e, vfexpr.Pow):
        return _is_literal(e.base)
    if isinstance(e, vfexpr.Call):
        return _is_literal(e.arg)
    if isinstance(e, vfexpr.BinOp):
        return _is_literal(e.left) and _is_literal(e.right)
    return False


@dataclass(frozen=True, eq=False)
class VectorField:
    """Vector field X with components given as expressions."""

    components: tuple[Expr, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        fns = tuple(vfexpr.compile_expr(c, self.params) for c in self.components)
        object.__setattr__(self, "_fns", fns)

    @classmethod
    def from_strings(cls, comps: Sequence[str], params: Mapping[str, float] | None = None):
        params = dict(params or {})
        n = len(comps)
        return cls(tuple(vfexpr.parse(c, n, list(params)) for c in comps), params)

    @property
    def dim(self) -> int:
        return len(self.components)

    def at(self, x) -> np.ndarray:
        xs = [float(v) for v in x]
        return np.array([fn(xs) for fn in self._fns], dtype=float)

    def jet1(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Values X^i and Jacobian J[i, j] = dX^i/dx^j."""
        n = self.dim
        xs = Jet.variables(x, order=1)
        vals = np.empty(n)
        jac = np.zeros((n, n))
        for i, fn in enumerate(self._fns):
            r = fn(xs)
            if isinstance(r, Jet):
                vals[i] = r.v
                jac[i] = r.g
            else:
                vals[i] = r
        return vals, jac

    def jet2(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.dim
        xs = Jet.variables(x, order=2)
        vals = np.empty(n)
        jac = np.zeros((n, n))
        hess = np.zeros((n, n, n))
        for i, fn in enumerate(self._fns):
            r = fn(xs)
            if isinstance(r, Jet):
                vals[i], jac[i], hess[i] = r.v, r.g, r.h
            else:
                vals[i] = r
        return vals, jac, hess


@dataclass(frozen=True, eq=False)
class MetricField:
    """Position-dependent symmetric (0,2) tensor given by expressions.

    ``signature`` is ``(r, s)``: r positive and s negative eigenvalues.
    """

    entries: tuple[tuple[Expr, ...], ...]
    signature: tuple[int, int] | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.entries)
        if any(len(row) != n for row in self.entries):
            raise GeometryError("metric entries must form a square grid")
        for i in range(n):
            for j in range(i):
                if self.entries[i][j] != self.entries[j][i]:
                    raise GeometryError(f"metric not symmetric as written: g{i+1}{j+1} != g{j+1}{i+1}")
        sig = self.signature
        if sig is None:
            sig = (n, 0)
        if sig[0] + sig[1] != n or min(sig) < 0:
            raise GeometryError(f"signature {sig} incompatible with dimension {n}")
        object.__setattr__(self, "signature", tuple(sig))
        const = all(_is_literal(e) for row in self.entries for e in row)
        object.__setattr__(self, "constant", const)
        fns = tuple(tuple(vfexpr.compile_expr(e, self.params) for e in row) for row in self.entries)
        object.__setattr__(self, "_fns", fns)
        if const:
            g0 = np.array([[float(fn([])) for fn in row] for row in fns])
            g0inv = _inverse(g0, np.zeros(n))
            g0.flags.writeable = g0inv.flags.writeable = False  # shared between calls
            object.__setattr__(self, "_const", g0)
            object.__setattr__(self, "_const_inv", g0inv)

    @classmethod
    def from_strings(cls, rows: Sequence[Sequence[str]], signature=None, params=None):
        params = dict(params or {})
        n = len(rows)
        entries = tuple(tuple(vfexpr.parse(str(s), n, list(params)) for s in row) for row in rows)
        return cls(entries, signature, params)

    @classmethod
    def euclidean(cls, n: int) -> "MetricField":
        return cls.diagonal([1.0] * n)

    @classmethod
    def diagonal(cls, diag: Sequence[float]) -> "MetricField":
        n = len(diag)
        zero = vfexpr.Num(0.0)

        def entry(d):
            return vfexpr.Num(float(d)) if d >= 0 else vfexpr.Neg(vfexpr.Num(float(-d)))

        rows = tuple(tuple(entry(diag[i]) if i == j else zero for j in range(n)) for i in range(n))
        neg = sum(1 for d in diag if d < 0)
        return cls(rows, (n - neg, neg))

    @property
    def dim(self) -> int:
        return len(self.entries)

    def at(self, x) -> np.ndarray:
        if self.constant:
            return self._const
        xs = [float(v) for v in x]
        return np.array([[fn(xs) for fn in row] for row in self._fns], dtype=float)

    def jet1(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Metric matrix and first derivatives ``dG[k, i, j]``."""
        n = self.dim
        if self.constant:
            return self._const, np.zeros((n, n, n))
        xs = Jet.variables(x, order=1)
        G = np.empty((n, n))
        dG = np.zeros((n, n, n))
        for i in range(n):
            for j in range(i, n):
                r = self._fns[i][j](xs)
                if isinstance(r, Jet):
                    G[i, j] = G[j, i] = r.v
                    dG[:, i, j] = dG[:, j, i] = r.g
                else:
                    G[i, j] = G[j, i] = r
        return G, dG

    def jet2(self, x):
        n = self.dim
        xs = Jet.variables(x, order=2)
        G = np.empty((n, n))
        dG = np.zeros((n, n, n))
        d2G = np.zeros((n, n, n, n))
        for i in range(n):
            for j in range(i, n):
                r = self._fns[i][j](xs)
                if isinstance(r, Jet):
                    G[i, j] = G[j, i] = r.v
                    dG[:, i, j] = dG[:, j, i] = r.g
                    d2G[:, :, i, j] = d2G[:, :, j, i] = r.h
                else:
                    G[i, j] = G[j, i] = r
        return G, dG, d2G

    def inverse(self, x) -> np.ndarray:
        if self.constant:
            return self._const_inv
        return _inverse(self.at(x), x)

    def check_signature(self, points) -> None:
        """Raise unless the eigenvalue signs match ``signature`` at every point."""
        for x in points:
            G = self.at(x)
            det = np.linalg.det(G)
            if det == 0.0:
                raise SingularMetric(x, det)
            w = np.linalg.eigvalsh(G)
            sig = (int(np.sum(w > 0)), int(np.sum(w < 0)))
            if sig != self.signature:
                raise SignatureMismatch(f"signature {sig} at x={list(x)}, declared {self.signature}")

    @property
    def riemannian(self) -> bool:
        return self.signature[1] == 0


def _inverse(G: np.ndarray, x) -> np.ndarray:
    det = np.linalg.det(G)
    scale = np.prod(np.abs(np.diag(G))) or 1.0
    if det == 0.0 or abs(det) < 1e-14 * scale:
        raise SingularMetric(x, det)
    return np.linalg.inv(G)


# --------------------------------------------------------------------------- energy

def energy_jet(g: MetricLike, X: VectorField, x) -> tuple[float, np.ndarray]:
    """f = ½ g(X, X) and its gradient df, by the product rule on jets."""
    G, dG = g.jet1(x)
    Xv, J = X.jet1(x)
    GX = G @ Xv
    f = 0.5 * float(Xv @ GX)
    df = 0.5 * np.einsum("kij,i,j->k", dG, Xv, Xv) + J.T @ GX
    return f, df


def energy(g: MetricLike, X: VectorField, x) -> float:
    Xv = X.at(x)
    return 0.5 * float(Xv @ g.at(x) @ Xv)


def classify(g: MetricLike, X: VectorField, points, tol: float = 1e-12) -> str:
    """Causal character of X over a sample: timelike, causal, null, spacelike or mixed."""
    points = list(points)
    if not points:
        raise EmptySample("classification needs at least one sample point")
    fs = np.array([energy(g, X, p) for p in points])
    neg = fs < -tol
    pos = fs > tol
    zero = ~(neg | pos)
    if neg.all():
        return "timelike"
    if zero.all():
        return "null"
    if pos.all():
        return "spacelike"
    if not pos.any():
        return "causal"
    return "mixed"


# --------------------------------------------------------------------------- connection

@dataclass(frozen=True)
class ChristoffelAt:
    x: np.ndarray
    gamma: np.ndarray  # gamma[i, j, k] = Γ^i_{jk}


def _christoffel_from_jet(G, dG, Ginv) -> np.ndarray:
    # Γ_{h,jk} = ½(∂_j g_hk + ∂_k g_hj − ∂_h g_jk)
    lowered = 0.5 * (np.einsum("jhk->hjk", dG) + np.einsum("khj->hjk", dG) - dG)
    return np.einsum("ih,hjk->ijk", Ginv, lowered)


def christoffel(g: MetricLike, x) -> ChristoffelAt:
    """Levi-Civita symbols of ``g`` at ``x`` from exact metric derivatives."""
    x = np.asarray(x, dtype=float)
    G, dG = g.jet1(x)
    n = G.shape[0]
    if not dG.any():
        Ginv = _inverse(G, x)
        return ChristoffelAt(x, np.zeros((n, n, n)))
    return ChristoffelAt(x, _christoffel_from_jet(G, dG, _inverse(G, x)))


def nabla_X(g: MetricLike, X: VectorField, x, gamma: np.ndarray | None = None) -> np.ndarray:
    """Covariant derivative (∇X)^i_j = ∂_j X^i + Γ^i_{jh} X^h."""
    Xv, J = X.jet1(x)
    if gamma is None:
        gamma = christoffel(g, x).gamma
    return J + np.einsum("ijh,h->ij", gamma, Xv)


@dataclass(frozen=True)
class HelicityAt:
    x: np.ndarray
    F: np.ndarray      # F[i, j] = F_j^i
    omega: np.ndarray  # omega[i, j] = g_ik F^k_j


def _helicity_parts(G, Ginv, A):
    S = Ginv @ A.T @ G  # g^{ih} g_{kj} (∇X)^k_h
    return A - S, S


def helicity(g: MetricLike, X: VectorField, x) -> HelicityAt:
    """F = ∇X − g⁻¹⊗g(∇X) and its lowered 2-form."""
    x = np.asarray(x, dtype=float)
    G = g.at(x)
    A = nabla_X(g, X, x)
    F, _ = _helicity_parts(G, _inverse(G, x), A)
    W = G @ F
    return HelicityAt(x, F, 0.5 * (W - W.T))  # antisymmetric exactly, not just up to roundoff


def grad_f(g: MetricLike, X: VectorField, x) -> np.ndarray:
    """g^{ih} ∂_h f with ∂f taken from the energy jet."""
    _, df = energy_jet(g, X, x)
    return _inverse(g.at(x), x) @ df


def grad_f_connection(g: MetricLike, X: VectorField, x) -> np.ndarray:
    """The same vector assembled as g⁻¹⊗g(∇X)(X) through the connection."""
    G = g.at(x)
    A = nabla_X(g, X, x)
    return _inverse(G, x) @ A.T @ G @ X.at(x)


@dataclass(frozen=True)
class PointData:
    """Everything the prolongations need at one point, computed once."""

    G: np.ndarray
    Ginv: np.ndarray
    gamma: np.ndarray
    X: np.ndarray
    A: np.ndarray      # ∇X
    F: np.ndarray      # helicity
    S: np.ndarray      # g⁻¹⊗g(∇X)
    df: np.ndarray     # ∂f by the product rule on jets
    f: float

    @property
    def grad_f(self) -> np.ndarray:
        return self.Ginv @ self.df


def point_data(g: MetricLike, X: VectorField, x) -> PointData:
    x = np.asarray(x, dtype=float)
    G, dG = g.jet1(x)
    Ginv = g.inverse(x) if isinstance(g, MetricField) else _inverse(G, x)
    flat = not dG.any()
    n = G.shape[0]
    gam = np.zeros((n, n, n)) if flat else _christoffel_from_jet(G, dG, Ginv)
    Xv, J = X.jet1(x)
    A = J if flat else J + np.einsum("ijh,h->ij", gam, Xv)
    F, S = _helicity_parts(G, Ginv, A)
    GX = G @ Xv
    df = J.T @ GX
    if not flat:
        df = df + 0.5 * np.einsum("kij,i,j->k", dG, Xv, Xv)
    return PointData(G, Ginv, gam, Xv, A, F, S, df, 0.5 * float(Xv @ GX))


# --------------------------------------------------------------------------- Jacobi metric

@dataclass(frozen=True, eq=False)
class ConformalMetric:
    """ḡ = (H0 + f) g, evaluated lazily and only where the factor is usable."""

    base: MetricLike
    field: VectorField
    H0: float

    @property
    def dim(self) -> int:
        return self.base.dim

    def factor_jet(self, x) -> tuple[float, np.ndarray]:
        f, df = energy_jet(self.base, self.field, x)
        phi = self.H0 + f
        riemann = getattr(self.base, "riemannian", True)
        if abs(phi) < DEGENERACY_TOL or (riemann and phi <= 0.0):
            raise DegenerateConformalFactor(x, phi)
        return phi, df

    def at(self, x) -> np.ndarray:
        phi, _ = self.factor_jet(x)
        return phi * self.base.at(x)

    def jet1(self, x):
        phi, dphi = self.factor_jet(x)
        G, dG = self.base.jet1(x)
        return phi * G, np.einsum("k,ij->kij", dphi, G) + phi * dG


def christoffel_conformal(g: MetricLike, phi: float, dphi: np.ndarray, x) -> np.ndarray:
    """Christoffels of φg from those of g:
    Γ̄^i_{jk} = Γ^i_{jk} + (δ^i_j ∂_kφ + δ^i_k ∂_jφ − g_jk g^{ih} ∂_hφ) / (2φ).
    """
    G = g.at(x)
    Ginv = _inverse(G, x)
    gam = christoffel(g, x).gamma
    n = G.shape[0]
    eye = np.eye(n)
    corr = (np.einsum("ij,k->ijk", eye, dphi) + np.einsum("ik,j->ijk", eye, dphi)
            - np.einsum("jk,i->ijk", G, Ginv @ dphi))
    return gam + corr / (2.0 * phi)


@dataclass(frozen=True, eq=False)
class JacobiStructure:
    """Jacobi metric ḡ = (H0+f)g together with the nonlinear connection
    N_j^i(x, y) = Γ^i_{jk} y^k − F_j^i."""

    g: MetricLike
    X: VectorField
    H0: float

    @property
    def metric(self) -> ConformalMetric:
        return ConformalMetric(self.g, self.X, self.H0)

    def factor(self, x) -> float:
        return self.H0 + energy(self.g, self.X, x)

    def gbar(self, x) -> np.ndarray:
        return self.metric.at(x)

    def christoffel(self, x) -> np.ndarray:
        return christoffel(self.metric, x).gamma

    def N(self, x, y) -> np.ndarray:
        """N[i, j] = N_j^i at (x, y)."""
        gam = christoffel(self.g, x).gamma
        return np.einsum("ijk,k->ij", gam, np.asarray(y, dtype=float)) - helicity(self.g, self.X, x).F

    def excluded(self, x, tol: float = DEGENERACY_TOL) -> bool:
        phi = self.factor(x)
        riemann = getattr(self.g, "riemannian", True)
        if abs(phi) < tol or (riemann and phi <= 0.0):
            return True
        return bool(np.all(self.X.at(x) == 0.0))


def jacobi_structure(g: MetricLike, X: VectorField, H0: float) -> JacobiStructure:
    if not np.isfinite(H0):
        raise GeometryError("H0 must be finite")
    return JacobiStructure(g, X, float(H0))


def finsler_diagnostics(g: MetricLike, X: VectorField, x, v) -> tuple[float, float]:
    """Return (g(v, v), g(X, v)); the second is β/√k for a caller-chosen k."""
    G = g.at(x)
    v = np.asarray(v, dtype=float)
    Gv = G @ v
    return float(v @ Gv), float(X.at(x) @ Gv)
