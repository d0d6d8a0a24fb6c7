"""Symplectic structures on the tangent bundle TM.

Points of TM carry coordinates z = (x^1..x^n, y^1..y^n). Covectors and
two-forms are stored in the coordinate basis (dx^i, dy^i), with

    (a ∧ b)(u, w) = a(u) b(w) − a(w) b(u),
    (dθ)_{ab}     = ∂_a θ_b − ∂_b θ_a,

so a two-form is an antisymmetric 2n×2n matrix Ω with Ω(u, w) = uᵀ Ω w.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import MetricLike, VectorField, christoffel, energy_jet, helicity

__all__ = [
    "TBPoint", "TwoFormAt", "DegenerateForm", "delta_y", "sasaki_metric", "eta1", "eta2",
    "omega1", "omega2", "dH", "hamilton_gradient", "exterior_derivative", "exterior_derivative2",
    "lifted_field",
]


class DegenerateForm(ValueError):
    def __init__(self, det):
        self.det = det
        super().__init__(f"two-form is degenerate (det={det:.3e})")


@dataclass(frozen=True)
class TBPoint:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("base point and tangent vector must have equal dimension")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_z(cls, z) -> "TBPoint":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(z[:n], z[n:])

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @property
    def dim(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class TwoFormAt:
    at: TBPoint
    matrix: np.ndarray

    def __call__(self, u, w) -> float:
        return float(np.asarray(u) @ self.matrix @ np.asarray(w))

    @property
    def base_block(self) -> np.ndarray:
        n = self.at.dim
        return self.matrix[:n, :n]


def delta_y(g: MetricLike, at: TBPoint) -> np.ndarray:
    """Rows are the covectors δy^j = dy^j + Γ^j_{hk} y^k dx^h, shape (n, 2n)."""
    n = at.dim
    gam = christoffel(g, at.x).gamma
    D = np.zeros((n, 2 * n))
    D[:, :n] = np.einsum("jhk,k->jh", gam, at.y)
    D[:, n:] = np.eye(n)
    return D


def _dx(n: int) -> np.ndarray:
    P = np.zeros((n, 2 * n))
    P[:, :n] = np.eye(n)
    return P


def sasaki_metric(g: MetricLike, at: TBPoint) -> np.ndarray:
    """G = g_ij dx^i⊗dx^j + g_ij δy^i⊗δy^j in the coordinate basis."""
    G = g.at(at.x)
    P = _dx(at.dim)
    D = delta_y(g, at)
    S = P.T @ G @ P + D.T @ G @ D
    return 0.5 * (S + S.T)


def eta1(g: MetricLike, at: TBPoint) -> np.ndarray:
    """η₁ = g_ij y^i dx^j as a 2n covector."""
    out = np.zeros(2 * at.dim)
    out[:at.dim] = g.at(at.x) @ at.y
    return out


def eta2(g: MetricLike, X: VectorField, at: TBPoint) -> np.ndarray:
    """η₂ = −g_ij X^i dx^j + g_ij y^i dx^j."""
    out = np.zeros(2 * at.dim)
    out[:at.dim] = g.at(at.x) @ (at.y - X.at(at.x))
    return out


def omega1(g: MetricLike, at: TBPoint) -> TwoFormAt:
    """Ω₁ = g_ij dx^i ∧ δy^j."""
    G = g.at(at.x)
    P = _dx(at.dim)
    D = delta_y(g, at)
    M = P.T @ G @ D
    return TwoFormAt(at, M - M.T)


def omega2(g: MetricLike, X: VectorField, at: TBPoint) -> TwoFormAt:
    """Ω₂ = Ω₁ + ½ ω_ij dx^i ∧ dx^j.

    The base block is ω_ij = F^k_i g_kj = ∂_i X_j − ∂_j X_i (lowered X), the
    transpose of :attr:`HelicityAt.omega`; with this orientation dη₂ = −Ω₂ and
    the Hamilton gradient of Ω₂ reproduces the geometric dynamics.
    """
    base = omega1(g, at).matrix.copy()
    n = at.dim
    base[:n, :n] += helicity(g, X, at.x).omega.T
    return TwoFormAt(at, base)


def dH(g: MetricLike, X: VectorField, at: TBPoint) -> np.ndarray:
    """Differential of H(x, y) = ½ g(y, y) − f(x) as a 2n covector."""
    G, dG = g.jet1(at.x)
    _, df = energy_jet(g, X, at.x)
    dx = 0.5 * np.einsum("kij,i,j->k", dG, at.y, at.y) - df
    return np.concatenate([dx, G @ at.y])


def hamilton_gradient(Omega: TwoFormAt | np.ndarray, dH_: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve Ω(X_H, w) = dH(w) for all w, i.e. Ωᵀ X_H = dH."""
    M = Omega.matrix if isinstance(Omega, TwoFormAt) else np.asarray(Omega, dtype=float)
    det = np.linalg.det(M)
    scale = np.linalg.norm(M, ord=2) ** M.shape[0] if M.size else 1.0
    if det == 0.0 or abs(det) <= rtol * scale:
        raise DegenerateForm(det)
    return np.linalg.solve(M.T, np.asarray(dH_, dtype=float))


def exterior_derivative(theta: Callable[[np.ndarray], np.ndarray], z, h: float = 1e-5) -> np.ndarray:
    """Central-difference (dθ)_{ab} = ∂_aθ_b − ∂_bθ_a of a 1-form field θ(z)."""
    z = np.asarray(z, dtype=float)
    m = z.size
    D = np.empty((m, m))  # D[a, b] = ∂_a θ_b
    for a in range(m):
        e = np.zeros(m)
        e[a] = h
        D[a] = (theta(z + e) - theta(z - e)) / (2 * h)
    return D - D.T


def exterior_derivative2(omega: Callable[[np.ndarray], np.ndarray], z, h: float = 1e-5) -> np.ndarray:
    """Central-difference (dΩ)_{abc} = ∂_aΩ_bc + ∂_bΩ_ca + ∂_cΩ_ab of a 2-form field."""
    z = np.asarray(z, dtype=float)
    m = z.size
    D = np.empty((m, m, m))  # D[a] = ∂_a Ω
    for a in range(m):
        e = np.zeros(m)
        e[a] = h
        D[a] = (omega(z + e) - omega(z - e)) / (2 * h)
    return D + np.einsum("bca->abc", D) + np.einsum("cab->abc", D)


def lifted_field(g: MetricLike, X: VectorField, which: int = 2) -> Callable[[float, np.ndarray], np.ndarray]:
    """Hamilton vector field of H on TM w.r.t. Ω₁ (which=1) or Ω₂ (which=2), as f(t, z)."""
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")

    def fun(t, z):
        at = TBPoint.from_z(z)
        Om = omega1(g, at) if which == 1 else omega2(g, X, at)
        return hamilton_gradient(Om, dH(g, X, at))
    return fun
