"""Geometric dynamics of flows on semi-Riemannian manifolds."""
from .vfexpr import parse, evaluate, to_str, compile_expr, Jet, ExprError
from .geometry import (MetricField, VectorField, christoffel, helicity, energy, grad_f,
                       jacobi_structure, point_data)
from .dynamics import DynSystem, Kind, RK4, Dopri45, integrate, rhs, hamiltonian, lagrangian
from .verify import (check_conservation, check_horizontal, check_pregeodesic,
                     check_three_energy_regimes, DiagnosticsReport, CheckResult)
from .flows import pendulum, lorenz, abc, builtin, find_equilibria

__version__ = "0.1.0"

__all__ = [
    "parse", "evaluate", "to_str", "compile_expr", "Jet", "ExprError",
    "MetricField", "VectorField", "christoffel", "helicity", "energy", "grad_f",
    "jacobi_structure", "point_data",
    "DynSystem", "Kind", "RK4", "Dopri45", "integrate", "rhs", "hamiltonian", "lagrangian",
    "check_conservation", "check_horizontal", "check_pregeodesic", "check_three_energy_regimes",
    "DiagnosticsReport", "CheckResult",
    "pendulum", "lorenz", "abc", "builtin", "find_equilibria",
]
