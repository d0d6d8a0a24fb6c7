import json
import math

import numpy as np
import pytest

from geodyn import dynamics as dyn
from geodyn import geometry as geo
from geodyn import verify as vf
from geodyn.dynamics import DynSystem, Dopri45, Kind, Trajectory
from geodyn.geometry import MetricField, VectorField

TIGHT = Dopri45(1e-10, 1e-12)
E2 = MetricField.euclidean(2)
RADIAL = VectorField.from_strings(["x1", "x2"])


def _run(kind, g, X, x0, v0, t1, integrator=TIGHT):
    return dyn.integrate(DynSystem(kind, g, X), x0, v0, 0.0, t1, integrator)


@pytest.fixture(scope="module")
def radial_traj():
    return _run(Kind.POTENTIAL, E2, RADIAL, (1.0, 0.0), (0.0, 1.0), 2.0)


@pytest.fixture(scope="module")
def spiral():
    from geodyn.flows import pendulum
    p = pendulum()
    return p, _run(Kind.GD, p.g, p.X, (0.0, 0.0), (1.0, 0.0), 10.0)


# --------------------------------------------------------------------------- differencing

def test_fd_weights_exact_for_quartics(rng):
    t = np.sort(rng.uniform(0, 3, 12))
    y = 2 - t + 3 * t ** 2 - 0.5 * t ** 3 + 0.25 * t ** 4
    idx, dy = vf.time_derivative(t, y)
    ti = t[idx]
    np.testing.assert_allclose(dy, -1 + 6 * ti - 1.5 * ti ** 2 + ti ** 3, rtol=1e-9)


# --------------------------------------------------------------------------- pregeodesic

def test_potential_trajectory_is_pregeodesic(radial_traj):
    traj, rec = radial_traj
    r = vf.check_pregeodesic(traj, geo.jacobi_structure(E2, RADIAL, rec.H[0]))
    assert r.passed and r.max_residual < 1e-4
    assert r.samples_used >= vf.MIN_SAMPLES


def test_wrong_energy_level_is_caught(radial_traj):
    traj, rec = radial_traj
    r = vf.check_pregeodesic(traj, geo.jacobi_structure(E2, RADIAL, rec.H[0] + 1.0))
    assert r.max_residual > 1e-2 and r.status == "fail"


def test_wrong_metric_is_caught(radial_traj):
    traj, rec = radial_traj
    g = MetricField.diagonal([1.0, 4.0])
    r = vf.check_pregeodesic(traj, geo.jacobi_structure(g, RADIAL, rec.H[0]))
    assert r.status == "fail"


def test_straight_line_is_pregeodesic():
    X = VectorField.from_strings(["1", "0"])
    traj, _ = _run(Kind.POTENTIAL, E2, X, (0.0, 0.0), (1.0, 2.0), 3.0)
    r = vf.check_pregeodesic(traj, geo.jacobi_structure(E2, X, 2.0))
    assert r.max_residual < 1e-10


def test_pregeodesic_survives_reparametrization(radial_traj):
    traj, rec = radial_traj
    js = geo.jacobi_structure(E2, RADIAL, rec.H[0])
    # new parameter u = t + 0.1 sin t, so dx/du = v / (1 + 0.1 cos t)
    u = traj.t + 0.1 * np.sin(traj.t)
    v = traj.v / (1.0 + 0.1 * np.cos(traj.t))[:, None]
    re = Trajectory(u, traj.x, v, traj.integrator, traj.policy, kind=traj.kind)
    assert vf.check_pregeodesic(re, js).max_residual < vf.GEOMETRIC_TOL
    # away from the noise floor the residual itself is stable under the change
    off = geo.jacobi_structure(E2, RADIAL, rec.H[0] + 1.0)
    ratio = vf.check_pregeodesic(re, off).max_residual / vf.check_pregeodesic(traj, off).max_residual
    assert 0.5 < ratio < 2.0


def test_vanishing_velocity(pend):
    t = np.linspace(0, 1, 12)
    traj = Trajectory(t, np.tile([1.0, 0.0], (12, 1)), np.zeros((12, 2)), "none", {})
    with pytest.raises(vf.VanishingVelocity):
        vf.check_pregeodesic(traj, geo.jacobi_structure(pend.g, pend.X, 0.0))


def test_degenerate_samples_are_skipped():
    t = np.linspace(0, 1, 15)
    x = np.stack([t - 0.5, np.zeros_like(t)], axis=1)
    v = np.tile([1.0, 0.0], (15, 1))
    traj = Trajectory(t, x, v, "none", {})
    # φ = H0 + |x|²/2 vanishes at the middle sample
    r = vf.check_pregeodesic(traj, geo.jacobi_structure(E2, RADIAL, 0.0))
    assert "excluded" in r.notes


def test_short_trajectory_is_inconclusive(pend):
    traj, rec = _run(Kind.GD, pend.g, pend.X, (0.0, 0.0), (1.0, 0.0), 0.5, dyn.RK4(0.1))
    r = vf.check_conservation(traj, rec)
    assert r.status == "inconclusive" and not r.passed


# --------------------------------------------------------------------------- horizontal

def test_pendulum_horizontal(spiral):
    p, (traj, rec) = spiral
    a, b = vf.check_horizontal(traj, geo.jacobi_structure(p.g, p.X, 0.5))
    assert a.max_residual < 1e-6
    assert b.passed
    assert "operational" in b.notes


def test_horizontal_reduces_to_pregeodesic_without_helicity(radial_traj):
    traj, rec = radial_traj
    js = geo.jacobi_structure(E2, RADIAL, rec.H[0])
    _, b = vf.check_horizontal(traj, js)
    p = vf.check_pregeodesic(traj, js)
    assert abs(b.max_residual - p.max_residual) < 1e-10


def test_horizontal_equation_flags_wrong_system(pend):
    traj, rec = _run(Kind.POTENTIAL, pend.g, pend.X, (1.0, 0.0), (0.0, 1.0), 3.0)
    a, _ = vf.check_horizontal(traj, geo.jacobi_structure(pend.g, pend.X, rec.H[0]))
    assert a.status == "fail"


def test_lorenz_short_horizon_equation_residual(lor):
    xa = np.array([-6.51211371, -6.97404281, 23.92412958])
    traj, rec = _run(Kind.GD, lor.g, lor.X, xa, lor.X.at(xa), 2.0)
    a, _ = vf.check_horizontal(traj, geo.jacobi_structure(lor.g, lor.X, rec.H[0]))
    assert a.max_residual < 1e-5


# --------------------------------------------------------------------------- conservation

def test_spiral_conserves_energy(spiral):
    _, (traj, rec) = spiral
    assert vf.check_conservation(traj, rec).max_residual < 1e-7


def test_kinematic_energy_is_zero(pend):
    traj, rec = dyn.integrate(DynSystem(Kind.KINEMATIC, pend.g, pend.X), (1.0, 0.0), None, 0.0, 5.0, TIGHT)
    assert not rec.H.any()
    assert vf.check_conservation(traj, rec).passed


def test_prolonged_lorenz_is_not_conservative(lor):
    traj, rec = _run(Kind.PROLONGED, lor.g, lor.X, (1.0, 1.0, 1.0), (1.0, 0.0, 0.0), 0.5)
    assert vf.check_conservation(traj, rec).status == "fail"


# --------------------------------------------------------------------------- Euler-Lagrange

@pytest.mark.parametrize("kind", [Kind.GD, Kind.POTENTIAL])
def test_euler_lagrange(kind, pend):
    sys_ = DynSystem(kind, pend.g, pend.X)
    traj, _ = dyn.integrate(sys_, (0.5, 0.2), (0.1, 0.7), 0.0, 3.0, TIGHT)
    assert vf.euler_lagrange_residual(sys_, traj).max() < 1e-5


def test_euler_lagrange_curved():
    from conftest import curved_field, curved_metric
    sys_ = DynSystem(Kind.GD, curved_metric(), curved_field())
    traj, _ = dyn.integrate(sys_, (0.2, 0.1), (0.3, -0.2), 0.0, 3.0, TIGHT)
    assert vf.euler_lagrange_residual(sys_, traj).max() < 1e-5


def test_euler_lagrange_detects_wrong_dynamics(pend):
    traj, _ = _run(Kind.PROLONGED, pend.g, pend.X, (1.0, 0.0), (0.0, 0.3), 3.0)
    assert vf.euler_lagrange_residual(DynSystem(Kind.GD, pend.g, pend.X), traj).max() > 1e-2


# --------------------------------------------------------------------------- boundary values

def test_shooting_hits_target(pend):
    sys_ = DynSystem(Kind.GD, pend.g, pend.X)
    v = vf.shoot(sys_, (1.0, 0.0), (0.0, 1.0), 1.0, (0.0, 1.0))
    traj, _ = dyn.integrate(sys_, (1.0, 0.0), v, 0.0, 1.0, Dopri45(1e-11, 1e-13))
    np.testing.assert_allclose(traj.x[-1], [0.0, 1.0], atol=1e-9)


def test_three_regimes_found(pend):
    r = vf.check_three_energy_regimes(pend.g, pend.X, (1.0, 0.0), (0.0, 1.0), np.linspace(0.5, 3.0, 6))
    assert r.status == "pass"
    reg = r.extra["regimes"]
    assert reg["H<0"]["H"] < 0 < reg["H>0"]["H"]
    assert abs(reg["H=0"]["H"]) < 1e-8
    # along the flow line the quarter turn takes π/2 and H vanishes
    assert reg["H=0"]["T"] == pytest.approx(math.pi / 2, abs=1e-6)


def test_three_regimes_inconclusive_with_narrow_scan(pend):
    r = vf.check_three_energy_regimes(pend.g, pend.X, (1.0, 0.0), (0.0, 1.0), [0.5, 0.7])
    assert r.status == "inconclusive"
    assert "not found" in r.notes and len(r.extra["scan"]) == 2


# --------------------------------------------------------------------------- reports

def test_report_serialization_and_determinism(spiral):
    p, (traj, rec) = spiral
    js = geo.jacobi_structure(p.g, p.X, 0.5)
    rep = vf.DiagnosticsReport()
    rep.add(vf.check_conservation(traj, rec))
    for c in vf.check_horizontal(traj, js):
        rep.add(c)
    again = [vf.check_conservation(traj, rec), *vf.check_horizontal(traj, js)]
    assert [c.to_dict() for c in rep.checks] == [c.to_dict() for c in again]
    doc = json.loads(vf.dumps(rep, scenario="spiral"))
    assert doc["scenario"] == "spiral"
    assert {c["name"] for c in doc["checks"]} == {"conservation", "horizontal_equation", "horizontal_pregeodesic"}
    for c in doc["checks"]:
        assert c["pass"] == (c["max_residual"] <= c["tolerance"])
    assert rep.all_passed and rep["conservation"].passed


def test_failed_check_fails_report():
    rep = vf.DiagnosticsReport()
    rep.add(vf.CheckResult("x", 1.0, 1.0, 0.1, 20))
    rep.add(vf.CheckResult("y", 0.0, 0.0, 0.1, 3))
    assert rep["y"].status == "inconclusive"
    assert not rep.all_passed
