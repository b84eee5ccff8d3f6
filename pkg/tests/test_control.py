import numpy as np
import pytest
from scipy.optimize import minimize

from qvi_extremal.control import (ControlProblem, bouligand_residual, certify_stationarity, gradient_check,
                                  kkt_residual, optimize, reduced_gradient, reduced_objective,
                                  solve_adjoints, tangent_directions)
from qvi_extremal.errors import ConfigurationError
from qvi_extremal.extremal import make_interval_from_bound
from qvi_extremal.fem import assemble_space
from qvi_extremal.obstacles import ConstantObstacle, InverseLaplacianObstacle


def _tracking(n=32, a=1.0, b=0.0, nu=1e-2, y_d=1.0, u_b=10.0, obstacle="parabola"):
    s = assemble_space(n)
    if obstacle == "parabola":
        ob = ConstantObstacle(s, 0.2 + 0.8 * (s.x - 0.5) ** 2)
    else:
        ob = InverseLaplacianObstacle(s, scale=3.0, offset=0.6)
    I = make_interval_from_bound(s, s.load(np.full(n, u_b)), ob)
    return ControlProblem(s, ob, I, a, b, y_d, nu, 0.0, u_b)


@pytest.fixture(scope="module")
def tracking():
    return _tracking()


def test_no_state_dependence():
    prob = _tracking(a=0.0, b=0.0, nu=0.3)
    f = np.linspace(0, 5, prob.space.n)
    val, _, _ = reduced_objective(prob, 1e-2, f)
    # |y_d|^2 / 2 in the lumped metric plus the cost term
    expected = 0.5 * prob.inner(prob.y_d, prob.y_d) + 0.15 * prob.inner(f, f)
    assert val == pytest.approx(expected, rel=1e-14)
    grad, p, q = reduced_gradient(prob, 1e-2, f, *reduced_objective(prob, 1e-2, f)[1:])
    assert np.all(p == 0) and np.all(q == 0)
    np.testing.assert_allclose(grad, 0.3 * f)


def test_zero_control_zero_state(tracking):
    val, y, z = reduced_objective(tracking, 1e-4, np.zeros(tracking.space.n))
    assert np.all(y == 0) and np.all(z == 0)
    assert val == pytest.approx(0.5 * tracking.inner(tracking.y_d, tracking.y_d))


def test_adjoint_vanishes_when_tracking_is_exact():
    prob = _tracking(y_d=0.0)
    f = np.zeros(prob.space.n)
    _, y, z = reduced_objective(prob, 1e-2, f)
    p, q = solve_adjoints(prob, 1e-2, f, y, z)
    assert np.all(p == 0) and np.all(q == 0)


def test_adjoint_linear_regime(tracking):
    # far below the obstacle the penalty is off and p = -K^{-T} J_y
    s = tracking.space
    f = np.full(s.n, 0.5)
    _, y, z = reduced_objective(tracking, 1e-2, f)
    assert np.all(y < tracking.obstacle_map.eval(y))
    p, _ = solve_adjoints(tracking, 1e-2, f, y, z)
    J_y = s.mass_lumped * (y - 1.0)
    np.testing.assert_allclose(p, -np.linalg.solve(s.stiffness.toarray().T, J_y), atol=1e-13)


@pytest.mark.parametrize("rho", [1e-2, 1e-4])
@pytest.mark.parametrize("obstacle", ["parabola", "il"])
def test_gradient_matches_difference_quotient(rho, obstacle):
    prob = _tracking(obstacle=obstacle, b=0.5)
    s = prob.space
    f = 4.0 + 2.0 * np.sin(3 * np.pi * s.x)
    val, y, z = reduced_objective(prob, rho, f)
    grad, _, _ = reduced_gradient(prob, rho, f, y, z)
    assert kkt_residual(prob, f, grad) > 1e-3  # not stationary
    h = np.cos(2 * np.pi * s.x)
    assert gradient_check(prob, rho, f, grad, s=1e-6, h=h, val=val) <= 1e-3


def test_large_cost_shrinks_control():
    # with y negligible, f = p / nu and p = K^{-T} M_L (y_d - y) ~ K^{-1} M_L 1
    prob = _tracking(nu=1e3)
    s = prob.space
    f, traj = optimize(prob, [1e-2], np.full(s.n, 5.0))
    np.testing.assert_allclose(f, s.solve_stiffness(s.mass_lumped * np.ones(s.n)) / 1e3, rtol=1e-3)
    assert traj[-1]["kkt_residual"] <= 1e-7


def test_fixed_rho_agrees_with_lbfgsb():
    prob = _tracking(n=16)
    rho = 1e-2
    f, _ = optimize(prob, [rho], np.zeros(16), tol_kkt=1e-10)
    w = prob.space.mass_lumped
    ref = minimize(lambda g: reduced_objective(prob, rho, g)[0], np.zeros(16), method="L-BFGS-B",
                   bounds=[(0.0, 10.0)] * 16, options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
    assert reduced_objective(prob, rho, f)[0] <= ref.fun + 1e-9
    # values agree to second order; the controls to first
    assert np.sqrt(np.sum(w * (f - ref.x) ** 2)) <= 1e-3


def test_values_decrease_within_each_rho(tracking):
    _, traj = optimize(tracking, [1e-2, 1e-4], np.zeros(tracking.space.n))
    for rho in (1e-2, 1e-4):
        vals = [r["value"] for r in traj if r["rho"] == rho]
        assert all(b <= a + 1e-14 for a, b in zip(vals, vals[1:]))


def test_certificate_on_tracking_problem(tracking):
    f, _ = optimize(tracking, [1e-2, 1e-4, 1e-6], np.zeros(tracking.space.n))
    cert = certify_stationarity(tracking, f, 1e-6)
    assert cert.passed, cert.residuals
    assert cert.consistent, cert.residuals
    assert set(cert.to_dict()) >= {"residuals", "checks", "consistency", "passed"}


def test_certificate_without_contact():
    # a tiny target keeps the optimal state away from the obstacle: every multiplier vanishes
    prob = _tracking(y_d=0.01)
    f, _ = optimize(prob, [1e-2, 1e-4], np.zeros(prob.space.n))
    cert = certify_stationarity(prob, f, 1e-4)
    assert cert.passed
    assert np.all(cert.lam == 0) and np.all(cert.zeta == 0)


def test_certificate_reports_failure_at_nonstationary_point(tracking):
    cert = certify_stationarity(tracking, np.full(tracking.space.n, 3.0), 1e-4)
    assert not cert.checks["control_vi"] and not cert.passed


def test_tangent_directions_respect_box(tracking):
    s = tracking.space
    f = np.where(s.x < 0.3, 0.0, np.where(s.x > 0.7, 10.0, 5.0))
    for h in tangent_directions(tracking, f, count=10):
        assert tracking.norm(h) == pytest.approx(1.0)
        assert np.all(h[s.x < 0.3] >= 0) and np.all(h[s.x > 0.7] <= 0)


def test_bouligand_zero_direction_and_stationary_point(tracking):
    s = tracking.space
    f, _ = optimize(tracking, [1e-2, 1e-4, 1e-6, 1e-8], np.zeros(s.n))
    assert bouligand_residual(tracking, f, directions=[np.zeros(s.n)])["min"] == 0.0
    rep = bouligand_residual(tracking, f, count=20)
    assert rep["min"] >= -1e-6


def test_box_outside_sources_rejected():
    s = assemble_space(16)
    ob = ConstantObstacle(s, np.ones(16))
    I = make_interval_from_bound(s, s.load(np.full(16, 1.0)), ob)
    with pytest.raises(ConfigurationError):
        ControlProblem(s, ob, I, 1.0, 0.0, 1.0, 1e-2, 0.0, 2.0)
    with pytest.raises(ConfigurationError):
        ControlProblem(s, ob, I, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0)


def test_objective_rejects_control_outside_box(tracking):
    with pytest.raises(ConfigurationError):
        reduced_objective(tracking, 1e-2, np.full(tracking.space.n, 11.0))
