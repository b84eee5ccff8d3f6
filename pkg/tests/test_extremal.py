import numpy as np
import pytest

from qvi_extremal.errors import ConfigurationError, ConvergenceError
from qvi_extremal.extremal import (Branch, OrderInterval, check_certificates, errors_nonincreasing,
                                   iterate_extremal, lipschitz_probe, make_interval_from_bound,
                                   rho_continuation)
from qvi_extremal.fem import TOL_ORD, assemble_space, h_norm, v_norm
from qvi_extremal.obstacles import ConstantObstacle, InverseLaplacianObstacle
from qvi_extremal.solvers import solve_S, solve_T_rho


def test_zero_bound_gives_trivial_interval(space64):
    ob = InverseLaplacianObstacle(space64, scale=1.0, offset=0.1)
    I = make_interval_from_bound(space64, np.zeros(64), ob)
    assert np.all(I.sup == 0.0)
    for br in Branch:
        assert np.all(iterate_extremal(space64, 0.0, np.zeros(64), I, br, ob).solution == 0.0)


def test_thermo_supersolution_is_sin(thermo64):
    s, _, _, I = thermo64
    sin = np.sin(np.pi * s.x)
    np.testing.assert_allclose(I.sup, np.pi**2 * s.h**2 / (2 - 2 * np.cos(np.pi * s.h)) * sin, rtol=1e-10)
    assert np.max(np.abs(I.sup - sin)) <= s.h**2


@pytest.mark.parametrize("seed", range(4))
def test_il_certificates_for_admissible_sources(il_instance, seed):
    s, ob, _, I = il_instance
    g = np.random.default_rng(seed).uniform(0, 1, s.n) * I.bound
    c = check_certificates(s, I, g, ob)
    assert c["sub"] <= TOL_ORD and c["sup"] <= TOL_ORD


def test_negative_obstacle_breaks_subsolution(space64):
    ob = ConstantObstacle(space64, np.full(64, -0.1))
    with pytest.raises(ConfigurationError, match="sub"):
        make_interval_from_bound(space64, space64.load(np.ones(64)), ob)


def test_negative_bound_rejected(space64):
    ob = ConstantObstacle(space64, np.ones(64))
    with pytest.raises(ConfigurationError):
        make_interval_from_bound(space64, -np.ones(64), ob)


def test_interval_order_checked(space64):
    with pytest.raises(ConfigurationError):
        OrderInterval(np.ones(64), np.zeros(64))


def test_thermo_min_branch_is_zero(thermo64):
    s, ob, F, I = thermo64
    r = iterate_extremal(s, 0.0, F, I, Branch.MIN, ob)
    assert v_norm(s, r.solution) <= 1e-8


def test_discrete_sup_is_not_a_fixed_point(thermo64):
    # the discrete obstacle of the discrete supersolution dips below it near the boundary,
    # which is why the discrete maximal branch leaves sin(pi x)
    s, ob, _, I = thermo64
    defect = ob.eval(I.sup) - I.sup
    assert defect.min() < -1e-3 * s.h**2
    assert np.argmin(defect) in (0, s.n - 1) or min(np.argmin(defect), s.n - 1 - np.argmin(defect)) < s.n // 8


@pytest.mark.parametrize("rho", [0.0, 1e-3])
def test_vi_case_branches_coincide_with_pdas(vi_instance, rho):
    s, ob, f, I = vi_instance
    lo = iterate_extremal(s, rho, f, I, Branch.MIN, ob)
    hi = iterate_extremal(s, rho, f, I, Branch.MAX, ob)
    ref = solve_S(s, f, ob.psi).solution if rho == 0 else solve_T_rho(s, rho, f, ob.psi, ob).solution
    assert v_norm(s, lo.solution - ref) <= 1e-9
    assert v_norm(s, hi.solution - ref) <= 1e-9


def test_histories_are_monotone(il_instance):
    s, ob, f, I = il_instance
    for br in Branch:
        r = iterate_extremal(s, 1e-3, f, I, br, ob)
        assert r.monotone and r.fixed_point_residual <= 1e-9
        assert r.iterations == len(r.iterate_history) and r.xi.shape == (s.n,)
        assert r.to_dict()["branch"] == br.value


def test_min_below_max_and_fixed_point(il_instance):
    s, ob, f, I = il_instance
    lo = iterate_extremal(s, 0.0, f, I, Branch.MIN, ob).solution
    hi = iterate_extremal(s, 0.0, f, I, Branch.MAX, ob).solution
    assert np.all(lo <= hi + TOL_ORD)
    again = solve_S(s, f, ob.eval(hi)).solution
    assert v_norm(s, again - hi) <= 1e-8


def test_iteration_budget_error_reports_rate(il_instance):
    s, ob, f, I = il_instance
    with pytest.raises(ConvergenceError, match="rate estimate"):
        iterate_extremal(s, 0.0, f, I, Branch.MAX, ob, max_n=3)


def test_negative_rho_rejected(il_instance):
    s, ob, f, I = il_instance
    with pytest.raises(ConfigurationError):
        iterate_extremal(s, -1.0, f, I, Branch.MAX, ob)


def test_rho_continuation_il(il_instance):
    s, ob, f, I = il_instance
    sched = [0.5**k for k in range(0, 20, 2)]
    results, errors = rho_continuation(s, f, I, Branch.MAX, ob, sched)
    assert errors_nonincreasing(errors)
    assert errors[-1] < errors[0]
    for a, b in zip(results, results[1:]):
        assert np.all(b.solution <= a.solution + TOL_ORD)


def test_rho_schedule_validated(il_instance):
    s, ob, f, I = il_instance
    with pytest.raises(ConfigurationError):
        rho_continuation(s, f, I, Branch.MAX, ob, [1e-2, 1e-1])


@pytest.mark.parametrize("errors, ok", [
    ([3.0, 2.0, 1.0], True),
    ([3.0, 3.0, 3.0], True),
    ([3.0, 2.0, 2.1], True),    # within the 10% slack on the last entry
    ([3.0, 2.0, 2.5], False),
    ([3.0, 3.5, 1.0], False),
    ([1.0], True),
])
def test_errors_nonincreasing(errors, ok):
    assert errors_nonincreasing(errors) is ok


def test_probe_vi_nonexpansive(vi_instance):
    s, ob, f, I = vi_instance
    rng = np.random.default_rng(0)
    deltas = [s.load(rng.uniform(-1, 1, s.n)) for _ in range(20)] + [np.zeros(s.n)]
    rep = lipschitz_probe(s, f, deltas, 0.0, I, Branch.MAX, ob)
    assert len(rep["ratios"]) == 20  # zero perturbation skipped
    assert rep["max_ratio"] <= 1.0 / s.c_a + 1e-8
    assert not rep["violation"]


def test_probe_rejects_inadmissible(vi_instance):
    s, ob, f, I = vi_instance
    with pytest.raises(ConfigurationError):
        lipschitz_probe(s, f, [I.bound], 0.0, I, Branch.MAX, ob)


def test_probe_thermo_min_penalized(thermo64):
    s, ob, F, I = thermo64
    rng = np.random.default_rng(1)
    f = 0.5 * F
    deltas = [np.clip(f + 0.05 * F * rng.uniform(-1, 1, s.n), 0, F) - f for _ in range(20)]
    rep = lipschitz_probe(s, f, deltas, 1e-2, I, Branch.MIN, ob)
    assert rep["max_ratio"] > 0
    assert rep["max_ratio"] <= rep["bound"]


def test_thermo_max_sup_error_is_second_order():
    errs = []
    for n in (31, 63):
        s = assemble_space(n)
        sin = np.sin(np.pi * s.x)
        errs.append(h_norm(s, s.solve_stiffness(s.load(np.pi**2 * sin)) - sin))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
