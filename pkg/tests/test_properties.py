import numpy as np
import pytest

from qvi_extremal.fem import TOL_ORD
from qvi_extremal.properties import (SuiteReport, check_order, lattice_suite, order_suite, penalty_suite,
                                     random_instance, run_all)


def test_report_keeps_worst_violation():
    rep = SuiteReport()
    rep.record("a", 1e-12)
    rep.record("a", 5e-11)
    rep.record("a", 0.0)
    assert rep.violations["a"] == 5e-11 and rep.passed
    rep.record("b", 2 * TOL_ORD)
    assert not rep.passed
    assert rep.to_dict()["violations"] == {"a": 5e-11, "b": 2 * TOL_ORD}


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_instance_is_admissible(seed):
    inst = random_instance(np.random.default_rng(seed), n=32)
    assert np.all(inst.f >= 0) and np.all(inst.f <= inst.g) and np.all(inst.g <= inst.F)
    assert np.all(inst.interval.sub <= inst.interval.sup)


@pytest.mark.parametrize("seed", [3, 11])
def test_order_suite_small(seed):
    rep = order_suite(seed, count=4, n=32)
    assert rep.samples == 4
    assert rep.passed, rep.violations
    assert len(rep.violations) >= 15


def test_order_check_catches_a_planted_violation():
    # swapping the sources turns every "increasing in the source" check into a violation
    inst = random_instance(np.random.default_rng(5), n=32)
    inst.f, inst.g = inst.g, inst.f
    rep = SuiteReport()
    check_order(inst, np.random.default_rng(0), rep)
    assert rep.violations["T_rho increasing"] > TOL_ORD


def test_penalty_suite_exact():
    rep = penalty_suite(seed=4, count=2000)
    assert rep.tol == 0.0 and rep.passed, rep.violations


def test_lattice_suite_exact():
    assert lattice_suite(seed=9, count=50).passed


def test_run_all_keys():
    out = run_all(seed=1, count=1, n=16)
    assert set(out) == {"order", "penalty", "lattice"}
    assert all(v["passed"] for v in out.values())
