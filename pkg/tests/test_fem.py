import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qvi_extremal.errors import ConfigurationError, NumericalError
from qvi_extremal.fem import (assemble_space, dual_norm, h_norm, inf, is_m_matrix, neg_part, order_leq,
                              pos_part, solve_linear, sup, v_norm)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_stiffness_n3_is_textbook():
    s = assemble_space(3)
    assert s.h == 0.25
    expected = 4.0 * np.array([[2, -1, 0], [-1, 2, -1], [0, -1, 2]], float)
    np.testing.assert_allclose(s.stiffness.toarray(), expected, rtol=0, atol=1e-14)


def test_unit_coefficient_constants():
    s = assemble_space(3)
    assert s.c_a == 1.0 and s.c_b == 1.0 and s.self_adjoint


def test_coefficient_scales_stiffness():
    one, two = assemble_space(3), assemble_space(3, 2.0)
    np.testing.assert_allclose(two.stiffness.toarray(), 2 * one.stiffness.toarray())


def test_variable_coefficient_bounds():
    s = assemble_space(20, lambda x: 1.0 + x)
    mids = s.h * (np.arange(21) + 0.5)
    assert s.c_a == pytest.approx(1.0 + mids[0]) and s.c_b == pytest.approx(1.0 + mids[-1])
    assert is_m_matrix(s.stiffness)


@pytest.mark.parametrize("coeff", [0.0, -1.0, lambda x: x - 0.5, lambda x: np.nan * x])
def test_bad_coefficient(coeff):
    with pytest.raises(ConfigurationError):
        assemble_space(8, coeff)


def test_too_few_nodes():
    with pytest.raises(ConfigurationError):
        assemble_space(1)


@pytest.mark.parametrize("n", [3, 10, 57])
def test_mass_matrices(n):
    s = assemble_space(n)
    M = s.mass.toarray()
    np.testing.assert_allclose(M, M.T)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    # row sums of the full mass matrix, boundary hats included, are h
    np.testing.assert_allclose(s.mass_lumped, np.full(n, s.h))
    assert M.sum() == pytest.approx(s.h * n - s.h / 3)  # two boundary couplings of h/6 are dropped


def test_zero_norms(space64):
    z = np.zeros(space64.n)
    assert v_norm(space64, z) == h_norm(space64, z) == dual_norm(space64, z) == 0.0


@settings(max_examples=30, deadline=None)
@given(arrays(float, 16, elements=finite))
def test_riesz_identity(v):
    s = assemble_space(16)
    f = s.laplacian @ v
    assert dual_norm(s, f) == pytest.approx(v_norm(s, v), rel=1e-9, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 16, elements=finite), arrays(float, 16, elements=finite))
def test_dual_norm_bounds_pairing(f, v):
    s = assemble_space(16)
    assert abs(f @ v) <= dual_norm(s, f) * v_norm(s, v) * (1 + 1e-9) + 1e-9


def test_sin_seminorm_exact():
    # sin(pi x) nodal is an eigenvector: L v = (2 - 2cos(pi h))/h v
    s = assemble_space(512)
    v = np.sin(np.pi * s.x)
    exact = np.sqrt((2 - 2 * np.cos(np.pi * s.h)) / s.h * (s.n + 1) / 2)
    assert v_norm(s, v) == pytest.approx(exact, rel=1e-10)
    assert abs(v_norm(s, v) - np.pi / np.sqrt(2)) <= 1e-3


def test_h_norm_uses_consistent_mass(space64):
    v = np.ones(space64.n)
    assert h_norm(space64, v) ** 2 == pytest.approx(v @ (space64.mass @ v))


def test_pos_part_example():
    np.testing.assert_array_equal(pos_part(np.array([-1.0, 2.0, -3.0])), [0.0, 2.0, 0.0])
    np.testing.assert_array_equal(neg_part(np.array([-1.0, 2.0, -3.0])), [1.0, 0.0, 3.0])


@settings(max_examples=50)
@given(arrays(float, 12, elements=finite), arrays(float, 12, elements=finite))
def test_lattice(x, y):
    np.testing.assert_array_equal(inf(x, x), x)
    np.testing.assert_array_equal(sup(x, y), np.array([max(a, b) for a, b in zip(x, y)]))
    np.testing.assert_allclose(sup(x, y), x + pos_part(y - x), atol=1e-12 * (1 + np.abs(x).max()))
    np.testing.assert_array_equal(inf(x, y), np.array([min(a, b) for a, b in zip(x, y)]))
    np.testing.assert_array_equal(pos_part(x) - neg_part(x), x)


def test_order_leq_tolerance():
    x = np.zeros(3)
    assert order_leq(x, x - 1e-11)
    assert not order_leq(x, x - 1e-9)


def test_solve_linear_recovers_solution(space64):
    v = np.sin(3 * space64.x)
    np.testing.assert_allclose(solve_linear(space64, space64.stiffness, space64.stiffness @ v), v, atol=1e-12)


@pytest.mark.parametrize("n", [63, 511])
def test_manufactured_sin(n):
    s = assemble_space(n)
    x = solve_linear(s, s.stiffness, s.load(lambda t: np.pi**2 * np.sin(np.pi * t)))
    sin = np.sin(np.pi * s.x)
    # exact discrete solution: pi^2 h^2 / (2 - 2 cos(pi h)) * sin
    np.testing.assert_allclose(x, np.pi**2 * s.h**2 / (2 - 2 * np.cos(np.pi * s.h)) * sin, rtol=1e-10)
    assert np.max(np.abs(x - sin)) <= s.h**2


def test_identity_perturbed_vs_dense():
    s = assemble_space(8)
    rng = np.random.default_rng(3)
    b = rng.standard_normal(8)
    A = s.stiffness + sp.identity(8)
    np.testing.assert_allclose(solve_linear(s, A, b), np.linalg.solve(A.toarray(), b), rtol=1e-12)


def test_singular_system_raises():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NumericalError):
        solve_linear(None, A, np.array([1.0, 0.0]))


def test_wrong_length_rejected(space64):
    with pytest.raises(ValueError):
        solve_linear(space64, space64.stiffness, np.ones(3))
