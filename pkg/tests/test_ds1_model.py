import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aperture_qn import build_operators, case_from_groups, quasi_newton_solve
from aperture_qn.ds1_model import (
    SingularKernelError,
    _A_cumulative,
    assemble_elasticity,
    assemble_flux,
    from_increments,
    green_kernel,
    increment_jacobian,
    increment_qn_matrix,
    increment_residual,
    interface_aperture,
    mass_balance_gap,
    newton_jacobian,
    quasi_newton_matrix,
    residual,
    to_increments,
)
from aperture_qn.analysis import SWEEP_SOLVER

# Exact cell integrals -(2 (1 - nu^2) / (pi E)) int_cell G(s; x_i) ds for
# n_c = 4, a = 1, E = 1, nu = 0.25, from 30-digit adaptive quadrature
# (mpmath.quad split at x_i).
A_EXACT_4 = np.array(
    [
        [0.87716132503121487, 0.51259148807172722, 0.31838149805093321, 0.15215957943841497],
        [0.51271870927081825, 0.68676368819273001, 0.37251891428087160, 0.16617020866862614],
        [0.31903137245550425, 0.37305263505117103, 0.55809105410499933, 0.21349634426294997],
        [0.15970474212705454, 0.17397575524229661, 0.22171428881419563, 0.35233568558381654],
    ]
)
# ||A - A^T||_F / ||A||_F of the exact matrix above
A_EXACT_4_ASYMMETRY = 0.0113594571532182

# int_0^1 G(s; x) ds at a = 1, same oracle; equals -pi sqrt(1 - x^2)
KERNEL_INTEGRALS = {
    0.1: -3.1258452228282936902,
    0.5: -2.7206990463513267759,
    0.9: -1.3693884898767690962,
    0.99: -0.44317618119849157403,
}

inside = st.floats(1e-6, 1.0 - 1e-6)


# --- kernel ------------------------------------------------------------------


@given(inside, inside)
def test_kernel_symmetric_and_negative(s, x):
    if s == x:
        return
    g1 = green_kernel(s, x, 1.0)
    g2 = green_kernel(x, s, 1.0)
    assert g1 < 0.0
    assert g1 == pytest.approx(g2, rel=1e-12, abs=1e-300)


def test_kernel_log_singularity():
    x = 0.4
    h = 10.0 ** -np.arange(3, 9)
    g = green_kernel(x + h, x, 1.0)
    # each decade of h lowers G by ln(10)
    np.testing.assert_allclose(np.diff(g), -np.log(10.0), rtol=1e-3)


@pytest.mark.parametrize("s, x", [(0.3, 0.3), (0.0, 0.5), (0.5, 1.0), (1.2, 0.5), (-0.1, 0.2)])
def test_kernel_rejects(s, x):
    with pytest.raises(SingularKernelError):
        green_kernel(s, x, 1.0)


def test_kernel_is_scale_free():
    s, x = np.array([0.1, 0.7]), np.array([0.6, 0.2])
    np.testing.assert_allclose(green_kernel(3.0 * s, 3.0 * x, 3.0), green_kernel(s, x, 1.0), rtol=1e-13)


def test_kernel_integral_matches_frozen_oracle():
    from scipy.integrate import quad

    for x, ref in KERNEL_INTEGRALS.items():
        val = sum(quad(lambda s: green_kernel(s, x, 1.0), lo, hi, limit=200)[0] for lo, hi in ((0.0, x), (x, 1.0)))
        assert val == pytest.approx(ref, rel=1e-9)
        assert ref == pytest.approx(-np.pi * np.sqrt(1.0 - x * x), rel=1e-15)


# --- elasticity -------------------------------------------------------------


def test_elasticity_matches_exact_cell_integrals():
    A20 = assemble_elasticity(case_from_groups(1e-3, 1e-3, 4, 20))
    A80 = assemble_elasticity(case_from_groups(1e-3, 1e-3, 4, 80))
    e20 = np.abs(A20 - A_EXACT_4).max() / A_EXACT_4.max()
    e80 = np.abs(A80 - A_EXACT_4).max() / A_EXACT_4.max()
    assert e20 < 5e-4
    assert e80 < 3e-5
    # second order in n_g: two doublings cut the error about 16 times
    assert e80 < e20 / 10.0


@pytest.mark.parametrize("n_c, n_g", [(1, 4), (4, 5), (15, 20), (50, 7)])
def test_elasticity_entries_positive(n_c, n_g):
    A = assemble_elasticity(case_from_groups(1e-3, 1e-3, n_c, n_g))
    assert A.shape == (n_c, n_c)
    assert np.all(np.isfinite(A)) and np.all(A > 0.0)


def test_elasticity_scales_with_material_and_length():
    base = case_from_groups(1e-3, 1e-3, 6)
    A = assemble_elasticity(base)
    A2 = assemble_elasticity(base.replace(youngs_modulus=4.0, half_length=3.0))
    np.testing.assert_allclose(A2, A * 3.0 / 4.0, rtol=1e-12)
    A3 = assemble_elasticity(base.replace(poisson_ratio=0.0))
    np.testing.assert_allclose(A3, A / (1.0 - 0.0625), rtol=1e-13)


def test_elasticity_asymmetry_tends_to_exact_value():
    """Rows are point values and columns are cell integrals, so A is not
    symmetric. Its asymmetry converges to that of the exact cell integrals."""
    asym = []
    for n_g in (10, 20, 40, 80):
        A = assemble_elasticity(case_from_groups(1e-3, 1e-3, 4, n_g))
        asym.append(np.linalg.norm(A - A.T) / np.linalg.norm(A))
    err = np.abs(np.array(asym) - A_EXACT_4_ASYMMETRY)
    assert np.all(err[1:] < err[0] / 10.0)
    assert err[-1] < 1e-4 * A_EXACT_4_ASYMMETRY


@pytest.mark.xfail(strict=True, reason="collocation against cell averages leaves a finite asymmetry (about 1.1% at n_c=4)")
def test_elasticity_asymmetry_vanishes_with_quadrature_order():
    A = assemble_elasticity(case_from_groups(1e-3, 1e-3, 4, 80))
    assert np.linalg.norm(A - A.T) / np.linalg.norm(A) < 1e-3


# --- flux ----------------------------------------------------------------


def test_flux_uniform_aperture_is_scaled_laplacian():
    F = assemble_flux(np.full(4, 2.0), 0.5)
    L = np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], dtype=float)
    np.testing.assert_array_equal(F, 4.0 * L)


def test_flux_interface_average():
    w = np.array([1.0, 3.0, -1.0])
    np.testing.assert_array_equal(interface_aperture(w), [2.0, 1.0])
    F = assemble_flux(w, 1.0)
    np.testing.assert_array_equal(np.diag(F, 1), [-8.0, -1.0])
    np.testing.assert_array_equal(np.diag(F), [8.0, 9.0, 1.0])


def test_flux_degenerate_sizes():
    np.testing.assert_array_equal(assemble_flux(np.zeros(5), 1e17), np.zeros((5, 5)))
    np.testing.assert_array_equal(assemble_flux([2.0], 1.0), np.zeros((1, 1)))


@settings(max_examples=200)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1), st.floats(-20.0, 20.0))
def test_flux_row_and_column_sums_vanish(n, seed, logT):
    w = np.random.default_rng(seed).normal(size=n)
    F = assemble_flux(w, 10.0**logT)
    tol = 1e-14 * np.abs(F).max()
    assert np.abs(F.sum(axis=0)).max() <= tol
    assert np.abs(F.sum(axis=1)).max() <= tol
    np.testing.assert_array_equal(F, F.T)


@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_flux_semidefinite_for_open_fracture(n, seed):
    w = np.random.default_rng(seed).uniform(0.0, 1.0, n)
    lam = np.linalg.eigvalsh(assemble_flux(w, 1.0))
    assert lam.min() >= -1e-12 * max(lam.max(), 1.0)


# --- residual and Jacobians ----------------------------------------------------


def _random_point(rng, ops):
    return rng.uniform(-1.0, 1.0, ops.n_c) * 10.0 ** rng.uniform(-3.0, 0.0)


def test_build_operators_values():
    ops = build_operators(case_from_groups(1e-3, 1e-3, 10))
    assert ops.T == pytest.approx(1.0 / (12.0 * 1e-3 * 0.01), rel=1e-14)
    np.testing.assert_allclose(ops.q_vec, [0.01] + [0.0] * 9, rtol=1e-14)
    with pytest.raises(ValueError):
        ops.A[0, 0] = 1.0


def test_residual_component_and_matrix_forms_agree(mid_ops, rng):
    for _ in range(10):
        p = _random_point(rng, mid_ops)
        w_old = rng.uniform(0.0, 1e-3, mid_ops.n_c)
        w = mid_ops.A @ p
        matrix_form = (mid_ops.A + assemble_flux(w, mid_ops.T)) @ p - mid_ops.q_vec - w_old
        r = residual(mid_ops, p, w_old)
        np.testing.assert_allclose(r, matrix_form, rtol=0, atol=1e-12 * np.abs(matrix_form).max())
        rz = increment_residual(mid_ops, to_increments(p), w_old)
        np.testing.assert_allclose(rz, r, rtol=0, atol=1e-12 * np.abs(r).max())


def test_increment_round_trip(rng):
    p = rng.normal(size=7)
    np.testing.assert_allclose(from_increments(to_increments(p)), p, rtol=0, atol=1e-15)


def test_newton_jacobian_at_zero_pressure_is_A(mid_ops):
    np.testing.assert_array_equal(newton_jacobian(mid_ops, np.zeros(mid_ops.n_c)), mid_ops.A)


def test_newton_jacobian_matches_central_differences(mid_ops, rng):
    w_old = np.zeros(mid_ops.n_c)
    for _ in range(5):
        p = _random_point(rng, mid_ops)
        J = newton_jacobian(mid_ops, p)
        Jfd = np.empty_like(J)
        for j in range(p.size):
            h = 1e-6 * (1.0 + abs(p[j]))
            e = np.zeros(p.size)
            e[j] = h
            Jfd[:, j] = (residual(mid_ops, p + e, w_old) - residual(mid_ops, p - e, w_old)) / (2 * h)
        assert np.abs(J - Jfd).max() <= 1e-6 * np.abs(J).max()


def test_increment_matrices_equal_pressure_matrices_times_P(mid_ops, rng):
    n = mid_ops.n_c
    P = np.tril(np.ones((n, n)))
    AP = _A_cumulative(mid_ops)
    np.testing.assert_allclose(AP, mid_ops.A @ P, rtol=1e-13)
    p = _random_point(rng, mid_ops)
    w = mid_ops.A @ p
    QN = quasi_newton_matrix(mid_ops, w)
    np.testing.assert_array_equal(QN, mid_ops.A + assemble_flux(w, mid_ops.T))
    Mz = increment_qn_matrix(mid_ops, w)
    np.testing.assert_allclose(Mz, QN @ P, rtol=0, atol=1e-12 * np.abs(QN @ P).max())
    Jz = increment_jacobian(mid_ops, to_increments(p))
    JP = newton_jacobian(mid_ops, p) @ P
    np.testing.assert_allclose(Jz, JP, rtol=0, atol=1e-10 * np.abs(JP).max())


def test_quasi_newton_matrix_asymmetry_is_that_of_A(mid_ops, rng):
    w = rng.uniform(0.0, 1e-2, mid_ops.n_c)
    M = quasi_newton_matrix(mid_ops, w)
    np.testing.assert_allclose(M - M.T, mid_ops.A - mid_ops.A.T, rtol=0, atol=1e-15 * np.abs(M).max())


# --- mass balance -----------------------------------------------------------


def test_mass_balance_gap_at_quasi_newton_iterates(mid_ops):
    w_old = np.zeros(mid_ops.n_c)
    sol = quasi_newton_solve(mid_ops, w_old, SWEEP_SOLVER)
    rhs = np.sum(mid_ops.q_vec)
    for rec in sol.trace.records:
        assert mass_balance_gap(mid_ops, rec.p, w_old) <= 1e-12 * rhs


def test_mass_balance_gap_linear_in_perturbation(mid_ops, rng):
    w_old = np.zeros(mid_ops.n_c)
    p = quasi_newton_solve(mid_ops, w_old, SWEEP_SOLVER).state.p
    d = rng.normal(size=p.size) * np.abs(p).max()
    weight = abs(np.sum(mid_ops.A @ d))
    for eps in (1e-2, 1e-4, 1e-6):
        gap = mass_balance_gap(mid_ops, p + eps * d, w_old)
        assert gap == pytest.approx(eps * weight, rel=1e-6)
