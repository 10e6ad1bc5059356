import numpy as np
import pytest
import scipy.linalg as sla

from catgfem.assembly import (CoefficientField, assemble_a, assemble_load, assemble_N, constant_matrix,
                              constant_scalar, constant_vector)
from catgfem.errors import NonSpdCoefficient
from catgfem.fem import build_space, interpolate
from catgfem.mesh import bisect, generate_lshape, generate_unit_square
from catgfem.problems import example1, example2, patch_problem


def test_element_stiffness_rows_sum_to_zero():
    s = build_space(generate_unit_square(1))
    A = assemble_a(s, CoefficientField()).toarray()
    np.testing.assert_allclose(A.sum(axis=1), 0.0, atol=1e-14)


def test_stiffness_spd_on_free_dofs():
    s = build_space(generate_unit_square(2))
    A = assemble_a(s, CoefficientField())
    assert (A != A.T).nnz == 0
    Af = A[s.free_dofs][:, s.free_dofs].toarray()
    assert sla.eigvalsh(Af).min() > 0


def test_scaled_alpha_scales_exactly():
    s = build_space(generate_lshape(4))
    A1 = assemble_a(s, CoefficientField())
    A01 = assemble_a(s, example2().coeff)
    assert abs(A01 - 0.1 * A1).max() <= 1e-14


def test_non_spd_alpha_rejected():
    s = build_space(generate_unit_square(2))
    with pytest.raises(NonSpdCoefficient):
        assemble_a(s, CoefficientField(alpha=constant_matrix([[1.0, 0.0], [0.0, -1.0]])))


def test_lower_order_matrix():
    s = build_space(generate_unit_square(3))
    assert abs(assemble_N(s, CoefficientField())).max() == 0.0
    M = assemble_N(s, CoefficientField(gamma=constant_scalar(1.0)))
    assert abs(M.sum() - 1.0) < 1e-12
    assert abs(M - M.T).max() < 1e-15
    ex = example1()
    Ahat = assemble_a(s, ex.coeff) + assemble_N(s, ex.coeff)
    assert abs(Ahat - Ahat.T).max() > 0


def test_convection_of_constants_vanishes():
    # N(1, phi_i) with gamma = 0 is zero since grad 1 = 0
    s = build_space(generate_lshape(2))
    N = assemble_N(s, CoefficientField(beta=constant_vector((1.0, -2.0))))
    np.testing.assert_allclose(N @ np.ones(s.n_dofs), 0.0, atol=1e-14)


def test_shared_pattern():
    s = build_space(bisect(generate_unit_square(4), [1, 7, 20]))
    c = example1().coeff
    A, N = assemble_a(s, c), assemble_N(s, c)
    assert np.array_equal(A.indptr, N.indptr) and np.array_equal(A.indices, N.indices)


def test_threaded_assembly_matches_serial():
    s = build_space(generate_unit_square(12))
    c = example1().coeff
    for fn in (assemble_a, assemble_N):
        a, b = fn(s, c, threads=1), fn(s, c, threads=4)
        assert abs(a - b).max() <= 1e-12


def test_load_vector():
    s = build_space(generate_unit_square(5))
    assert np.all(assemble_load(s, CoefficientField()) == 0)
    F = assemble_load(s, CoefficientField(f=lambda x: np.ones(len(x))))
    assert abs(F.sum() - 1.0) < 1e-12


def test_load_of_singular_source_is_finite_and_converged():
    # refining the corner subdivision should barely change the free load
    # entries; rows of the (Dirichlet) corner vertices themselves are unused
    s = build_space(generate_unit_square(10))
    c = example1().coeff
    F8 = assemble_load(s, c, corner_subdiv=8)
    F16 = assemble_load(s, c, corner_subdiv=16)
    assert np.all(np.isfinite(F8))
    free = s.free_dofs
    assert np.abs(F8 - F16)[free].max() < 1e-5 * np.abs(F16[free]).max()


@pytest.mark.parametrize("mesh", [generate_unit_square(4), bisect(generate_lshape(2), [0, 2, 9])])
def test_patch_test(mesh):
    p = patch_problem()
    s = build_space(mesh)
    u = interpolate(s, p.exact_u)
    c = p.coeff
    K = (assemble_a(s, c) + assemble_N(s, c)).tocsr()
    F = assemble_load(s, c)
    residual = (F - K @ u.coeffs)[s.free_dofs]
    assert np.abs(residual).max() <= 1e-10
