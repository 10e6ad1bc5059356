import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catgfem.errors import NonFiniteValue, NotNested
from catgfem.fem import FeFunction, build_space, evaluate, interpolate, prolongation
from catgfem.mesh import bisect, generate_lshape, generate_unit_square, uniform_refine
from catgfem.problems import example2


def random_history(mesh, rng, rounds):
    meshes = [mesh]
    for _ in range(rounds):
        m = meshes[-1]
        marked = rng.choice(m.n_triangles, size=min(int(rng.integers(1, 6)), m.n_triangles), replace=False)
        meshes.append(bisect(m, marked))
    return meshes


def test_dof_counts():
    s = build_space(generate_unit_square(1))
    assert s.n_dofs == 4 and len(s.dirichlet_dofs) == 4 and len(s.free_dofs) == 0
    s = build_space(generate_unit_square(10))
    assert (s.n_dofs, len(s.dirichlet_dofs), len(s.free_dofs)) == (121, 40, 81)
    v = s.mesh.vertices[s.dirichlet_dofs]
    assert np.all(np.any((v == 0) | (v == 1), axis=1))


def test_lshape_reentrant_corner_is_dirichlet():
    s = build_space(generate_lshape(2))
    origin = int(np.flatnonzero(np.all(s.mesh.vertices == 0, axis=1))[0])
    assert origin in set(s.dirichlet_dofs.tolist())
    assert not s.is_free[origin]


def test_prolongation_identity():
    s = build_space(generate_unit_square(3))
    P = prolongation(s, s)
    np.testing.assert_array_equal(P.toarray(), np.eye(s.n_dofs))


def test_prolongation_midpoint_rows():
    coarse = generate_unit_square(1)
    fine = uniform_refine(coarse, 1)
    P = prolongation(build_space(coarse), build_space(fine)).toarray()
    assert P.shape == (5, 4)
    new = P[4]
    assert sorted(new[new != 0].tolist()) == [0.5, 0.5]
    np.testing.assert_array_equal(P[:4], np.eye(4))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lshape=st.booleans(), rounds=st.integers(1, 6))
def test_prolongation_exact_on_random_histories(seed, lshape, rounds):
    rng = np.random.default_rng(seed)
    coarse = generate_lshape(1) if lshape else generate_unit_square(2)
    meshes = random_history(coarse, rng, rounds)
    cs, fs = build_space(meshes[0]), build_space(meshes[-1])
    v = rng.standard_normal(cs.n_dofs)
    P = prolongation(cs, fs)
    # a single refinement step has rows with one 1 or two halves
    step = prolongation(build_space(meshes[-2]), fs)
    assert step.getnnz(axis=1).max() <= 2
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-15)
    # point evaluation oracle at random points inside the domain
    pts = fs.mesh.vertices[fs.mesh.triangles[rng.integers(0, fs.mesh.n_triangles, 100)]]
    w = rng.dirichlet(np.ones(3), 100)
    x = np.einsum("kij,ki->kj", pts, w)
    coarse_vals = evaluate(FeFunction(cs, v), x)
    fine_vals = evaluate(FeFunction(fs, P @ v), x)
    np.testing.assert_allclose(fine_vals, coarse_vals, atol=1e-12)


def test_prolongation_composition():
    rng = np.random.default_rng(7)
    meshes = random_history(generate_unit_square(2), rng, 5)
    spaces = [build_space(m) for m in meshes]
    P0k = prolongation(spaces[0], spaces[-1])
    composed = prolongation(spaces[-2], spaces[-1]) @ prolongation(spaces[0], spaces[-2])
    assert abs(P0k - composed).max() <= 1e-14


def test_prolongation_rejects_unrelated_meshes():
    a = build_space(bisect(generate_unit_square(2), [0]))
    b = build_space(bisect(generate_unit_square(2), [1]))
    with pytest.raises(NotNested):
        prolongation(a, b)


def test_interpolation():
    s = build_space(generate_unit_square(1))
    assert np.all(interpolate(s, lambda x: np.zeros(len(x))).coeffs == 0)
    u = interpolate(s, lambda x: x[:, 0] + x[:, 1])
    expected = s.mesh.vertices.sum(axis=1)
    np.testing.assert_array_equal(u.coeffs, expected)
    assert sorted(u.coeffs.tolist()) == [0.0, 1.0, 1.0, 2.0]
    s2 = build_space(generate_lshape(2))
    u2 = interpolate(s2, example2().exact_u)
    origin = int(np.flatnonzero(np.all(s2.mesh.vertices == 0, axis=1))[0])
    assert u2.coeffs[origin] == 0.0


def test_interpolation_non_finite():
    s = build_space(generate_unit_square(2))
    with pytest.raises(NonFiniteValue):
        interpolate(s, lambda x: np.where(x[:, 0] > 0, 1.0, np.nan))


def test_gradients_of_affine_function():
    s = build_space(bisect(generate_lshape(2), [0, 3, 5]))
    u = interpolate(s, lambda x: 1 + 2 * x[:, 0] + 3 * x[:, 1])
    np.testing.assert_allclose(u.gradients(), np.tile([2.0, 3.0], (s.mesh.n_triangles, 1)), atol=1e-12)
