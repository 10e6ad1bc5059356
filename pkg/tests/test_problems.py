import numpy as np
import pytest

from catgfem.problems import example1, example2, example3, get_problem, patch_problem

H = 1e-4


def fd_grad(u, x, h=H):
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    return np.column_stack([(u(x + ex) - u(x - ex)) / (2 * h), (u(x + ey) - u(x - ey)) / (2 * h)])


def fd_operator(problem, x, h=H):
    """-div(alpha grad u) + beta . grad u + gamma u by central differences (alpha constant)."""
    u = problem.exact_u
    c = problem.coeff
    alpha = c.alpha(x)
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    uxx = (u(x + ex) - 2 * u(x) + u(x - ex)) / h ** 2
    uyy = (u(x + ey) - 2 * u(x) + u(x - ey)) / h ** 2
    uxy = (u(x + ex + ey) - u(x + ex - ey) - u(x - ex + ey) + u(x - ex - ey)) / (4 * h ** 2)
    div = alpha[:, 0, 0] * uxx + (alpha[:, 0, 1] + alpha[:, 1, 0]) * uxy + alpha[:, 1, 1] * uyy
    return -div + np.einsum("qi,qi->q", c.beta(x), fd_grad(u, x, h)) + c.gamma(x) * u(x)


def sample(rng, n, lshape, corners, rmin=0.2):
    pts = []
    while len(pts) < n:
        x = rng.uniform(-1 if lshape else 0, 1, 2)
        if lshape and x[0] > 0 and x[1] < 0:
            continue
        if min(np.hypot(*(x - c)) for c in corners) < rmin:
            continue
        pts.append(x)
    return np.array(pts)


def test_example1_values():
    p = example1()
    # (x^2 + y^2)^(1/5) with x^2 + y^2 = 1/2 for both terms
    assert p.exact_u(np.array([[0.5, 0.5]]))[0] == pytest.approx(2 * 0.5 ** 0.2, abs=1e-12)
    assert p.exact_u(np.array([[0.5, 0.5]]))[0] == pytest.approx(1.74110, abs=1e-5)
    g = p.coeff.g(np.array([[0.5, 0.0]]))[0]
    assert g == pytest.approx(0.25 ** 0.2 + 1.25 ** 0.2, abs=1e-14)
    assert g > 0
    assert p.domain == "unit_square" and p.default_n == 10
    assert set(map(tuple, p.singular_corners)) == {(0.0, 0.0), (1.0, 1.0)}


@pytest.mark.parametrize("make", [example1, example2])
def test_gradient_matches_finite_differences(make):
    p = make()
    rng = np.random.default_rng(11)
    x = sample(rng, 25, p.domain == "lshape", p.singular_corners)
    np.testing.assert_allclose(p.exact_grad(x), fd_grad(p.exact_u, x), rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("make", [example1, example2])
def test_source_matches_finite_difference_operator(make):
    p = make()
    rng = np.random.default_rng(5)
    x = sample(rng, 25, p.domain == "lshape", p.singular_corners)
    f = p.coeff.f(x)
    fd = fd_operator(p, x)
    np.testing.assert_allclose(f, fd, rtol=1e-4, atol=1e-4 * np.abs(fd).max())


def test_example2_values():
    p = example2()
    assert p.exact_u(np.array([[0.0, 0.0]]))[0] == 0.0
    # vanishes on both edges meeting at the re-entrant corner
    edge = np.array([[0.3, 0.0], [0.0, -0.3]])
    np.testing.assert_allclose(p.exact_u(edge), 0.0, atol=1e-15)
    x = np.array([[-0.5, 0.5]])
    r = np.hypot(*x[0])
    gu = p.exact_grad(x)[0]
    expected = r * (gu[0] + gu[1]) - p.exact_u(x)[0]
    assert p.coeff.f(x)[0] == pytest.approx(expected, rel=1e-12)
    assert p.coeff.f(x)[0] == pytest.approx(fd_operator(p, x)[0], rel=1e-4)


def test_example2_is_harmonic():
    p = example2()
    rng = np.random.default_rng(3)
    x = sample(rng, 20, True, p.singular_corners)
    u = p.exact_u
    ex, ey = np.array([1e-3, 0]), np.array([0, 1e-3])
    lap = (u(x + ex) + u(x - ex) + u(x + ey) + u(x - ey) - 4 * u(x)) / 1e-6
    assert np.abs(lap).max() <= 1e-4


@pytest.mark.parametrize("make", [example1, example2])
def test_boundary_data_is_exact_trace(make):
    p = make()
    mesh = p.initial_mesh(20)
    ends = mesh.vertices[mesh.boundary_edges]
    t = np.random.default_rng(0).uniform(0, 1, (200, 1))
    idx = np.random.default_rng(1).integers(0, len(ends), 200)
    x = ends[idx, 0] + t * (ends[idx, 1] - ends[idx, 0])
    np.testing.assert_allclose(p.coeff.g(x), p.exact_u(x), rtol=0, atol=1e-14)


def test_example3_boundary_data():
    p = example3()
    g = lambda x, y: p.coeff.g(np.array([[x, y]]))[0]
    assert g(0.45, 0.0) == 1.0
    assert g(0.3015, 0.0) == pytest.approx(0.5, abs=1e-12)
    assert g(0.5985, 0.0) == pytest.approx(0.5, abs=1e-12)
    assert g(0.0, 0.5) == 0.0
    assert g(0.2, 0.0) == 0.0 and g(0.7, 0.0) == 0.0
    assert g(0.45, 1.0) == 0.0
    assert not p.has_exact
    assert p.default_n == 64
    assert example3(256).initial_mesh().n_triangles == 2 * 256 ** 2


def test_registry():
    assert get_problem("example2").domain == "lshape"
    with pytest.raises(ValueError):
        get_problem("nope")


def test_patch_problem_source():
    p = patch_problem(beta=(1.0, 1.0), gamma=-20.0)
    x = np.array([[0.2, 0.4]])
    assert p.coeff.f(x)[0] == pytest.approx(5.0 - 20.0 * (1 + 0.4 + 1.2))
