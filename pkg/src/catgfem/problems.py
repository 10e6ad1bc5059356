"""Benchmark problems: two singular solutions and a convection-dominated layer problem.

Source terms are hand-differentiated; tests check them against finite
differences of the exact solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import CoefficientField, constant_matrix, constant_scalar, constant_vector
from .mesh import Mesh, generate_lshape, generate_unit_square

__all__ = ["BenchmarkProblem", "example1", "example2", "example3", "patch_problem",
           "get_problem", "PROBLEMS"]


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    domain: str  # "unit_square" or "lshape"
    coeff: CoefficientField
    exact_u: Optional[Callable] = None
    exact_grad: Optional[Callable] = None
    default_n: int = 10
    notes: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def singular_corners(self):
        return self.coeff.singular_corners

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None and self.exact_grad is not None

    def initial_mesh(self, n: int | None = None) -> Mesh:
        n = self.default_n if n is None else n
        if self.domain == "unit_square":
            return generate_unit_square(n)
        if self.domain == "lshape":
            return generate_lshape(n)
        raise ValueError(f"unknown domain {self.domain!r}")


# --- example 1: two r^(2/5) peaks at opposite corners of the unit square ---

_E1_CORNERS = ((0.0, 0.0), (1.0, 1.0))
_E1_BETA = np.array([1.0, 1.0])
_E1_GAMMA = -20.0


def _e1_u(x):
    r0 = x[:, 0] ** 2 + x[:, 1] ** 2
    r1 = (x[:, 0] - 1.0) ** 2 + (x[:, 1] - 1.0) ** 2
    return r0 ** 0.2 + r1 ** 0.2


def _e1_grad(x):
    out = np.zeros_like(x, dtype=float)
    for c in _E1_CORNERS:
        d = x - np.asarray(c)
        r2 = np.einsum("ij,ij->i", d, d)
        # grad r^(2/5) = (2/5) r^(-8/5) (x - c)
        out += 0.4 * (r2 ** -0.8)[:, None] * d
    return out


def _e1_f(x):
    r0 = x[:, 0] ** 2 + x[:, 1] ** 2
    r1 = (x[:, 0] - 1.0) ** 2 + (x[:, 1] - 1.0) ** 2
    # -lap r^(2/5) = -(4/25) r^(-8/5)
    diffusion = -0.16 * (r0 ** -0.8 + r1 ** -0.8)
    return diffusion + _e1_grad(x) @ _E1_BETA + _E1_GAMMA * _e1_u(x)


def example1() -> BenchmarkProblem:
    coeff = CoefficientField(
        alpha=constant_matrix(np.eye(2)),
        beta=constant_vector(_E1_BETA),
        gamma=constant_scalar(_E1_GAMMA),
        f=_e1_f,
        g=_e1_u,
        alpha_constant=True,
        singular_corners=_E1_CORNERS,
    )
    return BenchmarkProblem("example1", "unit_square", coeff, _e1_u, _e1_grad, default_n=10,
                            notes="alpha=I, beta=(1,1), gamma=-20, u=r0^(2/5)+r1^(2/5)")


# --- example 2: L-shape corner singularity with small diffusion ---

def _polar(x):
    r = np.hypot(x[:, 0], x[:, 1])
    xi = np.arctan2(x[:, 1], x[:, 0])
    # branch [0, 3pi/2]: u vanishes on both edges at the re-entrant corner
    xi = np.where(xi < 0.0, xi + 2.0 * np.pi, xi)
    return r, xi


def _e2_u(x):
    r, xi = _polar(x)
    return r ** (2.0 / 3.0) * np.sin(2.0 * xi / 3.0)


def _e2_grad(x):
    r, xi = _polar(x)
    with np.errstate(divide="ignore"):
        s = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    return np.column_stack([-s * np.sin(xi / 3.0), s * np.cos(xi / 3.0)])


def _e2_beta(x):
    r = np.hypot(x[:, 0], x[:, 1])
    return np.column_stack([r, r])


def _e2_f(x):
    # u is harmonic and alpha constant, so only the lower-order terms remain
    r, xi = _polar(x)
    conv = (2.0 / 3.0) * r ** (2.0 / 3.0) * (np.cos(xi / 3.0) - np.sin(xi / 3.0))
    return conv - _e2_u(x)


def example2() -> BenchmarkProblem:
    coeff = CoefficientField(
        alpha=constant_matrix(0.1 * np.eye(2)),
        beta=_e2_beta,
        gamma=constant_scalar(-1.0),
        f=_e2_f,
        g=_e2_u,
        alpha_constant=True,
        singular_corners=((0.0, 0.0),),
    )
    return BenchmarkProblem("example2", "lshape", coeff, _e2_u, _e2_grad, default_n=10,
                            notes="alpha=0.1 I, beta=(r,r), gamma=-1, u=r^(2/3) sin(2 xi/3)")


# --- example 3: rotating convection with a steep inflow profile ---

def _e3_g(x, tau=0.003):
    xs, ys = x[:, 0], x[:, 1]
    bottom = np.clip(np.minimum((xs - 0.3) / tau, (0.6 - xs) / tau), 0.0, 1.0)
    return np.where(np.abs(ys) <= 1e-14, bottom, 0.0)


def _e3_beta(x):
    return np.column_stack([x[:, 1], 0.6 - x[:, 0]])


def example3(n: int = 64) -> BenchmarkProblem:
    """Convection-dominated problem without exact solution.

    The default h0 = 1/64 keeps runs at desk scale; pass ``n=256`` for the
    fine-initial-mesh configuration (about 1.3e5 initial elements).
    """
    coeff = CoefficientField(
        alpha=constant_matrix(0.006 * np.eye(2)),
        beta=_e3_beta,
        gamma=constant_scalar(0.0),
        f=lambda x: np.zeros(len(x)),
        g=_e3_g,
        alpha_constant=True,
        singular_corners=(),
    )
    return BenchmarkProblem("example3", "unit_square", coeff, None, None, default_n=n,
                            notes="alpha=0.006 I, beta=(y, 0.6-x), f=0, tau=0.003")


def patch_problem(beta=(1.0, 1.0), gamma=-20.0, n=4) -> BenchmarkProblem:
    """Affine exact solution 1 + 2x + 3y; every P1 method must reproduce it."""
    beta = np.asarray(beta, dtype=float)
    grad = np.array([2.0, 3.0])

    def u(x):
        return 1.0 + 2.0 * x[:, 0] + 3.0 * x[:, 1]

    coeff = CoefficientField(
        beta=constant_vector(beta),
        gamma=constant_scalar(gamma),
        f=lambda x: float(beta @ grad) + gamma * u(x),
        g=u,
    )
    return BenchmarkProblem("patch", "unit_square", coeff, u,
                            lambda x: np.broadcast_to(grad, (len(x), 2)).copy(), default_n=n)


PROBLEMS = {"example1": example1, "example2": example2, "example3": example3}


def get_problem(name: str) -> BenchmarkProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None
