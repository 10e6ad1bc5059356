"""Residual error indicators and Doerfler marking."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .assembly import BILINEAR_DEGREE, CoefficientField
from .errors import SpaceMismatch, ZeroEstimator
from .fem import FeFunction, FeSpace
from .quadrature import QuadratureRule, gauss_legendre, triangle_rule

__all__ = ["LagMode", "EstimatorReport", "estimate", "dorfler_mark"]

EDGE_POINTS = 4


class LagMode(enum.Enum):
    FULL_OPERATOR = "full"  # k = 0: the whole operator acts on u_k
    SELF_ADJOINT_LAG = "lagged"  # k >= 1: lower-order terms act on a lagged function


@dataclass
class EstimatorReport:
    per_element: np.ndarray  # squared local indicators
    total: float
    lag_mode: LagMode

    @property
    def eta(self) -> float:
        return float(np.sqrt(self.total))


def _div_alpha(coeff, pts, h):
    """Column divergence of alpha by central differences, (n, 2)."""
    out = np.zeros((len(pts), 2))
    for i in range(2):
        step = np.zeros(2)
        step[i] = 1.0
        dx = (1e-6 * h)[:, None] * step
        diff = coeff.alpha(pts + dx) - coeff.alpha(pts - dx)
        out += diff[:, i, :] / (2.0 * dx[:, i])[:, None]
    return out


def estimate(space: FeSpace, u: FeFunction, lag: FeFunction | None, coeff: CoefficientField,
             quad: QuadratureRule | None = None) -> EstimatorReport:
    """Squared indicators h_T^2 ||R_T||^2 + h_T sum_E ||J_E||^2.

    The element residual is ``f + div(alpha grad u) - (beta . grad w + gamma w)``
    with ``w = lag`` when given and ``w = u`` otherwise. Interior edge jumps
    of the normal flux count toward both neighbors; boundary edges carry no
    jump term.
    """
    if u.space is not space:
        raise SpaceMismatch("u_k lives on a different space")
    if lag is not None and lag.space is not space:
        raise SpaceMismatch("lag must be prolonged onto the estimator's space first")
    w = u if lag is None else lag
    mode = LagMode.FULL_OPERATOR if lag is None else LagMode.SELF_ADJOINT_LAG
    quad = quad or triangle_rule(BILINEAR_DEGREE)
    mesh = space.mesh
    m, q = mesh.n_triangles, len(quad)
    h = mesh.diameters
    area = mesh.areas

    pts = quad.physical_points(space.corners)  # (M, q, 2)
    flat = pts.reshape(-1, 2)
    grad_u = u.gradients()
    grad_w = w.gradients()
    w_at = (w.coeffs[mesh.triangles] @ quad.points.T)  # (M, q)

    res = np.asarray(coeff.f(flat), dtype=float).reshape(m, q)
    beta = np.asarray(coeff.beta(flat), dtype=float).reshape(m, q, 2)
    gamma = np.asarray(coeff.gamma(flat), dtype=float).reshape(m, q)
    res = res - np.einsum("mqd,md->mq", beta, grad_w) - gamma * w_at
    if not coeff.alpha_constant:
        div = _div_alpha(coeff, flat, np.repeat(h, q)).reshape(m, q, 2)
        res = res + np.einsum("mqd,md->mq", div, grad_u)
    res_sq = area * (res ** 2 @ quad.weights)

    # flux jumps over interior edges
    e2e = mesh.edge_to_elem
    interior = np.flatnonzero(e2e[:, 1] >= 0)
    t1, t2 = e2e[interior, 0], e2e[interior, 1]
    ends = mesh.vertices[mesh.edges[interior]]
    tangent = ends[:, 1] - ends[:, 0]
    length = np.linalg.norm(tangent, axis=1)
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / length[:, None]
    dgrad = grad_u[t1] - grad_u[t2]
    if coeff.alpha_constant:
        s = np.array([0.5])
        wts = np.array([1.0])
    else:
        s, wts = gauss_legendre(EDGE_POINTS)
    epts = ends[:, None, 0] + s[None, :, None] * tangent[:, None, :]
    alpha = np.asarray(coeff.alpha(epts.reshape(-1, 2)), dtype=float).reshape(len(interior), len(s), 2, 2)
    jump = np.einsum("eqij,ej,ei->eq", alpha, dgrad, normal)
    jump_sq = length * (jump ** 2 @ wts)
    edge_term = np.bincount(t1, weights=jump_sq, minlength=m) + np.bincount(t2, weights=jump_sq, minlength=m)

    per_element = h ** 2 * res_sq + h * edge_term
    return EstimatorReport(per_element, float(per_element.sum()), mode)


def dorfler_mark(report: EstimatorReport, theta: float) -> np.ndarray:
    """Smallest set carrying at least ``theta`` of the squared estimator.

    Indicators are taken in descending order, ties by ascending element
    index; the minimal prefix reaching the bulk criterion is returned as a
    sorted index array.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    eta = np.asarray(report.per_element, dtype=float)
    if not eta.sum() > 0.0:
        raise ZeroEstimator("estimator vanishes; nothing to mark")
    order = np.argsort(-eta, kind="stable")
    cum = np.cumsum(eta[order])
    # compare against the same running sum so rounding cannot flip the prefix
    count = int(np.searchsorted(cum, theta * cum[-1], side="left")) + 1
    return np.sort(order[:min(count, len(order))])
