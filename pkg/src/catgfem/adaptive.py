"""Adaptive drivers: standard AFEM, adaptive two-grid, and corrected adaptive two-grid.

All three share ESTIMATE -> MARK -> REFINE and differ only in SOLVE:

* ``safem``   solves the full nonsymmetric system on every level.
* ``atgfem``  solves it on the initial mesh only; level k solves the SPD
  system a(u_k, v) = (f, v) - N(u_{k-1}, v).
* ``catgfem`` first corrects u_{k-1} with a residual solve on the initial
  mesh, then solves the same SPD system with the corrected lag.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import (CORNER_SUBDIV, LOAD_DEGREE, assemble_a, assemble_load, assemble_N,
                       element_quadrature)
from .errors import CorrectionNotSmallAtK1, NoExactSolution
from .estimate import EstimatorReport, dorfler_mark, estimate
from .fem import FeFunction, FeSpace, build_space, interpolate, prolongation
from .linalg import DEFAULT_TOL, MAX_ITER, SolveReport, cg_solve, nonsym_solve
from .mesh import Mesh, bisect
from .problems import BenchmarkProblem
from .quadrature import triangle_rule
from .record import LevelRecord, RunRecord

__all__ = ["Algorithm", "AdaptiveConfig", "Level", "AdaptiveState", "solve_level_safem",
           "solve_level_atgfem", "solve_level_catgfem", "run", "energy_error", "l2_error"]

log = logging.getLogger(__name__)

K1_CORRECTION_BOUND = 1e-9


class Algorithm(str, enum.Enum):
    SAFEM = "safem"
    ATGFEM = "atgfem"
    CATGFEM = "catgfem"


@dataclass
class AdaptiveConfig:
    algorithm: Algorithm = Algorithm.CATGFEM
    theta: float = 0.3
    tol: float = 1e-8
    max_elements: int = 200_000
    max_iterations: int = 200
    n0: Optional[int] = None  # h0 = 1/n0; problem default when None
    fine_tol: float = DEFAULT_TOL
    coarse_tol: float = DEFAULT_TOL
    max_solver_iter: int = MAX_ITER
    quasi_error_weight: float = 1.0
    # "galerkin": P^T A_hat_{k-1} P; "assembled": A_hat_0 from the coarse mesh
    coarse_operator: str = "galerkin"
    threads: Optional[int] = None
    compute_errors: bool = True

    def __post_init__(self):
        self.algorithm = Algorithm(self.algorithm)
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_elements < 1 or self.max_iterations < 1:
            raise ValueError("caps must be positive")
        if self.quasi_error_weight <= 0:
            raise ValueError("quasi_error_weight must be positive")
        if self.coarse_operator not in ("galerkin", "assembled"):
            raise ValueError(f"unknown coarse operator {self.coarse_operator!r}")


class Level:
    """One mesh of the hierarchy with lazily assembled operators."""

    def __init__(self, mesh: Mesh, problem: BenchmarkProblem, threads=None):
        self.mesh = mesh
        self.space: FeSpace = build_space(mesh)
        self.problem = problem
        self.threads = threads

    @cached_property
    def A(self):
        return assemble_a(self.space, self.problem.coeff, threads=self.threads)

    @cached_property
    def N(self):
        return assemble_N(self.space, self.problem.coeff, threads=self.threads)

    @cached_property
    def A_hat(self):
        return (self.A + self.N).tocsr()

    @cached_property
    def F(self):
        return assemble_load(self.space, self.problem.coeff)

    @cached_property
    def lifting(self):
        """Nodal Dirichlet values on boundary DOFs, zero elsewhere."""
        u = np.zeros(self.space.n_dofs)
        d = self.space.dirichlet_dofs
        if len(d):
            u[d] = interpolate(self.space, self.problem.coeff.g).coeffs[d]
        return u

    def restrict(self, K):
        """Free-free block and free-Dirichlet block of K."""
        fr, d = self.space.free_dofs, self.space.dirichlet_dofs
        Kf = K[fr]
        return Kf[:, fr], Kf[:, d]

    def solve_lifted(self, K, rhs, solver, tol, max_iter, x0=None):
        """Solve K U = rhs on free DOFs with U fixed to the lifting on the boundary."""
        fr, d = self.space.free_dofs, self.space.dirichlet_dofs
        U = self.lifting.copy()
        Kff, Kfd = self.restrict(K)
        b = rhs[fr] - Kfd @ U[d]
        if len(fr) == 0:
            return U, SolveReport(0, 0.0, True, 0.0, "empty")
        guess = None if x0 is None else x0[fr]
        x, report = solver(Kff, b, tol=tol, max_iter=max_iter, x0=guess)
        U[fr] = x
        return U, report


@dataclass
class AdaptiveState:
    k: int
    level0: Level
    current: Level
    config: AdaptiveConfig
    previous: Optional[Level] = None
    u: Optional[FeFunction] = None
    u_prev: Optional[FeFunction] = None
    e0: Optional[FeFunction] = None
    u_star_prev: Optional[FeFunction] = None  # corrected u_{k-1}, on level k-1
    lag: Optional[FeFunction] = None  # lower-order argument, on level k
    P0_prev: Optional[sp.csr_matrix] = None
    P_prev_cur: Optional[sp.csr_matrix] = None
    P0_cur: Optional[sp.csr_matrix] = None
    coarse_report: Optional[SolveReport] = None
    fine_report: Optional[SolveReport] = None
    orth_residual: Optional[float] = None
    history: dict = field(default_factory=dict)


def solve_level_safem(state: AdaptiveState, problem: BenchmarkProblem) -> FeFunction:
    """Full nonsymmetric Galerkin solve on the current level."""
    lvl = state.current
    cfg = state.config
    x0 = None
    if state.u_prev is not None and state.P_prev_cur is not None:
        x0 = state.P_prev_cur @ state.u_prev.coeffs
    U, rep = lvl.solve_lifted(lvl.A_hat, lvl.F, nonsym_solve, cfg.fine_tol, cfg.max_solver_iter, x0)
    state.fine_report = rep
    return FeFunction(lvl.space, U)


def _spd_solve_with_lag(state: AdaptiveState, W: np.ndarray) -> FeFunction:
    lvl = state.current
    cfg = state.config
    rhs = lvl.F - lvl.N @ W
    U, rep = lvl.solve_lifted(lvl.A, rhs, cg_solve, cfg.fine_tol, cfg.max_solver_iter, x0=W)
    state.fine_report = rep
    state.lag = FeFunction(lvl.space, W)
    return FeFunction(lvl.space, U)


def solve_level_atgfem(state: AdaptiveState, problem: BenchmarkProblem) -> FeFunction:
    """SPD solve with the previous solution, prolonged, in the lower-order term."""
    if state.k < 1 or state.u_prev is None:
        raise ValueError("the two-grid solve needs k >= 1 and a previous solution")
    W = state.P_prev_cur @ state.u_prev.coeffs
    return _spd_solve_with_lag(state, W)


def coarse_correction(state: AdaptiveState):
    """Residual solve on the initial mesh for the correction of u_{k-1}.

    Returns ``(e0, report, orth)`` where ``orth`` is the relative size of the
    restricted residual after correction.
    """
    cfg = state.config
    prev = state.previous
    lvl0 = state.level0
    P0 = state.P0_prev
    free0 = lvl0.space.free_dofs
    Pf = P0[:, free0]
    U = state.u_prev.coeffs
    A_hat = prev.A_hat

    r = prev.F - A_hat @ U
    r[prev.space.dirichlet_dofs] = 0.0
    r0 = Pf.T @ r
    if cfg.coarse_operator == "galerkin":
        G = (Pf.T @ (A_hat @ Pf)).tocsr()
    else:
        G = lvl0.restrict(lvl0.A_hat)[0]
    x, rep = nonsym_solve(G, r0, tol=cfg.coarse_tol, max_iter=cfg.max_solver_iter)
    e0 = np.zeros(lvl0.space.n_dofs)
    e0[free0] = x

    u_star = U + P0 @ e0
    r_star = prev.F - A_hat @ u_star
    r_star[prev.space.dirichlet_dofs] = 0.0
    scale = np.linalg.norm(prev.F[prev.space.free_dofs])
    orth = float(np.linalg.norm(Pf.T @ r_star) / scale) if scale > 0 else float(np.linalg.norm(Pf.T @ r_star))
    return FeFunction(lvl0.space, e0), rep, orth


def solve_level_catgfem(state: AdaptiveState, problem: BenchmarkProblem):
    """Coarse correction followed by the SPD solve. Returns ``(e0, u_k)``.

    On level 1 the correction right-hand side is the algebraic residual of
    the initial solve, so e0 is only checked for smallness and u_0 is used
    as the lag unchanged.
    """
    if state.k < 1 or state.u_prev is None:
        raise ValueError("the two-grid solve needs k >= 1 and a previous solution")
    e0, rep, orth = coarse_correction(state)
    state.coarse_report = rep
    if state.k == 1:
        bound = K1_CORRECTION_BOUND * max(np.abs(state.u_prev.coeffs).max(), 1e-300)
        if np.abs(e0.coeffs).max() > bound:
            raise CorrectionNotSmallAtK1(
                f"|e0| = {np.abs(e0.coeffs).max():.3e} exceeds {bound:.3e} on level 1")
        u_star = state.u_prev.coeffs
        state.orth_residual = None
    else:
        u_star = state.u_prev.coeffs + state.P0_prev @ e0.coeffs
        state.orth_residual = orth
    state.e0 = e0
    state.u_star_prev = FeFunction(state.previous.space, u_star)
    W = state.P_prev_cur @ u_star
    return e0, _spd_solve_with_lag(state, W)


def _integrate_error(space, problem, integrand):
    rule = triangle_rule(LOAD_DEGREE)
    elem, pts, wts, bary = element_quadrature(space, rule, problem.singular_corners, CORNER_SUBDIV)
    return float(np.sqrt(max(np.sum(wts * integrand(elem, pts, bary)), 0.0)))


def energy_error(space: FeSpace, u_h: FeFunction, problem: BenchmarkProblem) -> float:
    """sqrt(sum_T int_T alpha grad(u - u_h) . grad(u - u_h))."""
    if problem.exact_grad is None:
        raise NoExactSolution(f"{problem.name} has no exact gradient")
    grad_h = u_h.gradients()

    def integrand(elem, pts, bary):
        d = problem.exact_grad(pts) - grad_h[elem]
        alpha = problem.coeff.alpha(pts)
        return np.einsum("qi,qij,qj->q", d, alpha, d)

    return _integrate_error(space, problem, integrand)


def l2_error(space: FeSpace, u_h: FeFunction, problem: BenchmarkProblem) -> float:
    if problem.exact_u is None:
        raise NoExactSolution(f"{problem.name} has no exact solution")
    tris = space.mesh.triangles

    def integrand(elem, pts, bary):
        uh = np.einsum("qi,qi->q", u_h.coeffs[tris[elem]], bary)
        return (problem.exact_u(pts) - uh) ** 2

    return _integrate_error(space, problem, integrand)


def run(problem: BenchmarkProblem, config: AdaptiveConfig,
        callback: Callable[[AdaptiveState, LevelRecord, EstimatorReport], None] | None = None) -> RunRecord:
    """SOLVE -> ESTIMATE -> MARK -> REFINE until the estimator drops below
    ``config.tol`` or a cap is hit."""
    record = RunRecord(problem.name, config.algorithm.value, config.theta)
    lvl0 = Level(problem.initial_mesh(config.n0), problem, config.threads)
    state = AdaptiveState(k=0, level0=lvl0, current=lvl0, config=config)
    state.P0_cur = sp.identity(lvl0.space.n_dofs, format="csr")

    while True:
        t0 = time.perf_counter()
        state.coarse_report = state.fine_report = state.orth_residual = None
        state.lag = None
        k = state.k
        lvl = state.current
        if k == 0 or config.algorithm is Algorithm.SAFEM:
            u = solve_level_safem(state, problem)
        elif config.algorithm is Algorithm.ATGFEM:
            u = solve_level_atgfem(state, problem)
        else:
            _, u = solve_level_catgfem(state, problem)
        state.u = u
        report = estimate(lvl.space, u, state.lag, problem.coeff)
        elapsed = time.perf_counter() - t0

        row = LevelRecord(k, lvl.mesh.n_triangles, lvl.space.n_dofs, report.eta,
                          coarse_report=state.coarse_report, fine_report=state.fine_report,
                          orth_residual=state.orth_residual)
        if state.e0 is not None and k >= 1 and config.algorithm is Algorithm.CATGFEM:
            row.correction_norm = float(np.abs(state.e0.coeffs).max())
        if config.compute_errors and problem.has_exact:
            row.energy_err = energy_error(lvl.space, u, problem)
            row.l2_err = l2_error(lvl.space, u, problem)
            row.quasi_error = float(np.sqrt(row.energy_err ** 2 + config.quasi_error_weight * report.total))
        record.rows.append(row)
        log.info("k=%d elements=%d dofs=%d eta=%.4e err=%s", k, row.n_elements, row.n_dofs,
                 row.eta, row.energy_err)
        if callback is not None:
            callback(state, row, report)

        if report.eta <= config.tol:
            record.stop_reason = "tol"
        elif row.n_elements >= config.max_elements:
            record.stop_reason = "max_elements"
        elif k + 1 >= config.max_iterations:
            record.stop_reason = "max_iterations"
        if record.stop_reason:
            row.wall_time = elapsed
            break

        t1 = time.perf_counter()
        marked = dorfler_mark(report, config.theta)
        row.n_marked = len(marked)
        new = Level(bisect(lvl.mesh, marked), problem, config.threads)
        P = prolongation(lvl.space, new.space)
        row.wall_time = elapsed + time.perf_counter() - t1

        # keep only the initial, previous and current levels
        state.previous, state.current = lvl, new
        state.P_prev_cur = P
        state.P0_prev = state.P0_cur
        state.P0_cur = (P @ state.P0_prev).tocsr()
        state.u_prev = u
        state.u = None
        state.k = k + 1
    return record
