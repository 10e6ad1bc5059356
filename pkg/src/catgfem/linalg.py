"""Linear solvers on scipy CSR matrices.

``cg_solve`` is a Jacobi-preconditioned conjugate gradient for the SPD
fine-level systems. ``nonsym_solve`` handles the nonsymmetric/indefinite
systems: dense LU for small ones, otherwise restarted GMRES with an
incomplete-LU preconditioner and a sparse direct fallback.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IndefiniteDetected, NotConverged, SingularSystem

__all__ = ["SolveReport", "cg_solve", "nonsym_solve", "transpose_apply", "relative_residual"]

DEFAULT_TOL = 1e-10
DENSE_FALLBACK_THRESHOLD = 2000
GMRES_RESTART = 50
MAX_ITER = 10000
STALL_RATIO = 0.5


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time: float
    method: str = ""


def relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return float(r / nb) if nb > 0 else float(r)


def transpose_apply(P, v):
    """``P.T @ v`` without forming the transpose."""
    return P.T @ v


def cg_solve(A, b, tol=DEFAULT_TOL, max_iter=MAX_ITER, x0=None, check_symmetry=False,
             callback=None):
    """Jacobi-preconditioned CG.

    Stops when ``||b - A x|| <= tol * ||b||``. Raises :class:`NotConverged`
    (report attached) at ``max_iter`` and :class:`IndefiniteDetected` when a
    search direction has ``p^T A p <= 0``. ``callback(x)`` sees every iterate.
    """
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if check_symmetry and abs(A - A.T).max() > 0:
        raise ValueError("cg_solve needs a symmetric matrix")
    n = A.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, time.perf_counter() - t0, "cg")
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise IndefiniteDetected("non-positive diagonal entry")
    dinv = 1.0 / diag
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    it = 0
    if rnorm > tol * nb:
        z = dinv * r
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            it += 1
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                raise IndefiniteDetected(f"p^T A p = {pAp:.3e} at iteration {it}")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            if callback is not None:
                callback(x)
            rnorm = np.linalg.norm(r)
            if rnorm <= tol * nb:
                break
            z = dinv * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
    # recursive residual drifts; certify with a true one
    rel = relative_residual(A, x, b)
    report = SolveReport(it, rel, rel <= tol, time.perf_counter() - t0, "cg")
    if not report.converged:
        if it < max_iter:
            # recurrence converged but rounding left the true residual above tol
            x, more = cg_solve(A, b, tol, max_iter - it, x0=x, callback=callback)
            more.iterations += it
            more.wall_time = time.perf_counter() - t0
            return x, more
        raise NotConverged(f"CG stopped at relative residual {rel:.3e}", report)
    return x, report


def _dense_lu(A, b):
    lu, piv = sla.lu_factor(A.toarray() if sp.issparse(A) else np.asarray(A), check_finite=True)
    if np.any(np.diag(lu) == 0.0):
        raise SingularSystem("zero pivot in LU factorization")
    return sla.lu_solve((lu, piv), b)


def nonsym_solve(A, b, tol=DEFAULT_TOL, max_iter=MAX_ITER, restart=GMRES_RESTART,
                 dense_threshold=DENSE_FALLBACK_THRESHOLD, x0=None):
    """Solve a general square system to relative residual ``tol``.

    Systems with at most ``dense_threshold`` rows go to dense LU with partial
    pivoting. Larger ones use ILU-preconditioned GMRES(restart); if that
    stalls, a sparse LU solve takes over.
    """
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if np.linalg.norm(b) == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, time.perf_counter() - t0, "trivial")
    if n <= dense_threshold:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                x = _dense_lu(A, b)
            except sla.LinAlgWarning as exc:
                raise SingularSystem(str(exc)) from exc
        rel = relative_residual(A, x, b)
        if rel > tol:
            x = x + _dense_lu(A, b - A @ x)
            rel = relative_residual(A, x, b)
        report = SolveReport(1, rel, rel <= tol, time.perf_counter() - t0, "dense-lu")
        if not report.converged:
            raise NotConverged(f"dense LU residual {rel:.3e}", report)
        return x, report

    iters = 0
    x = None if x0 is None else np.asarray(x0, dtype=float).copy()
    rel = np.inf
    try:
        ilu = spla.spilu(A.tocsc(), drop_tol=0.0, fill_factor=1.0)
        M = spla.LinearOperator(A.shape, ilu.solve)

        def count(_):
            nonlocal iters
            iters += 1

        # one restart cycle at a time; a cycle that fails to halve the true
        # residual counts as a stall and hands over to the direct solver
        prev = relative_residual(A, x, b) if x is not None else 1.0
        while iters < max_iter:
            x, _info = spla.gmres(A, b, x0=x, rtol=tol * 0.1, atol=0.0, restart=restart,
                                  maxiter=1, M=M, callback=count, callback_type="pr_norm")
            rel = relative_residual(A, x, b)
            if rel <= tol or rel > STALL_RATIO * prev:
                break
            prev = rel
    except RuntimeError:
        # ILU breakdown (zero pivot); leave it to the direct solver
        x = None
    if x is None:
        rel = np.inf
    method = "gmres-ilu"
    if not rel <= tol:
        try:
            x = spla.splu(A.tocsc()).solve(b)
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc
        rel = relative_residual(A, x, b)
        method = "gmres-ilu+splu"
    report = SolveReport(iters, rel, rel <= tol, time.perf_counter() - t0, method)
    if not report.converged:
        raise NotConverged(f"nonsymmetric solve residual {rel:.3e}", report)
    return x, report
