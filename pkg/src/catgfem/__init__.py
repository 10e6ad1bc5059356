"""Adaptive P1 finite elements for nonselfadjoint and indefinite elliptic problems.

Three drivers share one SOLVE -> ESTIMATE -> MARK -> REFINE loop:
the standard method (SAFEM) solves the full nonsymmetric system on every
mesh, the two-grid method (ATGFEM) solves it only on the initial mesh and
an SPD problem with lagged lower-order terms on the fine mesh, and the
corrected two-grid method (CATGFEM) adds a coarse residual correction
before lagging.
"""

from .adaptive import AdaptiveConfig, Algorithm, energy_error, l2_error, run
from .assembly import CoefficientField, assemble_a, assemble_load, assemble_N
from .errors import CatgfemError
from .estimate import EstimatorReport, LagMode, dorfler_mark, estimate
from .fem import FeFunction, FeSpace, build_space, interpolate, prolongation
from .linalg import SolveReport, cg_solve, nonsym_solve
from .mesh import Mesh, bisect, generate_lshape, generate_unit_square
from .problems import BenchmarkProblem, example1, example2, example3, get_problem
from .record import LevelRecord, RunRecord, loglog_slope, read_csv

__all__ = [
    "AdaptiveConfig", "Algorithm", "energy_error", "l2_error", "run",
    "CoefficientField", "assemble_a", "assemble_load", "assemble_N",
    "CatgfemError",
    "EstimatorReport", "LagMode", "dorfler_mark", "estimate",
    "FeFunction", "FeSpace", "build_space", "interpolate", "prolongation",
    "SolveReport", "cg_solve", "nonsym_solve",
    "Mesh", "bisect", "generate_lshape", "generate_unit_square",
    "BenchmarkProblem", "example1", "example2", "example3", "get_problem",
    "LevelRecord", "RunRecord", "loglog_slope", "read_csv",
]
