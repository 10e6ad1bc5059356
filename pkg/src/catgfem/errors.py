"""Exception types raised across the package."""


class CatgfemError(Exception):
    """Base class for all errors raised by this package."""


class ClosureNonTermination(CatgfemError):
    """Conformity closure did not settle; the refinement-edge labeling is incompatible."""


class NotNested(CatgfemError):
    """Two meshes are not related by refinement."""


class NonFiniteValue(CatgfemError):
    pass


class NonSpdCoefficient(CatgfemError):
    pass


class SingularSystem(CatgfemError):
    pass


class NotConverged(CatgfemError):
    """An iterative solver hit its iteration cap. The report is attached."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IndefiniteDetected(CatgfemError):
    """CG met a direction with non-positive curvature."""


class SpaceMismatch(CatgfemError):
    pass


class ZeroEstimator(CatgfemError):
    pass


class CorrectionNotSmallAtK1(CatgfemError):
    """The first coarse correction is not negligible, so levels are assembled inconsistently."""


class NoExactSolution(CatgfemError):
    pass
