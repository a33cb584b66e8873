"""Exception hierarchy shared by all impedlab modules."""


class ImpedlabError(Exception):
    """Base class for every error raised by the package."""


class ArgumentOutOfRange(ImpedlabError, ValueError):
    pass


class CoincidentPoints(ImpedlabError, ValueError):
    pass


# geometry
class NonPositiveRadius(ImpedlabError, ValueError):
    pass


class DiameterExceeded(ImpedlabError, ValueError):
    pass


class ResolutionTooCoarse(ImpedlabError, ValueError):
    pass


class PatchTouchesDirichlet(ImpedlabError, ValueError):
    pass


class EmptyPatch(ImpedlabError, ValueError):
    pass


# scatter
class SingularSystem(ImpedlabError, RuntimeError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class TruncationInsufficient(ImpedlabError, RuntimeError):
    pass


class PointInsideObstacle(ImpedlabError, ValueError):
    pass


class GridMismatch(ImpedlabError, ValueError):
    pass


# inverse
class RadiusInsideObstacle(ImpedlabError, ValueError):
    pass


class IllConditionedFit(ImpedlabError, RuntimeError):
    def __init__(self, message, residual_curve=None):
        super().__init__(message)
        self.residual_curve = residual_curve


class AllMasked(ImpedlabError, RuntimeError):
    pass


# quantlab
class BallTouchesObstacle(ImpedlabError, ValueError):
    pass


class DegenerateMasses(ImpedlabError, RuntimeError):
    pass


class InsufficientData(ImpedlabError, ValueError):
    pass


# cli
class ConfigInvalid(ImpedlabError, ValueError):
    pass


class StageFailed(ImpedlabError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
