"""Exception hierarchy shared by the map, model, solver and benchmark layers."""

from __future__ import annotations


class PosePredictionError(Exception):
    """Base class for every error raised by this package."""


# ----- ESDF map -----
class OutOfBoundsError(PosePredictionError):
    pass


class DegenerateGradientError(PosePredictionError):
    pass


class InvalidSceneError(PosePredictionError):
    pass


class InvalidGridError(PosePredictionError):
    pass


class ExcessiveGridError(PosePredictionError):
    pass


class MapCacheError(PosePredictionError):
    pass


# ----- Robot model -----
class ParseError(PosePredictionError):
    pass


class CycleInKinematicTreeError(ParseError):
    pass


class MissingParentError(ParseError):
    pass


class UnknownJointError(PosePredictionError):
    pass


class JointOutOfLimitsError(PosePredictionError):
    pass


# ----- Settling / stability -----
class DegenerateAxisError(PosePredictionError):
    pass


class CollinearContactsError(PosePredictionError):
    """Projected contacts span no area; `extreme_pair` holds the farthest pair."""

    def __init__(self, message: str, extreme_pair: tuple[int, int]) -> None:
        super().__init__(message)
        self.extreme_pair = extreme_pair


class NumericalDomainError(PosePredictionError):
    pass


class NoConvergenceError(PosePredictionError):
    """An iteration cap was hit before the pose became valid."""


class AllCandidatesExcludedError(PosePredictionError):
    pass


class NoFeasiblePoseError(PosePredictionError):
    pass


# ----- Benchmark -----
class GimbalAmbiguityError(PosePredictionError):
    pass


class ScenarioError(PosePredictionError):
    pass
