"""Exception types raised across the package."""


class GeometryError(ValueError):
    """Base class for every data error raised by depthmotion."""


class AngleAtPi(GeometryError):
    pass


class BehindCamera(GeometryError):
    pass


class NonPositiveDepth(GeometryError):
    pass


class EmptyMask(GeometryError):
    pass


class EmptyMatchSet(GeometryError):
    pass


class DegenerateTranslation(GeometryError):
    pass


class ZeroSynthMean(GeometryError):
    pass


class OverlapMismatch(GeometryError):
    pass


class DegenerateConfiguration(GeometryError):
    pass


class LengthMismatch(GeometryError):
    pass


class ProjectionSingular(GeometryError):
    pass


class GridTooSmall(GeometryError):
    pass


class NonFiniteEvaluation(GeometryError):
    pass


class DivergenceDetected(GeometryError):
    pass


class NoIntersection(GeometryError):
    pass


class InsufficientVisibility(GeometryError):
    pass


class MalformedLine(GeometryError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
