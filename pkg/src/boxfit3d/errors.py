"""Exception types raised across the package."""


class BoxFitError(Exception):
    """Base class for all package errors."""


class DepthTooSmall(BoxFitError):
    """A point to be projected lies at or behind the camera plane."""


class DegenerateOrientation(BoxFitError):
    """The (sin, cos) orientation targets are both close to zero."""


class NonpositiveDistance(BoxFitError):
    """The regressed object distance is not positive."""


class RankDeficient(BoxFitError):
    """The residual Jacobian does not have full column rank."""


class NotConverged(BoxFitError):
    """An operation requires a converged fit but got an unconverged one."""


class ZeroIntersection(BoxFitError):
    """Two boxes do not overlap, so the IoU gradient is identically zero."""


class EmptyDetections(BoxFitError):
    """A loss over detections was requested with no detections."""


class MalformedLine(BoxFitError):
    """A line in a KITTI-style text file could not be parsed."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MissingP2(BoxFitError):
    """A calibration file lacks the P2 projection matrix."""


class RejectionOverflow(BoxFitError):
    """The scene generator failed to place a valid object."""
