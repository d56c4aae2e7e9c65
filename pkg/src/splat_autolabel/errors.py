from typing import Optional


class SplatError(Exception):
    """
    Base class for all errors raised by splat-autolabel.

    The command-line interface reports these as `error: <message>` and exits
    with status 1.
    """


class InvalidPose(SplatError, ValueError):
    pass


class InvalidConfig(SplatError, ValueError):
    pass


class BehindCamera(SplatError, ValueError):
    """
    A point is not in front of the camera, so it has no pixel coordinates.
    """


class DegenerateConfiguration(SplatError, ValueError):
    """
    Point correspondences do not determine an alignment.
    """


class ShapeMismatch(SplatError, ValueError):
    pass


class CountMismatch(SplatError, ValueError):
    pass


class StaleTape(SplatError):
    """
    Parameters were updated after the forward pass that recorded the tape.
    """


class StaleRecord(SplatError):
    """
    The scene was mutated after the render that produced the compositing record.
    """


class TooSmall(SplatError, ValueError):
    pass


class EmptyPointCloud(SplatError, ValueError):
    pass


class EmptySequence(SplatError, ValueError):
    pass


class NoVisiblePrimitives(SplatError):
    def __init__(self, group: int) -> None:
        self.group = group
        super().__init__(f"group {group} has no primitives assigned to it")


class NoValidFrames(SplatError):
    pass


class TooFewPairs(SplatError, ValueError):
    pass


class InvalidSpec(SplatError, ValueError):
    pass


class UnsupportedCameraModel(SplatError, ValueError):
    pass


class MalformedLine(SplatError, ValueError):
    def __init__(self, path: str, line_number: int, reason: Optional[str] = None) -> None:
        self.path = path
        self.line_number = line_number
        msg = f"{path}:{line_number}: malformed line"
        if reason:
            msg = f"{msg} ({reason})"
        super().__init__(msg)


class IoFailure(SplatError, OSError):
    pass


class MalformedHeader(SplatError, ValueError):
    pass


class InvalidBox(SplatError, ValueError):
    pass
