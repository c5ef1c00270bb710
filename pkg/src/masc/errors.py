"""Exception hierarchy shared by every pipeline stage."""


class MascError(Exception):
    """Base class for all pipeline errors."""


# geometry
class FrameChainMismatch(MascError, ValueError):
    pass


class SingularMatrix(MascError, ValueError):
    def __init__(self, msg, frame=None):
        super().__init__(msg if frame is None else f"{msg} (frame {frame})")
        self.frame = frame


class PointAtInfinity(MascError, ArithmeticError):
    pass


# detections
class ParseError(MascError, ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class RangeError(ParseError):
    pass


# raster
class BadWindow(MascError, ValueError):
    pass


class ChannelMismatch(MascError, ValueError):
    pass


class DegenerateImage(MascError, ValueError):
    pass


class EmptyMask(MascError, ValueError):
    pass


class MarkerOffMask(MascError, ValueError):
    pass


# pipelines
class GridMismatch(MascError, ValueError):
    pass


class ProviderError(MascError, RuntimeError):
    pass


class MissingImage(MascError, FileNotFoundError):
    pass


class ExtentTooLarge(MascError, ValueError):
    pass


# layout
class EmptyInput(MascError, ValueError):
    pass


class NoRangesFound(MascError, ValueError):
    pass


class NoRowsFound(MascError, ValueError):
    pass


# evaluation
class DegenerateGroundTruth(MascError, ValueError):
    pass


class InsufficientOverlap(MascError, ValueError):
    pass


# synth
class SpecInvalid(MascError, ValueError):
    pass
