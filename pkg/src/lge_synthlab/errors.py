"""Exception hierarchy.

Every error raised by the library derives from :class:`SynthLabError`.
Data problems (bad files, violated invariants of inputs) derive from
:class:`DataError`; the CLI maps those to exit code 3.
"""


class SynthLabError(Exception):
    """Base class for all library errors."""


class DataError(SynthLabError, ValueError):
    """Input data is malformed or violates a documented precondition."""


# --- file formats -----------------------------------------------------------

class MalformedHeader(DataError):
    def __init__(self, message, offset=0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedDtype(DataError):
    def __init__(self, message, offset=0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TruncatedPayload(DataError):
    def __init__(self, expected, actual, offset=0):
        super().__init__(
            f"payload truncated: expected {expected} bytes, got {actual} "
            f"(byte offset {offset})")
        self.expected = expected
        self.actual = actual
        self.offset = offset


class MalformedFeatureFile(DataError):
    pass


class MalformedTensorFile(DataError):
    pass


class IoFailure(SynthLabError, OSError):
    pass


# --- volumes ----------------------------------------------------------------

class DimsMismatch(DataError):
    pass


class ConstantVolume(DataError):
    pass


class OverlappingMasks(DataError):
    pass


class VolumeTooSmall(DataError):
    pass


# --- clustering -------------------------------------------------------------

class TooFewDistinctValues(DataError):
    pass


class DegenerateClusters(DataError):
    pass


class SingleCluster(DataError):
    pass


class CoincidentCentroids(DataError):
    pass


# --- metrics ----------------------------------------------------------------

class ZeroMse(DataError):
    """Identical inputs: PSNR is infinite and reported as this condition."""


class DimensionMismatch(DataError):
    pass


class NonFiniteEigenvalue(DataError):
    pass


class TooFewSamples(DataError):
    pass


# --- diffusion / losses -----------------------------------------------------

class ShapeMismatch(DataError):
    pass


class StepOutOfRange(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class AbsentClass(DataError):
    def __init__(self, cls):
        super().__init__(f"class {cls} has no voxels")
        self.cls = cls


class BoundaryPoint(DataError):
    pass


# --- augmentation / statistics ---------------------------------------------

class InvalidRange(DataError):
    pass


class UnnormalizedInput(DataError):
    pass


class AllZeroDifferences(DataError):
    pass
