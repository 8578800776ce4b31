"""Exception hierarchy shared across the package.

Every error raised deliberately by this package derives from
:class:`MoeperfError`, so callers (and the CLI) can distinguish usage errors
from genuine bugs with a single ``except`` clause.
"""


class MoeperfError(Exception):
    """Base class for all errors raised by moeperf."""


class NonFiniteInput(MoeperfError):
    """An input tensor contained NaN or infinity."""


class ShapeMismatch(MoeperfError):
    """Operand shapes are inconsistent with each other or with the config."""


class InvalidK(MoeperfError):
    """Requested top-k is outside ``1 <= k <= num_experts``."""


class IndexOutOfRange(MoeperfError):
    """An expert or row index falls outside its valid range."""


class InvalidBlockM(MoeperfError):
    """Row-tile size for the block schedule must be a positive integer."""


class ScheduleMismatch(MoeperfError):
    """A block schedule does not cover the expert offsets it was paired with."""


class MissingPeakFlops(MoeperfError):
    """Hardware profile requires a peak-FLOPs figure that was not supplied."""


class InvalidSpec(MoeperfError):
    """A skew or run specification is internally inconsistent."""


class AllZero(MoeperfError):
    """A histogram with zero total tokens has no defined imbalance metrics."""


class DegenerateStage(MoeperfError):
    """A stage with zero FLOPs and zero bytes has no roofline placement."""
