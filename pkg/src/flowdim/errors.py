"""Exception hierarchy shared by all flowdim modules."""


class FlowdimError(Exception):
    """Base class for every error raised deliberately by flowdim."""


class WindowExceeded(FlowdimError):
    """An orbit or a convolution support left the finite window that was sampled."""


class ExtrapolationError(FlowdimError):
    """A field was evaluated outside the region covered by its sample grid."""


class InvalidWindow(FlowdimError):
    """An averaging window is empty, reversed or has non-positive length."""


class InvalidPartition(FlowdimError):
    """Partition-of-unity data is negative or otherwise malformed."""


class MarginExhausted(FlowdimError):
    """A box was stretched by more than half of its exit margin."""


class NotFree(FlowdimError):
    """The flow has (near-)periodic orbits on the region of interest."""


class ResolutionError(FlowdimError):
    """The sample grid is too coarse for the requested construction."""


class ParameterError(FlowdimError):
    """Parameters are outside the range where a construction is valid."""


class BoxError(FlowdimError):
    """A box is missing, unverified, or lacks its exit-time maps."""


class DefectBudgetExceeded(FlowdimError):
    """A witness is not accurate enough for the construction it is fed to."""


class NotTransversal(FlowdimError):
    """A region returns to itself too quickly to be used as a transversal."""


class UsageError(FlowdimError):
    """Bad command-line usage or a malformed scenario file."""
