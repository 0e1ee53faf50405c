"""Exception types shared across the library.

Operational non-detections (NoPepperFound / NoPeduncleFound) are distinct
from data or usage errors so callers such as a robot executive can react
differently to "nothing there" versus "something is broken".
"""


class PeduncleError(Exception):
    """Base class for every error raised by this package."""


class EmptyInput(PeduncleError):
    """An operation received an empty cloud, subset, cluster or batch."""


class InsufficientPoints(PeduncleError):
    """A query asked for more neighbors than the cloud contains."""


class InvalidInput(PeduncleError):
    """Non-finite or otherwise malformed numeric input."""


class DegeneratePair(PeduncleError):
    """Point pair whose separation is parallel to the source normal."""


class EmptyHistogram(PeduncleError):
    """Every angle pair of a histogram neighborhood degenerated."""


class InvalidDescriptor(PeduncleError):
    """A flagged-invalid geometric descriptor was used where a valid one is required."""


class DegenerateTraining(PeduncleError):
    """Training data does not contain enough samples of every class."""


class ShapeError(PeduncleError):
    """Tensor shapes are inconsistent with the layer specification."""


class InputTooSmall(PeduncleError):
    """Image smaller than the network input patch."""


class EmptyProjection(PeduncleError):
    """No scored pixel carried a valid depth value."""


class RoiOutOfImage(PeduncleError):
    """Region of interest clipped away entirely by the image bounds."""


class NoPepperFound(PeduncleError):
    """No point cleared the pepper posterior threshold (operational, not fatal)."""


class NoPeduncleFound(PeduncleError):
    """No cluster survived the filtering stage (operational, not fatal)."""


class EmptyEvaluation(PeduncleError):
    """Evaluation requested on data without any labeled points."""


class FormatError(PeduncleError):
    """A file did not match its declared on-disk format."""
