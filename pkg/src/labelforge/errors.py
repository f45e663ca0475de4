"""Exception types shared across the package.

Engine-level errors live here so that the server can map each one to an
HTTP status without importing every module. Names match the error
conditions documented on the individual operations.
"""


class LabelForgeError(Exception):
    """Base class for all errors raised by this package."""


# --- volume / NIfTI ---------------------------------------------------------

class BadMagic(LabelForgeError):
    """Byte stream is not a NIfTI-1 file."""


class UnsupportedDatatype(LabelForgeError):
    """NIfTI datatype code outside the supported set {2, 4, 8, 16}."""


class TruncatedFile(LabelForgeError):
    """File ends before the declared voxel payload."""


class DimMismatch(LabelForgeError):
    """Two grids that must share dimensions do not."""


class DegenerateOutput(LabelForgeError):
    """Resampling would collapse a non-trivial axis to zero voxels."""


# --- guidance ---------------------------------------------------------------

class ClickOutOfBounds(LabelForgeError):
    """Click coordinate lies outside the volume grid."""


# --- likelihood -------------------------------------------------------------

class MissingClass(LabelForgeError):
    """Scribble mask lacks foreground or background strokes."""


class BadBins(LabelForgeError):
    """Histogram bin count below 2."""


# --- graph cut --------------------------------------------------------------

class BadProbability(LabelForgeError):
    """Probability volume contains values outside [0, 1]."""


# --- model ------------------------------------------------------------------

class EmptyDataset(LabelForgeError):
    """Training requested with no samples."""


# --- active learning --------------------------------------------------------

class UnknownImage(LabelForgeError):
    """Image id not present in the datastore."""


class EmptyPool(LabelForgeError):
    """No unlabeled images left to rank."""


# --- planner ----------------------------------------------------------------

class EmptyDatastore(LabelForgeError):
    """Dataset statistics requested with no labeled images."""


class InsufficientBudget(LabelForgeError):
    """Memory budget cannot fit even the minimum 16^3 region."""


# --- datastore --------------------------------------------------------------

class CorruptIndex(LabelForgeError):
    """Datastore index failed to parse or references missing files."""


class BadImage(LabelForgeError):
    """Uploaded bytes do not parse as a supported volume."""


# --- server -----------------------------------------------------------------

class UnknownModel(LabelForgeError):
    """Model name not present in the app manifest."""


class UnknownSession(LabelForgeError):
    """Session id unknown or expired."""


class UnknownStrategy(LabelForgeError):
    """Active-learning strategy not enabled for this app."""


class MissingScribbles(LabelForgeError):
    """Scribbles model invoked without a scribbles volume."""


class MissingClicks(LabelForgeError):
    """Click-driven model invoked without a positive click."""


class BadParams(LabelForgeError):
    """Request parameters failed to parse or validate."""


class ModelUntrained(LabelForgeError):
    """Model has no checkpoint yet."""


class JobAlreadyRunning(LabelForgeError):
    """A training job is already pending or running."""


class NoActiveJob(LabelForgeError):
    """Cancellation requested with no active training job."""


class NoLabeledData(LabelForgeError):
    """Training requested with an empty labeled partition."""
