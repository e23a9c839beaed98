"""Exception types raised by the toolkit.

Every failure mode has a named class so callers can catch precisely; all
inherit from ToolkitError.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


# --- data construction ---

class NonFiniteError(ToolkitError):
    """Input contains NaN or Inf."""


class ConstantRoiError(ToolkitError):
    """An ROI time series has zero variance; its correlations are undefined."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(f"ROI column {column} has zero variance")


class NotSquareError(ToolkitError):
    """Matrix expected to be square."""


class NotSymmetricError(ToolkitError):
    """Matrix expected to be symmetric within tolerance."""


class EmptyInputError(ToolkitError):
    """Operation requires a nonempty collection."""


class MixedAtlasError(ToolkitError):
    """Connectomes from different atlases where one atlas was required."""


class AtlasMismatchError(ToolkitError):
    """Connectome atlas differs from the one the state was fitted on."""


class AlreadyStandardizedError(ToolkitError):
    """Connectome has already been standardized."""


class LengthMismatchError(ToolkitError):
    """Vector lengths disagree."""


class InvalidConfigError(ToolkitError):
    """A configuration value is out of range or missing."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


# --- manifest ---

class ManifestParseError(ToolkitError):
    """Manifest file is malformed."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"manifest line {line}: {message}")


class DuplicateSubjectError(ToolkitError):
    def __init__(self, subject_id: str):
        self.subject_id = subject_id
        super().__init__(f"duplicate subject_id {subject_id!r}")


class MissingAtlasPathError(ToolkitError):
    def __init__(self, subject_id: str, atlas: str):
        self.subject_id = subject_id
        self.atlas = atlas
        super().__init__(f"subject {subject_id!r} has no path for atlas {atlas}")


# --- neural net / model ---

class ShapeMismatchError(ToolkitError):
    """Tensor shapes incompatible with the operation."""


class HeadAbsentError(ToolkitError):
    """Forward mode requested a head the model was not built with."""


class AtlasOrderError(ToolkitError):
    """Ensemble inputs are not in the model's atlas order."""


# --- training ---

class BadLabelError(ToolkitError):
    """Class label outside {0, 1}."""


class NoGradientError(ToolkitError):
    """Optimizer stepped before any backward pass populated gradients."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} has no gradient")


class EmptySplitError(ToolkitError):
    """Training or validation split is empty."""


# --- evaluation ---

class ClassTooSmallError(ToolkitError):
    """A class has fewer members than the number of folds."""


class EmptyResultError(ToolkitError):
    """A split would leave one side empty."""


class NoPositivesError(ToolkitError):
    """Recall undefined: no actual positives present."""


class OneClassOnlyError(ToolkitError):
    """AUC undefined: only one class present."""


class LeakageError(ToolkitError):
    """A test index reached a training-side computation."""
