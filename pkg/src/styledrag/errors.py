"""Exception hierarchy shared across the package."""


class StyleDragError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(StyleDragError, ValueError):
    """An argument violates an operation's precondition."""


class ShapeError(StyleDragError, ValueError):
    """Tensor/image shapes are incompatible."""


class ConfigurationError(StyleDragError, ValueError):
    """A configuration references something that does not exist."""


class DecodeError(StyleDragError, ValueError):
    """An image file could not be decoded."""


class DatasetError(StyleDragError, ValueError):
    """A training dataset is malformed or misaligned."""


class NotFoundError(StyleDragError, LookupError):
    """A requested object (checkpoint, job, file) does not exist."""


class SegmentationError(StyleDragError, RuntimeError):
    """Subject segmentation produced an empty foreground."""


class PlacementError(StyleDragError, ValueError):
    """A placement puts the subject entirely outside the canvas."""


class TrainingDivergenceError(StyleDragError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class InvariantError(StyleDragError, RuntimeError):
    """An internal invariant was violated (e.g. a frozen tensor changed)."""


class IncompleteReviewError(StyleDragError, RuntimeError):
    """Human filtering requested while verdicts are still pending."""

    def __init__(self, pending_ids):
        self.pending_ids = list(pending_ids)
        super().__init__(f"{len(self.pending_ids)} candidates still pending review: "
                         f"{', '.join(map(str, self.pending_ids))}")


class ManifestValidationError(StyleDragError, ValueError):
    """A dataset manifest references missing files or unresolved ids."""

    def __init__(self, offenders):
        self.offenders = list(offenders)
        super().__init__("manifest validation failed: " + "; ".join(self.offenders))


class CorruptionError(StyleDragError, RuntimeError):
    """Stored artifacts do not match their recorded content hashes."""

    def __init__(self, files):
        self.files = list(files)
        super().__init__("artifact hash mismatch: " + ", ".join(self.files))
