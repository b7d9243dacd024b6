"""Exception taxonomy shared across the workbench.

Every error carries a stable machine-readable ``code`` so the CLI and the
HTTP service can emit structured diagnostics without string matching.
"""

from __future__ import annotations


class AplError(Exception):
    """Base class; ``code`` is stable across releases."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class FormatError(AplError):
    """File is not a NIfTI-1 volume (bad magic / header)."""

    code = "format_error"


class UnsupportedError(AplError):
    """Valid file, but a layout or datatype outside the supported set."""

    code = "unsupported"


class CorruptFileError(AplError):
    """Header promises more payload than the file contains."""

    code = "corrupt_file"


class WriteError(AplError):
    code = "write_error"


class BoundsError(AplError):
    """Index outside the volume."""

    code = "bounds_error"


class GeometryError(AplError):
    """Operands disagree on grid dimensions."""

    code = "geometry_mismatch"


class EmptyMaskError(AplError):
    code = "empty_mask"


class AmbiguousLabelsError(AplError):
    code = "ambiguous_labels"


class SegmentationFailedError(AplError):
    code = "segmentation_failed"


class MalformedRleError(AplError):
    code = "malformed_rle"


class UndefinedScoreError(AplError):
    """No lung voxels on any sampled slice; ratios are undefined."""

    code = "undefined_score"


class PairingError(AplError):
    """Reports being compared were not produced from the same plan."""

    code = "pairing_error"


class ParameterError(AplError):
    code = "parameter_error"


class DegenerateVarianceError(AplError):
    """All paired differences identical; t statistic undefined.

    Carries the mean difference so callers can still report the effect.
    """

    code = "degenerate_variance"

    def __init__(self, message: str, mean_difference: float):
        super().__init__(message)
        self.mean_difference = mean_difference


class UndefinedCorrelationError(AplError):
    """At least one vector is constant; r is undefined."""

    code = "undefined_correlation"


class DomainError(AplError):
    code = "domain_error"


class NotFoundError(AplError):
    code = "not_found"


class ConflictError(AplError):
    """Write rejected by session state (e.g. already finalized)."""

    code = "conflict"
