"""Exception types raised across the package.

Everything derives from PcrestoreError so callers can catch the package's
failures with one except clause. The CLI maps these to per-file error
cells in its report instead of aborting the whole batch.
"""


class PcrestoreError(Exception):
    """Base class for all errors raised by this package."""


class InvalidPointCloud(PcrestoreError, ValueError):
    """Input array is not a finite (N, 3) float point set."""


class EmptyCloud(InvalidPointCloud):
    """Operation requires at least one point."""


class TooFewPoints(PcrestoreError, ValueError):
    """Operation needs more points than the input provides (e.g. kNN with k >= N)."""


class DegenerateCloud(PcrestoreError, ValueError):
    """All points coincide, so a scale cannot be defined."""


class InvalidSpec(PcrestoreError, ValueError):
    """A field spec document is malformed; message names the offending node path."""


class FieldFileError(PcrestoreError, ValueError):
    """Base class for MLP weight file problems; message names a byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class BadMagic(FieldFileError):
    """Weight file does not start with the expected magic bytes."""


class TruncatedFile(FieldFileError):
    """Weight file ended before a declared block was complete."""


class DimensionMismatch(FieldFileError):
    """Weight file header dimensions are inconsistent."""


class FlatGradient(PcrestoreError, ValueError):
    """Field gradient vanished where a direction was required."""


class EmptySurface(PcrestoreError, ValueError):
    """Marching cubes found no iso-surface crossing inside the grid bounds."""


class EmptyMesh(PcrestoreError, ValueError):
    """Mesh has no faces or zero total area, so it cannot be sampled."""


class CloudAnnihilated(PcrestoreError, ValueError):
    """A corruption removed every point of the cloud."""
