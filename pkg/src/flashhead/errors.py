"""Exception types shared across the package."""


class FlashHeadError(Exception):
    """Base class for all library errors."""


class BadMagic(FlashHeadError):
    """File does not start with the expected magic bytes."""


class DimMismatch(FlashHeadError):
    """Tensor rank or dimension disagrees with what the caller expects."""


class TruncatedPayload(FlashHeadError):
    """Declared element count disagrees with the actual file size."""


class NonFiniteValue(FlashHeadError):
    """A loaded tensor contains NaN or Inf; carries the offending row."""

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"non-finite value in row {row}")


class IoFailure(FlashHeadError):
    """Underlying file operation failed."""


class ZeroNormRow(FlashHeadError):
    """Row normalization hit an all-zero row; carries the row index."""

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"row {row} has zero L2 norm")


class InvalidOptions(FlashHeadError):
    """Clustering options are inconsistent (e.g. c does not divide v)."""


class InvalidConfig(FlashHeadError):
    """Decode / run configuration is inconsistent."""


class InvalidGroup(FlashHeadError):
    """Quantization group size does not divide the row length."""


class TooManySubsets(FlashHeadError):
    """Exact marginal enumeration would exceed the subset budget."""


class ZeroProbability(FlashHeadError):
    """Log-likelihood queried a zero entry of an unclipped estimate."""


class AllZero(FlashHeadError):
    """Zero-clipping needs at least one non-zero entry."""
