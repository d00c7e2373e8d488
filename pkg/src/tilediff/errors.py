"""Exception types shared by all modules."""


class TileDiffError(Exception):
    """Base class for package errors."""


class DomainError(TileDiffError, ValueError):
    """Input outside the mathematical domain (non-finite point, empty field, ...)."""


class AdmissibilityError(TileDiffError, ValueError):
    """Stretch factor incompatible with the tiling."""


class UsageError(TileDiffError, TypeError):
    """Objects combined in an unsupported way (wrong tiling kind, spec mismatch)."""


class NumericalError(TileDiffError, RuntimeError):
    """A numerical procedure failed to reach its accuracy target."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class VerificationError(TileDiffError, AssertionError):
    """A verification check did not hold."""
