"""
ShadowMamba Desk v1.0 · Error Types
One base class, one subclass per failure family, one exit code per family.
"""


class ShadowMambaError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 4


class ShapeError(ShadowMambaError, ValueError):
    """Tensor / order / mask dimensions do not agree."""

    exit_code = 4


class ConfigError(ShadowMambaError, ValueError):
    """Invalid configuration: kernel sizes, enum values, schema keys."""

    exit_code = 2


class UsageError(ShadowMambaError):
    """API misuse: non-scalar backward, BR block without classes, etc."""

    exit_code = 2


class DataError(ShadowMambaError):
    """Unreadable / empty inputs, malformed triplets, checkpoint mismatch."""

    exit_code = 3


class NumericalError(ShadowMambaError):
    """Non-finite values where finite ones are required (e.g. training loss)."""

    exit_code = 4


class StructureError(ShadowMambaError):
    """Parameter count outside the accepted band."""

    exit_code = 4


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def exit_code_for(exc):
    """Map any exception to the CLI exit code."""
    if isinstance(exc, ShadowMambaError):
        return exc.exit_code
    return EXIT_INTERNAL
