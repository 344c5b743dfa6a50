"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: format/I-O problems exit 2,
configuration and dimension mismatches exit 3, numeric failures exit 4.
"""

__all__ = [
    "ParameterError",
    "DimensionError",
    "ConfigError",
    "FormatError",
    "NumericError",
]


class ParameterError(ValueError):
    """A scalar or array argument is out of its admissible range."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with each other or with the operators."""


class ConfigError(ValueError):
    """A run configuration is incomplete or self-contradictory."""


class FormatError(Exception):
    """A file does not conform to the container format it claims."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or diverged."""
