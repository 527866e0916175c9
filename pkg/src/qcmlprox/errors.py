"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so new error conditions
should subclass one of the four roots below rather than raising bare
ValueError/RuntimeError.
"""


class QcmlproxError(Exception):
    """Base class for all package errors."""


class ConfigError(QcmlproxError):
    """Invalid configuration value or malformed config file."""


class SchemaError(QcmlproxError):
    """Shape, length, or column mismatch between declared and actual data."""


class DataError(QcmlproxError):
    """Malformed or unusable input data."""


class DegenerateDataError(DataError):
    """Data degenerate in a way that makes the requested quantity undefined."""


class NumericError(QcmlproxError):
    """Numerical failure: non-convergence, non-finite values, blow-up."""


class UsageError(QcmlproxError):
    """API called with arguments outside its documented domain."""


class NoOobCoverError(QcmlproxError):
    """A training point is in-bag for every tree, so no out-of-bag
    quantity exists for it. Callers decide the fallback."""

    def __init__(self, index: int):
        super().__init__(f"training point {index} is in-bag in every tree")
        self.index = index
