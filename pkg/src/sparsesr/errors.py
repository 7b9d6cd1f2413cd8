"""Exception taxonomy shared by every module.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError -> 1, DataError -> 2, NumericsError -> 3.
"""


class SparseSRError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(SparseSRError):
    """Operands have incompatible ranks, extents, or dtypes."""


class NumericsError(SparseSRError):
    """Non-finite values, domain violations, or diverging iterations."""


class ConfigError(SparseSRError):
    """Unknown, ill-typed, or out-of-range configuration values."""


class DataError(SparseSRError):
    """Unreadable, unwritable, or malformed files and datasets."""
