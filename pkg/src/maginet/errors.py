"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: usage problems exit 1,
``InputError``/``ShapeError`` exit 2, ``NumericError`` exits 3.
"""


class MagiNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MagiNetError):
    """Tensor or matrix dimensions do not fit the requested operation."""


class ContractError(MagiNetError):
    """An API precondition was violated by the caller."""


class NumericError(MagiNetError):
    """A numeric computation produced NaN/inf or failed to converge."""


class InputError(MagiNetError):
    """External input (file, flag value, config) is malformed."""


class EmptyMaskError(MagiNetError):
    """A loss or metric was requested over an empty selection mask."""
