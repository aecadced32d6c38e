"""Exception hierarchy shared by all qeot modules.

The CLI maps these onto exit codes: invalid-input errors exit 2, runtime
numeric failures exit 1.
"""


class QeotError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(QeotError):
    """Bad user input: config, data file, or capacity violations (exit 2)."""


class ShapeError(QeotError):
    """Tensor dimension mismatch; message names the offending shapes."""


class ContractError(QeotError):
    """An API precondition was violated (e.g. non-scalar backward root)."""


class DataError(InvalidInputError):
    """Malformed or out-of-range data (e.g. out-of-vocab token id)."""


class CapacityError(InvalidInputError):
    """A size limit was exceeded (e.g. more gold triples than queries)."""


class ConfigError(InvalidInputError):
    """Unparseable or inconsistent run configuration."""


class NumericError(QeotError):
    """A NaN/Inf surfaced where finite values are required (exit 1)."""
