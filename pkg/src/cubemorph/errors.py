"""Exception types shared across the package.

The command line maps these onto exit codes: configuration problems exit
with 2, numeric aborts with 3, file format / I/O problems with 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or missing required input."""


class ContractError(ValueError):
    """An operation was called outside its contract (bad shapes, empty
    batches, unknown names)."""


class FileFormatError(IOError):
    """On-disk data is malformed; message carries the byte offset where
    parsing failed when that is known."""


class NumericAbort(RuntimeError):
    """Training aborted on a non-finite loss or gradient."""
