"""Exception hierarchy shared across the package."""


class TransBlstmError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TransBlstmError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(TransBlstmError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(TransBlstmError, ValueError):
    """A model or run configuration is inconsistent."""


class VocabError(TransBlstmError, IndexError):
    """A token or segment id falls outside its table."""


class NonFiniteError(TransBlstmError, FloatingPointError):
    """A NaN or Inf appeared in a forward value or loss."""


class CheckpointError(TransBlstmError):
    """A checkpoint file is unreadable, corrupt or incompatible."""
