from . import ops
from .gradcheck import GradCheckResult, gradcheck, numerical_grad, relative_error
from .tensor import (
    Node,
    Tape,
    Tensor,
    backward,
    debug_enabled,
    default_dtype,
    no_record,
    precision,
    set_debug,
    set_default_dtype,
)

__all__ = [
    "GradCheckResult",
    "Node",
    "Tape",
    "Tensor",
    "backward",
    "debug_enabled",
    "default_dtype",
    "gradcheck",
    "no_record",
    "numerical_grad",
    "ops",
    "precision",
    "relative_error",
    "set_debug",
    "set_default_dtype",
]
