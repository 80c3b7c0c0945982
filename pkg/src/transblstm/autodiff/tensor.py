"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` wraps a C-contiguous numpy array (row-major storage, strides
derived from the shape). Operations executed while a :class:`Tape` is active
and that touch a ``requires_grad`` tensor are appended to the tape together
with a backward rule. Because nodes are appended in execution order the tape
is topologically sorted by construction, so :func:`backward` is a single
reverse sweep.

Outside of any tape, operations run without recording (inference mode).
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_DTYPES = {"float32": np.float32, "float64": np.float64}


class _State(threading.local):
    def __init__(self) -> None:
        self.dtype = np.dtype(np.float32)
        self.tapes: list[Tape] = []


_state = _State()
_check_finite = os.environ.get("TRANSBLSTM_DEBUG", "") not in ("", "0")


def default_dtype() -> np.dtype:
    return _state.dtype


def set_default_dtype(dtype) -> None:
    _state.dtype = np.dtype(_DTYPES.get(dtype, dtype))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the scalar type used for new tensors."""
    old = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def set_debug(enabled: bool) -> None:
    """Turn non-finite detection on forward values on or off (process-wide)."""
    global _check_finite
    _check_finite = bool(enabled)


def debug_enabled() -> bool:
    return _check_finite


class Tensor:
    """An n-dimensional array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "kind", "_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state.dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.kind: str | None = None
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._leaf

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the actual rules live in ``ops``.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


@dataclass
class Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    op: str


@dataclass
class Tape:
    """Ordered record of differentiable operations for one step.

    Use as a context manager; operations inside the ``with`` block are
    recorded. A tape is single-threaded and meant to be consumed once.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    return _state.tapes[-1] if _state.tapes else None


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Suspend recording on the current thread."""
    saved = _state.tapes
    _state.tapes = []
    try:
        yield
    finally:
        _state.tapes = saved


def check_finite(arr: np.ndarray, op: str) -> None:
    if _check_finite and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by {op!r}")


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap ``data`` and, when recording, attach it to the active tape."""
    check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out.name = None
    out.kind = None
    out._leaf = True
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        tape.nodes.append(Node(tuple(inputs), out, backward_fn, op))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss`` on ``tape``.

    Gradients add into existing ``.grad`` buffers, so calling this for two
    losses accumulates their sum.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    if not any(node.output is loss for node in reversed(tape.nodes)):
        raise ContractError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise ContractError(
                    f"backward of {node.op!r} returned grad {ig.shape} for input {inp.shape}"
                )
            if inp.is_leaf:
                inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
            else:
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig
