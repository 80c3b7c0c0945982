"""Parameterized layers built on the autodiff primitives.

Activations are laid out ``[batch, seq, hidden]``; layers that take a
sequence also accept a single unbatched ``[seq, hidden]`` array. Padding
masks are boolean ``[batch, seq]`` arrays, true at real tokens.
"""

from __future__ import annotations

import math
import zlib
from typing import Iterator

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import default_dtype
from .errors import ConfigError, ShapeError


def parameter(shape: tuple[int, ...], kind: str) -> Tensor:
    """A zero-filled trainable leaf; values are set by :func:`initialize`."""
    t = Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)
    t.kind = kind
    return t


class Module:
    training: bool = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        """Trainable tensors in definition order; shared tensors appear once."""
        seen: set[int] = set()
        for name, t in self._walk(prefix):
            if id(t) not in seen:
                seen.add(id(t))
                yield name, t

    def _walk(self, prefix: str):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            full = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield full, val
            elif isinstance(val, Module):
                yield from val._walk(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item._walk(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def initialize(module: Module, seed: int, std: float = 0.02) -> None:
    """Fill every parameter from a generator keyed by (seed, parameter name).

    Keying by name means two models that share parameter names get identical
    values for those parameters regardless of what else they contain.
    """
    for name, p in module.named_parameters():
        if p.kind in ("weight", "embedding"):
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            p.data[...] = _truncated_normal(rng, p.shape, std)
        elif p.kind == "gamma":
            p.data[...] = 1.0
        else:
            p.data[...] = 0.0


class Dropout(Module):
    """Inverted dropout; active only in training mode with a generator set."""

    def __init__(self, rate: float):
        self.rate = rate
        self._rng: np.random.Generator | None = None

    def forward(self, x: Tensor) -> Tensor:
        if not self.training:
            return x
        return ops.dropout(x, self.rate, self._rng)


def set_dropout_rng(module: Module, rng: np.random.Generator | None) -> None:
    for m in module.modules():
        if isinstance(m, Dropout):
            m._rng = rng


class Linear(Module):
    def __init__(self, n_in: int, n_out: int):
        self.weight = parameter((n_in, n_out), "weight")
        self.bias = parameter((n_out,), "bias")

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return ops.reshape(self.forward(ops.reshape(x, (1, -1))), (-1,))
        return ops.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-12):
        self.gamma = parameter((width,), "gamma")
        self.beta = parameter((width,), "beta")
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Embeddings(Module):
    """Token + learned position + segment embeddings, then LayerNorm."""

    def __init__(self, vocab_size: int, max_positions: int, hidden: int,
                 dropout: float = 0.1, eps: float = 1e-12):
        self.token = parameter((vocab_size, hidden), "embedding")
        self.position = parameter((max_positions, hidden), "embedding")
        self.segment = parameter((2, hidden), "embedding")
        self.norm = LayerNorm(hidden, eps)
        self.drop = Dropout(dropout)

    def forward(self, token_ids, segment_ids) -> Tensor:
        token_ids = np.asarray(token_ids)
        segment_ids = np.asarray(segment_ids)
        if token_ids.shape != segment_ids.shape:
            raise ShapeError(f"token ids {token_ids.shape} and segment ids {segment_ids.shape} differ")
        seq = token_ids.shape[-1]
        if seq > self.position.shape[0]:
            raise ShapeError(f"sequence length {seq} exceeds {self.position.shape[0]} positions")
        x = ops.gather_rows(self.token, token_ids)
        x = x + ops.gather_rows(self.position, np.arange(seq))
        x = x + ops.gather_rows(self.segment, segment_ids)
        return self.drop(self.norm(x))


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return ops.reshape(x, (1, *x.shape)), True
    if x.ndim != 3:
        raise ShapeError(f"expected [seq, hidden] or [batch, seq, hidden], got {x.shape}")
    return x, False


def _batched_mask(mask, batch: int, seq: int) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.shape != (batch, seq):
        raise ShapeError(f"pad mask {mask.shape} does not match activations ({batch}, {seq})")
    return mask


class MultiHeadAttention(Module):
    def __init__(self, hidden: int, num_heads: int, dropout: float = 0.1):
        if num_heads <= 0 or hidden % num_heads:
            raise ConfigError(f"{num_heads} heads do not divide hidden size {hidden}")
        self.num_heads = num_heads
        self.head_dim = hidden // num_heads
        self.query = Linear(hidden, hidden)
        self.key = Linear(hidden, hidden)
        self.value = Linear(hidden, hidden)
        self.output = Linear(hidden, hidden)
        self.drop = Dropout(dropout)

    def weights(self, x: Tensor, pad_mask=None) -> tuple[Tensor, Tensor]:
        """Attention probabilities ``[B, heads, S, S]`` and values ``[B, heads, S, d]``."""
        b, s, h = x.shape
        split = (b, s, self.num_heads, self.head_dim)
        q = ops.transpose(ops.reshape(self.query(x), split), (0, 2, 1, 3))
        k = ops.transpose(ops.reshape(self.key(x), split), (0, 2, 3, 1))
        v = ops.transpose(ops.reshape(self.value(x), split), (0, 2, 1, 3))
        scores = ops.scale(ops.matmul(q, k), 1.0 / math.sqrt(self.head_dim))
        mask = _batched_mask(pad_mask, b, s)
        if mask is None:
            probs = ops.softmax(scores, axis=-1)
        else:
            probs = ops.masked_softmax(scores, mask[:, None, None, :], axis=-1)
        return probs, v

    def forward(self, x: Tensor, pad_mask=None) -> Tensor:
        x, squeeze = _batched(x)
        b, s, h = x.shape
        probs, v = self.weights(x, pad_mask)
        ctx = ops.matmul(self.drop(probs), v)
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, s, h))
        out = self.output(ctx)
        return ops.reshape(out, (s, h)) if squeeze else out


class FeedForward(Module):
    """Position-wise ``gelu(x W1 + b1) W2 + b2``."""

    def __init__(self, hidden: int, width: int):
        self.inner = Linear(hidden, width)
        self.outer = Linear(width, hidden)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(ops.gelu(self.inner(x)))


class LstmDirection(Module):
    """Weights of one LSTM scan direction.

    The four gate blocks are stored side by side in the order input, forget,
    candidate, output: ``w_ih`` is ``[n_in, 4n]``, ``w_hh`` is ``[n, 4n]``.
    """

    def __init__(self, n_in: int, n_hidden: int):
        self.n_hidden = n_hidden
        self.w_ih = parameter((n_in, 4 * n_hidden), "weight")
        self.w_hh = parameter((n_hidden, 4 * n_hidden), "weight")
        self.bias = parameter((4 * n_hidden,), "bias")

    def gates_step(self, z: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        n = self.n_hidden
        act = ops.sigmoid(z)
        i = ops.index(act, (Ellipsis, slice(0, n)))
        f = ops.index(act, (Ellipsis, slice(n, 2 * n)))
        o = ops.index(act, (Ellipsis, slice(3 * n, 4 * n)))
        g = ops.tanh(ops.index(z, (Ellipsis, slice(2 * n, 3 * n))))
        c = f * c_prev + i * g
        h = o * ops.tanh(c)
        return h, c


def lstm_cell_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
                   params: LstmDirection) -> tuple[Tensor, Tensor]:
    """One LSTM step. Inputs are ``[n_in]`` / ``[n]`` vectors or ``[B, ...]`` batches."""
    if x_t.ndim == 1:
        h, c = lstm_cell_step(ops.reshape(x_t, (1, -1)), ops.reshape(h_prev, (1, -1)),
                              ops.reshape(c_prev, (1, -1)), params)
        return ops.reshape(h, (-1,)), ops.reshape(c, (-1,))
    z = ops.matmul(x_t, params.w_ih) + ops.matmul(h_prev, params.w_hh) + params.bias
    return params.gates_step(z, c_prev)


class BLSTM(Module):
    """Bidirectional LSTM with an optional ``2n -> n_in`` output projection.

    ``projection=None`` picks the rule automatically: a projection exists
    exactly when the concatenated width ``2n`` differs from ``n_in``.
    """

    def __init__(self, n_in: int, n_hidden: int, projection: bool | None = None,
                 allow_raw: bool = False):
        if projection is None:
            projection = 2 * n_hidden != n_in
        if not projection and 2 * n_hidden != n_in and not allow_raw:
            raise ConfigError(
                f"BLSTM output width {2 * n_hidden} differs from input width {n_in} "
                "and no projection is configured"
            )
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.forward_dir = LstmDirection(n_in, n_hidden)
        self.backward_dir = LstmDirection(n_in, n_hidden)
        self.proj = Linear(2 * n_hidden, n_in) if projection else None

    @property
    def out_width(self) -> int:
        return self.n_in if self.proj is not None else 2 * self.n_hidden

    def _scan(self, xp: Tensor, direction: LstmDirection, mask: np.ndarray | None,
              reverse: bool) -> list[Tensor]:
        b, s, _ = xp.shape
        dtype = xp.dtype
        h = Tensor(np.zeros((b, direction.n_hidden), dtype=dtype))
        c = Tensor(np.zeros((b, direction.n_hidden), dtype=dtype))
        outs: list[Tensor] = [None] * s  # type: ignore[list-item]
        steps = range(s - 1, -1, -1) if reverse else range(s)
        for t in steps:
            z = ops.index(xp, (slice(None), t)) + ops.matmul(h, direction.w_hh)
            h_new, c_new = direction.gates_step(z, c)
            if mask is not None and not mask[:, t].all():
                # padded slots carry the previous state through unchanged
                m = mask[:, t, None]
                h_new = ops.blend(m, h_new, h)
                c_new = ops.blend(m, c_new, c)
            h, c = h_new, c_new
            outs[t] = h
        return outs

    def scan(self, x: Tensor, pad_mask=None) -> Tensor:
        """Concatenated ``[h_fwd; h_bwd]`` states, width ``2n``."""
        x, squeeze = _batched(x)
        b, s, _ = x.shape
        mask = _batched_mask(pad_mask, b, s)
        if mask is not None and not mask.all():
            x = x * mask[:, :, None].astype(x.dtype)
        else:
            mask = None
        xf = ops.matmul(x, self.forward_dir.w_ih) + self.forward_dir.bias
        xb = ops.matmul(x, self.backward_dir.w_ih) + self.backward_dir.bias
        fwd = ops.stack(self._scan(xf, self.forward_dir, mask, reverse=False), axis=1)
        bwd = ops.stack(self._scan(xb, self.backward_dir, mask, reverse=True), axis=1)
        out = ops.concat([fwd, bwd], axis=-1)
        if mask is not None:
            out = out * mask[:, :, None].astype(out.dtype)
        return ops.reshape(out, out.shape[1:]) if squeeze else out

    def forward(self, x: Tensor, pad_mask=None) -> Tensor:
        out = self.scan(x, pad_mask)
        return self.proj(out) if self.proj is not None else out


def blstm_forward(x: Tensor, params: BLSTM, pad_mask=None) -> Tensor:
    return params(x, pad_mask)
