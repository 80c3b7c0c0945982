"""Differentiable primitives.

Every function takes :class:`Tensor` operands (plain arrays and scalars are
wrapped as constants) and returns a new tensor. Each one registers its own
backward rule through :func:`make_result`.

Broadcasting follows trailing-axis alignment: shapes are compared from the
last axis backwards, a missing leading axis counts as size 1, and only size-1
axes expand. Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from ..errors import ContractError, ShapeError, VocabError
from .tensor import Tensor, make_result

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a} and {b}") from None


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing a broadcast."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def back(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def back(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_result(ad * bd, (a, b), back, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,), "scale")


def blend(mask, a: Tensor, b: Tensor) -> Tensor:
    """``mask * a + (1 - mask) * b`` for a constant 0/1 mask."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=a.dtype)
    broadcast_shape(broadcast_shape(a.shape, b.shape), m.shape)
    inv = 1 - m

    def back(g):
        return unbroadcast(g * m, a.shape), unbroadcast(g * inv, b.shape)

    return make_result(m * a.data + inv * b.data, (a, b), back, "blend")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batching over the rest."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), back, "matmul")


# -- pointwise nonlinearities -----------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    return make_result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
    return make_result((d * cdf).astype(d.dtype, copy=False), (x,),
                       lambda g: (g * (cdf + d * pdf),), "gelu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    d = x.data
    if np.any(d <= 0):
        raise ContractError("log of a non-positive value")
    return make_result(np.log(d), (x,), lambda g: (g / d,), "log")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Multiply by a scaled Bernoulli keep-mask; identity when ``rng`` is None."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- reductions and shape ------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return make_result(y, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,),
                       lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing; the result is a copy."""
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[key] = g
        return (full,)

    return make_result(np.array(x.data[key]), (x,), back, "index")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and p != q for i, (p, q) in enumerate(zip(ref, t.shape))
        ):
            raise ShapeError(f"cannot concatenate {ref} and {t.shape} along axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"cannot stack {ref} with {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return make_result(out, tensors, back, "stack")


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` for an integer array of any shape.

    The backward rule scatter-adds, so repeated ids accumulate.
    """
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError(f"row ids must be integers, got dtype {ids.dtype}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)].reshape(-1)[0]
        raise VocabError(f"row id {int(bad)} out of range for table with {n} rows")

    def back(g):
        full = np.zeros(table.shape, dtype=table.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return make_result(table.data[ids], (table,), back, "gather_rows")


embedding = gather_rows


# -- normalisation -------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), back, "softmax")


def masked_softmax(x: Tensor, keep, axis: int = -1) -> Tensor:
    """Softmax over entries where ``keep`` is true; the rest get weight 0.

    ``keep`` broadcasts against ``x``. A slice with nothing kept yields zeros.
    """
    d = x.data
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), d.shape)
    masked = np.where(keep, d, -np.inf)
    mx = masked.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(masked - mx)
    tot = e.sum(axis=axis, keepdims=True)
    s = (e / np.where(tot > 0, tot, 1.0)).astype(d.dtype, copy=False)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), back, "masked_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Standardize over the last axis, then apply ``gamma * xhat + beta``."""
    h = x.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(
            f"layer_norm over width {h} got gamma {gamma.shape} and beta {beta.shape}"
        )
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(d.ndim - 1))

    def back(g):
        gxhat = g * gd
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(xhat * gd + beta.data, (x, gamma, beta), back, "layer_norm")


# -- losses ---------------------------------------------------------------------

def log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``.

    ``logits`` is ``[N, C]``. Optional ``weights`` (``[N]``, e.g. a 0/1 mask
    over padded targets) turn the mean into ``sum(w * nll) / sum(w)``.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy needs [N, C] logits and [N] labels, got "
                         f"{logits.shape} and {labels.shape}")
    n, c = logits.shape
    if n and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    w = np.ones(n, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    total = w.sum()
    if total <= 0:
        raise ContractError("cross_entropy over an empty target set")
    logp = log_softmax_np(logits.data)
    rows = np.arange(n)
    nll = -logp[rows, labels]
    loss = np.asarray((w * nll).sum() / total, dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (w / total)[:, None] * g,)

    return make_result(loss, (logits,), back, "cross_entropy")
