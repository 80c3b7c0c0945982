"""Pretraining and task heads, their losses, and the assembled models."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .encoder import Encoder, ModelConfig
from .errors import ConfigError, ContractError, ShapeError
from .nn import BLSTM, LayerNorm, Linear, Module, initialize, set_dropout_rng

DECODER_LAYERS = 2
MAX_ANSWER_LEN = 30


def _as_batch(hidden: Tensor) -> Tensor:
    return ops.reshape(hidden, (1, *hidden.shape)) if hidden.ndim == 2 else hidden


def _first_token(hidden: Tensor) -> Tensor:
    return ops.index(_as_batch(hidden), (slice(None), 0))


class MlmHead(Module):
    """Dense + GELU + LayerNorm transform, then logits against the token table.

    The output projection *is* the embedding table tensor (tied), so only the
    transform and a per-token bias are owned here.
    """

    def __init__(self, hidden: int, token_table: Tensor, eps: float = 1e-12):
        self.transform = Linear(hidden, hidden)
        self.norm = LayerNorm(hidden, eps)
        self._table = token_table
        self.output_bias = Tensor(np.zeros(token_table.shape[0], dtype=token_table.dtype),
                                  requires_grad=True)
        self.output_bias.kind = "bias"

    @property
    def table(self) -> Tensor:
        return self._table

    def logits(self, h: Tensor) -> Tensor:
        h = self.norm(ops.gelu(self.transform(h)))
        return ops.matmul(h, ops.transpose(self._table)) + self.output_bias


class Pooler(Module):
    """``tanh(W h_cls + b)`` on the first position."""

    def __init__(self, hidden: int):
        self.dense = Linear(hidden, hidden)

    def forward(self, hidden: Tensor) -> Tensor:
        return ops.tanh(self.dense(_first_token(hidden)))


class ClassifierHead(Module):
    """Pooler followed by a linear map to ``num_classes`` logits."""

    def __init__(self, hidden: int, num_classes: int):
        self.pooler = Pooler(hidden)
        self.classifier = Linear(hidden, num_classes)
        self.num_classes = num_classes

    def logits(self, hidden: Tensor) -> Tensor:
        return self.classifier(self.pooler(hidden))


def NspHead(hidden: int) -> ClassifierHead:
    return ClassifierHead(hidden, 2)


class BlstmDecoder(Module):
    """Two stacked BLSTM layers, each projected back to the hidden width."""

    def __init__(self, hidden: int, num_layers: int = DECODER_LAYERS):
        self.layers = [BLSTM(hidden, hidden, projection=True) for _ in range(num_layers)]

    def forward(self, hidden: Tensor, pad_mask=None) -> Tensor:
        for layer in self.layers:
            hidden = layer(hidden, pad_mask)
        return hidden


def blstm_decoder_forward(hidden: Tensor, decoder: BlstmDecoder, pad_mask=None) -> Tensor:
    return decoder(hidden, pad_mask)


class SpanHead(Module):
    """Optional BLSTM decoder, then a linear map to start/end logits."""

    def __init__(self, hidden: int, decoder_mode: str = "linear"):
        if decoder_mode not in ("linear", "blstm2"):
            raise ConfigError(f"unknown decoder mode {decoder_mode!r}")
        self.decoder = BlstmDecoder(hidden) if decoder_mode == "blstm2" else None
        self.span = Linear(hidden, 2)

    def logits(self, hidden: Tensor, pad_mask=None) -> tuple[Tensor, Tensor]:
        hidden = _as_batch(hidden)
        if self.decoder is not None:
            hidden = self.decoder(hidden, pad_mask)
        both = self.span(hidden)
        start = ops.index(both, (Ellipsis, 0))
        end = ops.index(both, (Ellipsis, 1))
        if pad_mask is not None:
            # finite penalty so padded slots never win and stay NaN-free
            penalty = np.where(np.asarray(pad_mask, dtype=bool).reshape(start.shape), 0.0, -1e4)
            start, end = start + penalty, end + penalty
        return start, end


# -- losses -----------------------------------------------------------------------

def mlm_loss(hidden: Tensor, positions, labels, head: MlmHead, weights=None) -> Tensor:
    """Mean cross-entropy over masked positions.

    ``positions``/``labels`` are ``[M]`` for one sequence or ``[B, M]`` for a
    batch; ``weights`` (same shape, 0/1) marks which batch slots are real.
    """
    hidden = _as_batch(hidden)
    b, s, h = hidden.shape
    positions = np.atleast_2d(np.asarray(positions, dtype=np.int64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
    if positions.shape != labels.shape or positions.shape[0] != b:
        raise ShapeError(f"mask positions {positions.shape} and labels {labels.shape} "
                         f"do not match batch of {b}")
    w = np.ones(positions.shape) if weights is None else np.atleast_2d(np.asarray(weights, dtype=float))
    if positions.size == 0 or w.sum() <= 0:
        raise ContractError("mlm_loss needs at least one masked position")
    if positions.min() < 0 or positions.max() >= s:
        raise ContractError(f"mask positions must lie in [0, {s})")
    v = head.table.shape[0]
    real = w.reshape(-1) > 0
    lab = labels.reshape(-1)
    if lab[real].size and (lab[real].min() < 0 or lab[real].max() >= v):
        raise ContractError(f"mlm labels must lie in [0, {v})")
    flat_idx = (np.arange(b)[:, None] * s + positions).reshape(-1)
    picked = ops.gather_rows(ops.reshape(hidden, (b * s, h)), flat_idx)
    return ops.cross_entropy(head.logits(picked), np.where(real, lab, 0), w.reshape(-1))


def mlm_predictions(hidden: Tensor, positions, head: MlmHead) -> np.ndarray:
    hidden = _as_batch(hidden)
    b, s, h = hidden.shape
    positions = np.atleast_2d(np.asarray(positions, dtype=np.int64))
    flat_idx = (np.arange(b)[:, None] * s + positions).reshape(-1)
    picked = ops.gather_rows(ops.reshape(hidden, (b * s, h)), flat_idx)
    return head.logits(picked).data.argmax(-1).reshape(positions.shape)


def classification_loss(hidden: Tensor, labels, head: ClassifierHead) -> Tensor:
    """Cross-entropy of a pooled [CLS] classifier."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.min() < 0 or labels.max() >= head.num_classes:
        raise ContractError(f"class labels must lie in [0, {head.num_classes})")
    return ops.cross_entropy(head.logits(hidden), labels)


def nsp_loss(hidden: Tensor, labels, head: ClassifierHead) -> Tensor:
    """Two-class cross-entropy; label 1 means B follows A (is_next)."""
    return classification_loss(hidden, labels, head)


def span_loss(hidden: Tensor, start_labels, end_labels, head: SpanHead, pad_mask=None) -> Tensor:
    """Average of the start and end cross-entropies."""
    start_labels = np.atleast_1d(np.asarray(start_labels, dtype=np.int64))
    end_labels = np.atleast_1d(np.asarray(end_labels, dtype=np.int64))
    s = _as_batch(hidden).shape[1]
    if np.any(start_labels < 0) or np.any(end_labels >= s) or np.any(start_labels > end_labels):
        raise ContractError(f"span labels need 0 <= start <= end < {s}")
    start, end = head.logits(hidden, pad_mask)
    return ops.scale(ops.cross_entropy(start, start_labels) + ops.cross_entropy(end, end_labels), 0.5)


def decode_span(start_logits: np.ndarray, end_logits: np.ndarray,
                max_len: int = MAX_ANSWER_LEN) -> tuple[int, int]:
    """Best ``(start, end)`` with ``start <= end <= start + max_len``."""
    s = len(start_logits)
    score = np.asarray(start_logits)[:, None] + np.asarray(end_logits)[None, :]
    i, j = np.indices((s, s))
    score = np.where((j >= i) & (j <= i + max_len), score, -np.inf)
    best = int(np.argmax(score))
    return best // s, best % s


# -- assembled models -------------------------------------------------------------

class PretrainModel(Module):
    """Encoder with tied MLM head and NSP head."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        self.encoder = Encoder(cfg)
        self.mlm = MlmHead(cfg.hidden, self.encoder.embeddings.token, cfg.layer_norm_eps)
        self.nsp = NspHead(cfg.hidden)

    def losses(self, batch) -> tuple[Tensor, Tensor, Tensor]:
        """``(total, mlm, nsp)`` for a :class:`~transblstm.data.Batch`."""
        hidden = self.encoder(batch.token_ids, batch.segment_ids, batch.pad_mask)
        mlm = mlm_loss(hidden, batch.mlm_positions, batch.mlm_labels, self.mlm, batch.mlm_weights)
        nsp = nsp_loss(hidden, batch.nsp_labels, self.nsp)
        return mlm + nsp, mlm, nsp


class TaskModel(Module):
    """Encoder plus a span head or a classification head."""

    def __init__(self, cfg: ModelConfig, task: str, num_classes: int = 2,
                 decoder_mode: str | None = None):
        self.config = cfg
        self.task = task
        self.encoder = Encoder(cfg)
        if task == "span":
            self.head = SpanHead(cfg.hidden, decoder_mode or cfg.decoder_mode)
        elif task == "classify":
            self.head = ClassifierHead(cfg.hidden, num_classes)
        else:
            raise ConfigError(f"unknown task {task!r}; expected 'span' or 'classify'")

    def loss(self, batch) -> Tensor:
        hidden = self.encoder(batch.token_ids, batch.segment_ids, batch.pad_mask)
        if self.task == "span":
            return span_loss(hidden, batch.starts, batch.ends, self.head, batch.pad_mask)
        return classification_loss(hidden, batch.labels, self.head)

    def predict(self, batch) -> np.ndarray:
        hidden = self.encoder(batch.token_ids, batch.segment_ids, batch.pad_mask)
        if self.task == "span":
            start, end = self.head.logits(hidden, batch.pad_mask)
            return np.array([decode_span(s, e) for s, e in zip(start.data, end.data)])
        return self.head.logits(hidden).data.argmax(-1)


def build_model(cfg: ModelConfig, seed: int, task: str | None = None, **task_kwargs) -> Module:
    model = PretrainModel(cfg) if task is None else TaskModel(cfg, task, **task_kwargs)
    initialize(model, seed, cfg.init_std)
    set_dropout_rng(model, None)
    return model
