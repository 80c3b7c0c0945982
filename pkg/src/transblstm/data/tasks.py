"""Synthetic fine-tuning tasks with known solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .vocab import Vocab


@dataclass
class TaskBatch:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    pad_mask: np.ndarray
    labels: np.ndarray | None = None
    starts: np.ndarray | None = None
    ends: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.token_ids)

    def take(self, idx) -> "TaskBatch":
        def pick(a):
            return None if a is None else a[idx]
        return TaskBatch(self.token_ids[idx], self.segment_ids[idx], self.pad_mask[idx],
                         pick(self.labels), pick(self.starts), pick(self.ends))


def _frame(body: np.ndarray, vocab: Vocab) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(body)
    tok = np.empty((n, body.shape[1] + 2), dtype=np.int64)
    tok[:, 0] = vocab.cls_id
    tok[:, 1:-1] = body
    tok[:, -1] = vocab.sep_id
    return tok, np.zeros_like(tok), np.ones(tok.shape, dtype=bool)


def make_classification_task(vocab: Vocab, n: int, seq_len: int, num_classes: int,
                             rng: np.random.Generator) -> TaskBatch:
    """``[CLS] filler [SEP]`` with one class-marker token planted at random.

    Marker ``k`` is the ``k``-th regular token and never appears as filler, so
    the label is a linear function of the bag of tokens.
    """
    lo = vocab.first_regular_id
    if len(vocab) - lo <= num_classes or seq_len < 1:
        raise ConfigError("vocabulary too small for the requested classes")
    body = rng.integers(lo + num_classes, len(vocab), size=(n, seq_len))
    labels = rng.integers(0, num_classes, size=n)
    where = rng.integers(0, seq_len, size=n)
    body[np.arange(n), where] = lo + labels
    tok, seg, pad = _frame(body, vocab)
    return TaskBatch(tok, seg, pad, labels=labels.astype(np.int64))


def make_span_task(vocab: Vocab, n: int, seq_len: int, rng: np.random.Generator,
                   max_answer: int = 4) -> TaskBatch:
    """Filler with one ``<open> answer <close>`` stretch; labels index the answer.

    The two marker tokens are the first two regular ids and never occur
    elsewhere, so the answer span is uniquely determined.
    """
    lo = vocab.first_regular_id
    if seq_len < max_answer + 2:
        raise ConfigError("sequence too short for the answer span")
    open_id, close_id = lo, lo + 1
    body = rng.integers(lo + 2, len(vocab), size=(n, seq_len))
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    for i in range(n):
        width = int(rng.integers(1, max_answer + 1))
        left = int(rng.integers(0, seq_len - width - 1))
        body[i, left] = open_id
        body[i, left + width + 1] = close_id
        # +1 for the leading [CLS]
        starts[i] = left + 2
        ends[i] = left + width + 1
    tok, seg, pad = _frame(body, vocab)
    return TaskBatch(tok, seg, pad, starts=starts, ends=ends)
