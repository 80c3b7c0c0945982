"""Sentence-pair sampling, input formatting, whole-word masking and batching."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from ..errors import ConfigError, ContractError
from .corpus import Sentence, TokenizedCorpus
from .vocab import Vocab

IS_NEXT = 1
NOT_NEXT = 0
MASK_RATE = 0.15
MASK_PROB = 0.8
RANDOM_PROB = 0.1
MIN_PAIR_LEN = 5

# Field order of one serialized example; lists are space-separated decimals.
RECORD_FIELDS = ("token_ids", "segment_ids", "mlm_positions", "mlm_labels", "nsp_label", "length")


class SentencePair(NamedTuple):
    first: Sentence
    second: Sentence
    nsp_label: int
    first_doc: int
    second_doc: int


def sample_sentence_pair(corpus: TokenizedCorpus, rng: np.random.Generator) -> SentencePair:
    """Draw (A, B, label): half the time B is A's successor, else from another document."""
    docs = corpus.documents
    if len(docs) < 2:
        raise ConfigError("next-sentence sampling needs at least two documents")
    multi = [i for i, d in enumerate(docs) if len(d) >= 2]
    if not multi:
        raise ConfigError("next-sentence sampling needs a document with two sentences")
    if rng.random() < 0.5:
        d = multi[int(rng.integers(len(multi)))]
        i = int(rng.integers(len(docs[d]) - 1))
        return SentencePair(docs[d][i], docs[d][i + 1], IS_NEXT, d, d)
    da = int(rng.integers(len(docs)))
    db = int(rng.integers(len(docs) - 1))
    if db >= da:
        db += 1
    a = docs[da][int(rng.integers(len(docs[da])))]
    b = docs[db][int(rng.integers(len(docs[db])))]
    return SentencePair(a, b, NOT_NEXT, da, db)


@dataclass
class PretrainExample:
    """One ``[CLS] x1 [SEP] x2 [SEP]`` sequence (unpadded)."""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    nsp_label: int
    mlm_positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mlm_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    word_starts: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.token_ids)

    def unmasked(self) -> np.ndarray:
        ids = self.token_ids.copy()
        ids[self.mlm_positions] = self.mlm_labels
        return ids

    def to_record(self) -> str:
        def join(a):
            return " ".join(str(int(v)) for v in a)
        return "\t".join([
            join(self.token_ids), join(self.segment_ids), join(self.mlm_positions),
            join(self.mlm_labels), str(int(self.nsp_label)), str(self.length),
        ])

    @classmethod
    def from_record(cls, line: str) -> "PretrainExample":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(RECORD_FIELDS):
            raise ContractError(f"expected {len(RECORD_FIELDS)} fields, got {len(parts)}")

        def ints(s):
            return np.array([int(v) for v in s.split()], dtype=np.int64)
        ex = cls(ints(parts[0]), ints(parts[1]), int(parts[4]), ints(parts[2]), ints(parts[3]))
        if ex.length != int(parts[5]) or len(ex.segment_ids) != ex.length:
            raise ContractError("record length field disagrees with its token list")
        return ex


def write_examples(examples: Iterable[PretrainExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_record() + "\n")


def read_examples(path: str | Path) -> list[PretrainExample]:
    with open(path, encoding="utf-8") as fh:
        return [PretrainExample.from_record(line) for line in fh if line.strip()]


def _trim_lengths(n1: int, n2: int, max_len: int) -> tuple[int, int]:
    if max_len < MIN_PAIR_LEN:
        raise ContractError(f"max_len must be at least {MIN_PAIR_LEN}")
    budget = max_len - 3
    while n1 + n2 > budget:
        if n2 > 1:
            n2 -= 1
        else:
            n1 -= 1
    return n1, n2


def format_pair(first: Sentence, second: Sentence, nsp_label: int, vocab: Vocab,
                max_len: int) -> PretrainExample:
    """Lay out ``[CLS] x1 [SEP] x2 [SEP]``, trimming the tail of x2, then x1."""
    n1, n2 = _trim_lengths(len(first.ids), len(second.ids), max_len)
    a, b = first.ids[:n1], second.ids[:n2]
    ids = np.concatenate([[vocab.cls_id], a, [vocab.sep_id], b, [vocab.sep_id]]).astype(np.int64)
    segs = np.concatenate([np.zeros(n1 + 2), np.ones(n2 + 1)]).astype(np.int64)
    starts = np.concatenate([[False], first.starts[:n1], [False], second.starts[:n2], [False]])
    return PretrainExample(ids, segs, nsp_label, word_starts=starts.astype(bool))


def truncate_example(ex: PretrainExample, max_len: int, vocab: Vocab) -> PretrainExample:
    """Shorten an over-long example, keeping both separators and its segment layout."""
    if ex.length <= max_len:
        return ex
    seps = np.flatnonzero(ex.token_ids == vocab.sep_id)
    if ex.token_ids[0] != vocab.cls_id or len(seps) != 2 or seps[1] != ex.length - 1:
        raise ContractError("example is not laid out as [CLS] x1 [SEP] x2 [SEP]")
    n1, n2 = seps[0] - 1, seps[1] - seps[0] - 1
    k1, k2 = _trim_lengths(n1, n2, max_len)
    keep = np.concatenate([np.arange(0, k1 + 1), [seps[0]],
                           np.arange(seps[0] + 1, seps[0] + 1 + k2), [seps[1]]])
    new_pos = np.full(ex.length, -1)
    new_pos[keep] = np.arange(len(keep))
    mapped = new_pos[ex.mlm_positions]
    kept = mapped >= 0
    return replace(
        ex,
        token_ids=ex.token_ids[keep], segment_ids=ex.segment_ids[keep],
        mlm_positions=mapped[kept], mlm_labels=ex.mlm_labels[kept],
        word_starts=None if ex.word_starts is None else ex.word_starts[keep],
    )


def _words(maskable: np.ndarray, starts: np.ndarray) -> list[np.ndarray]:
    words: list[list[int]] = []
    for pos in np.flatnonzero(maskable):
        if starts[pos] or not words or words[-1][-1] != pos - 1:
            words.append([pos])
        else:
            words[-1].append(pos)
    return [np.array(w) for w in words]


def whole_word_mask(ex: PretrainExample, vocab: Vocab, rng: np.random.Generator,
                    rate: float = MASK_RATE, per_word: bool = True) -> PretrainExample | None:
    """Mask whole words covering ~``rate`` of the non-special positions.

    Words are visited in random order and taken while they fit within the
    target count ``max(1, round(rate * n))``; a word that would overshoot is
    skipped unless nothing has been selected yet. Each selected word gets one
    draw (or one per piece with ``per_word=False``): [MASK] 80%, a random
    regular token 10%, unchanged 10%. Returns None when nothing is maskable.
    """
    ids = ex.token_ids
    maskable = ~vocab.is_special(ids)
    n = int(maskable.sum())
    if n == 0:
        return None
    starts = ex.word_starts if ex.word_starts is not None else vocab.word_start[ids]
    words = _words(maskable, starts)
    target = max(1, int(round(rate * n)))
    chosen: list[np.ndarray] = []
    covered = 0
    for w in rng.permutation(len(words)):
        piece = words[w]
        if covered and covered + len(piece) > target:
            continue
        chosen.append(piece)
        covered += len(piece)
        if covered >= target:
            break

    new_ids = ids.copy()
    lo, hi = vocab.first_regular_id, len(vocab)
    for piece in chosen:
        draws = [rng.random()] * len(piece) if per_word else rng.random(len(piece))
        for pos, u in zip(piece, draws):
            if u < MASK_PROB:
                new_ids[pos] = vocab.mask_id
            elif u < MASK_PROB + RANDOM_PROB:
                new_ids[pos] = rng.integers(lo, hi)
    positions = np.sort(np.concatenate(chosen)).astype(np.int64)
    return replace(ex, token_ids=new_ids, mlm_positions=positions, mlm_labels=ids[positions].copy())


def make_pretrain_example(corpus: TokenizedCorpus, vocab: Vocab, rng: np.random.Generator,
                          max_len: int, per_word: bool = True) -> PretrainExample:
    while True:
        pair = sample_sentence_pair(corpus, rng)
        ex = format_pair(pair.first, pair.second, pair.nsp_label, vocab, max_len)
        masked = whole_word_mask(ex, vocab, rng, per_word=per_word)
        if masked is not None:
            return masked


@dataclass
class Batch:
    token_ids: np.ndarray       # [B, L]
    segment_ids: np.ndarray     # [B, L]
    pad_mask: np.ndarray        # [B, L] bool, true at real tokens
    mlm_positions: np.ndarray   # [B, M]
    mlm_labels: np.ndarray      # [B, M]
    mlm_weights: np.ndarray     # [B, M] 1.0 at real targets
    nsp_labels: np.ndarray      # [B]

    def __len__(self) -> int:
        return len(self.token_ids)


def make_batch(examples: list[PretrainExample], max_len: int, vocab: Vocab) -> Batch:
    """Right-pad to the longest example (after truncating to ``max_len``)."""
    if not examples:
        raise ContractError("make_batch needs at least one example")
    examples = [truncate_example(ex, max_len, vocab) for ex in examples]
    b = len(examples)
    length = max(ex.length for ex in examples)
    m = max(1, max(len(ex.mlm_positions) for ex in examples))
    tok = np.full((b, length), vocab.pad_id, dtype=np.int64)
    seg = np.zeros((b, length), dtype=np.int64)
    pad = np.zeros((b, length), dtype=bool)
    pos = np.zeros((b, m), dtype=np.int64)
    lab = np.zeros((b, m), dtype=np.int64)
    wts = np.zeros((b, m))
    for i, ex in enumerate(examples):
        n, k = ex.length, len(ex.mlm_positions)
        tok[i, :n] = ex.token_ids
        seg[i, :n] = ex.segment_ids
        pad[i, :n] = True
        pos[i, :k] = ex.mlm_positions
        lab[i, :k] = ex.mlm_labels
        wts[i, :k] = 1.0
    nsp = np.array([ex.nsp_label for ex in examples], dtype=np.int64)
    return Batch(tok, seg, pad, pos, lab, wts, nsp)


def iter_batches(examples: list[PretrainExample], batch_size: int, max_len: int,
                 vocab: Vocab) -> Iterator[Batch]:
    for i in range(0, len(examples), batch_size):
        yield make_batch(examples[i:i + batch_size], max_len, vocab)


class ExampleStream:
    """Endless, deterministic supply of masked pretraining batches."""

    def __init__(self, corpus: TokenizedCorpus, vocab: Vocab, rng: np.random.Generator,
                 max_len: int, per_word: bool = True):
        self.corpus = corpus
        self.vocab = vocab
        self.rng = rng
        self.max_len = max_len
        self.per_word = per_word

    def batch(self, batch_size: int) -> Batch:
        exs = [make_pretrain_example(self.corpus, self.vocab, self.rng, self.max_len, self.per_word)
               for _ in range(batch_size)]
        return make_batch(exs, self.max_len, self.vocab)
