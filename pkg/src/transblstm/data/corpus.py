"""Plain-text corpora and the synthetic template corpus.

On disk a corpus is UTF-8 text: one sentence per line, documents separated
by blank lines.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .vocab import CONTINUATION, SPECIAL_TOKENS, Vocab, tokenize


@dataclass
class Corpus:
    documents: list[list[str]]

    def to_text(self) -> str:
        return "\n\n".join("\n".join(doc) for doc in self.documents) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "Corpus":
        docs: list[list[str]] = []
        cur: list[str] = []
        for line in text.splitlines():
            line = line.strip()
            if line:
                cur.append(line)
            elif cur:
                docs.append(cur)
                cur = []
        if cur:
            docs.append(cur)
        return cls(docs)

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def sentences(self):
        for doc in self.documents:
            yield from doc


@dataclass
class Sentence:
    ids: np.ndarray
    starts: np.ndarray


@dataclass
class TokenizedCorpus:
    """Sentences pre-split into ids and word-start flags, grouped by document."""

    documents: list[list[Sentence]]

    @classmethod
    def build(cls, corpus: Corpus, vocab: Vocab) -> "TokenizedCorpus":
        docs = []
        for doc in corpus.documents:
            sents = []
            for line in doc:
                ids, starts = tokenize(line, vocab)
                if ids:
                    sents.append(Sentence(np.array(ids, dtype=np.int64), np.array(starts, dtype=bool)))
            if sents:
                docs.append(sents)
        return cls(docs)


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the template corpus.

    Tokens follow a fixed random successor cycle over the whole vocabulary,
    so every token is predictable from either neighbour and consecutive
    sentences continue the same walk (which also makes NSP learnable).
    ``noise`` is the chance a token is drawn uniformly instead.
    """

    vocab_size: int = 100
    num_documents: int = 200
    min_sentences: int = 2
    max_sentences: int = 6
    min_sentence_len: int = 4
    max_sentence_len: int = 12
    continuation_fraction: float = 0.2
    noise: float = 0.0


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    vocab: Vocab
    successor: dict[int, int]


def _piece_strings(n_pieces: int, continuation_fraction: float) -> list[str]:
    n_cont = int(round(n_pieces * continuation_fraction))
    n_start = n_pieces - n_cont
    if n_start < 1:
        raise ConfigError("synthetic vocabulary needs at least one word-start piece")
    return [f"w{i}" for i in range(n_start)] + [f"{CONTINUATION}x{i}" for i in range(n_cont)]


def _render(pieces: list[str]) -> str:
    words: list[str] = []
    for p in pieces:
        if p.startswith(CONTINUATION):
            words[-1] += p[len(CONTINUATION):]
        else:
            words.append(p)
    return " ".join(words)


def gen_synthetic_corpus(spec: SyntheticSpec, rng: np.random.Generator) -> SyntheticCorpus:
    """Reproducible template corpus plus its vocabulary."""
    n_special = len(SPECIAL_TOKENS)
    n_pieces = spec.vocab_size - n_special
    if n_pieces < 2:
        raise ConfigError("vocab_size too small for a synthetic corpus")
    if spec.min_sentences < 1 or spec.max_sentences < spec.min_sentences:
        raise ConfigError("invalid sentences-per-document range")
    if spec.min_sentence_len < 1 or spec.max_sentence_len < spec.min_sentence_len:
        raise ConfigError("invalid sentence length range")
    pieces = _piece_strings(n_pieces, spec.continuation_fraction)
    vocab = Vocab(list(SPECIAL_TOKENS) + pieces)
    ids = np.arange(n_special, spec.vocab_size)
    order = rng.permutation(ids)
    successor = {int(a): int(b) for a, b in zip(order, np.roll(order, -1))}
    is_start = vocab.word_start
    start_ids = ids[is_start[ids]]

    documents = []
    for _ in range(spec.num_documents):
        n_sent = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
        tok = int(rng.choice(start_ids))
        doc = []
        for _ in range(n_sent):
            target = int(rng.integers(spec.min_sentence_len, spec.max_sentence_len + 1))
            sent = [tok]
            # sentences end only where the next piece begins a new word
            while True:
                if rng.random() < spec.noise:
                    nxt = int(rng.choice(ids))
                else:
                    nxt = successor[sent[-1]]
                if len(sent) >= target and is_start[nxt]:
                    tok = nxt
                    break
                sent.append(nxt)
            doc.append(_render([vocab.tokens[i] for i in sent]))
        documents.append(doc)
    return SyntheticCorpus(Corpus(documents), vocab, successor)


class BigramOracle:
    """Count-based neighbour predictor used to bound MLM accuracy from above.

    Each regular token within ``reach`` positions on either side (stopping
    at special tokens) votes for the masked slot by chaining its most
    frequent successor (left side) or predecessor (right side). Majority
    wins; ties go to the nearest vote.
    """

    def __init__(self, tokenized: TokenizedCorpus, reach: int = 3):
        self.reach = reach
        nxt: dict[int, collections.Counter] = collections.defaultdict(collections.Counter)
        prv: dict[int, collections.Counter] = collections.defaultdict(collections.Counter)
        for doc in tokenized.documents:
            flat = np.concatenate([s.ids for s in doc])
            for a, b in zip(flat[:-1], flat[1:]):
                nxt[int(a)][int(b)] += 1
                prv[int(b)][int(a)] += 1
        self.next = {k: c.most_common(1)[0][0] for k, c in nxt.items()}
        self.prev = {k: c.most_common(1)[0][0] for k, c in prv.items()}

    def _chain(self, tok: int, steps: int, table: dict[int, int]) -> int | None:
        for _ in range(steps):
            if tok not in table:
                return None
            tok = table[tok]
        return tok

    def predict(self, token_ids: np.ndarray, position: int, vocab: Vocab) -> int:
        n_special = len(SPECIAL_TOKENS)
        votes: list[tuple[int, int]] = []
        for side, table in ((-1, self.next), (1, self.prev)):
            for k in range(1, self.reach + 1):
                q = position + side * k
                if not 0 <= q < len(token_ids):
                    break
                tok = int(token_ids[q])
                if tok == vocab.mask_id:
                    continue
                if tok < n_special:
                    break
                guess = self._chain(tok, k, table)
                if guess is not None:
                    votes.append((k, guess))
        if not votes:
            return vocab.unk_id
        counts = collections.Counter(g for _, g in votes)
        top = max(counts.values())
        return min((k, g) for k, g in votes if counts[g] == top)[1]
