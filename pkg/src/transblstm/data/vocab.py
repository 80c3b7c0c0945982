"""Reduced wordpiece vocabulary and greedy longest-match tokenization."""

from __future__ import annotations

import collections
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import VocabError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION = "##"
MAX_WORD_CHARS = 100


@dataclass
class Vocab:
    """Token list whose positions are the ids; the first five are reserved."""

    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise VocabError(f"duplicate vocabulary entry {tok!r} at line {i}")
            self.index[tok] = i
        self.word_start = np.array([not t.startswith(CONTINUATION) for t in self.tokens])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3
    mask_id = 4

    @property
    def first_regular_id(self) -> int:
        return len(SPECIAL_TOKENS)

    def is_special(self, ids) -> np.ndarray:
        return np.asarray(ids) < len(SPECIAL_TOKENS)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def _is_punct(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def split_words(text: str) -> list[str]:
    """Lower-case, split on whitespace, and break punctuation into its own words."""
    words: list[str] = []
    for chunk in text.lower().split():
        cur = []
        for ch in chunk:
            if _is_punct(ch):
                if cur:
                    words.append("".join(cur))
                    cur = []
                words.append(ch)
            else:
                cur.append(ch)
        if cur:
            words.append("".join(cur))
    return words


def wordpiece(word: str, vocab: Vocab) -> list[int] | None:
    """Greedy longest-match-first pieces for one word, or None if it fails."""
    if len(word) > MAX_WORD_CHARS:
        return None
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            if piece in vocab.index:
                found = vocab.index[piece]
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab) -> tuple[list[int], list[bool]]:
    """Token ids and word-start flags; a word that cannot be segmented is [UNK]."""
    ids: list[int] = []
    starts: list[bool] = []
    for word in split_words(text):
        pieces = wordpiece(word, vocab)
        if pieces is None:
            pieces = [vocab.unk_id]
        ids.extend(pieces)
        starts.extend([True] + [False] * (len(pieces) - 1))
    return ids, starts


def build_vocab(texts: Iterable[str], size: int) -> Vocab:
    """Frequency-based vocabulary: reserved tokens, every character (as a word
    start and as a continuation), then whole words by descending frequency."""
    counts: collections.Counter[str] = collections.Counter()
    chars: set[str] = set()
    for text in texts:
        for word in split_words(text):
            counts[word] += 1
            chars.update(word)
    tokens = list(SPECIAL_TOKENS)
    for ch in sorted(chars):
        tokens.append(ch)
    for ch in sorted(chars):
        tokens.append(CONTINUATION + ch)
    if len(tokens) > size:
        raise VocabError(f"vocabulary size {size} is smaller than the {len(tokens)} "
                         "reserved and character entries")
    seen = set(tokens)
    for word, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(tokens) >= size:
            break
        if word not in seen:
            tokens.append(word)
            seen.add(word)
    return Vocab(tokens)
