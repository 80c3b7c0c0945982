"""Per-step metrics records and their tab-separated file format.

A metrics file starts with the header line ``step total mlm nsp lr ms``
(tab-separated) followed by one line per optimizer step. Floats are written
in shortest round-trip form, so reading a file back gives the exact values.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, TextIO

FIELDS = ("step", "total", "mlm", "nsp", "lr", "ms")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    total: float
    mlm: float
    nsp: float
    lr: float
    ms: float

    def to_line(self) -> str:
        return "\t".join([str(self.step)] + [repr(float(v)) for v in astuple(self)[1:]])

    @classmethod
    def from_line(cls, line: str) -> "MetricsRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(FIELDS):
            raise ValueError(f"metrics line has {len(parts)} fields, expected {len(FIELDS)}")
        return cls(int(parts[0]), *(float(p) for p in parts[1:]))


class MetricsWriter:
    """Append-only writer; the header is written when the file is new or empty."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh: TextIO = open(self.path, "a", encoding="utf-8")
        if fresh:
            self._fh.write("\t".join(FIELDS) + "\n")

    def write(self, rec: MetricsRecord) -> None:
        self._fh.write(rec.to_line() + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_metrics(records: Iterable[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(FIELDS) + "\n")
        for rec in records:
            fh.write(rec.to_line() + "\n")


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != FIELDS:
        raise ValueError(f"{path} is not a metrics file")
    return [MetricsRecord.from_line(line) for line in lines[1:] if line]


def smooth(values: list[float], window: int) -> list[float]:
    """Trailing moving average; the first entries average what is available."""
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def is_finite_record(rec: MetricsRecord) -> bool:
    return all(math.isfinite(v) for v in (rec.total, rec.mlm, rec.nsp))
