"""Paired clean/counterfactual examples and their line format.

One record per line: ``clean_tokens|corrupt_tokens|answer|foil`` with
space-separated integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PairedExample:
    clean: tuple[int, ...]
    corrupt: tuple[int, ...]
    answer: int
    foil: int

    def __post_init__(self):
        if len(self.clean) != len(self.corrupt):
            raise DataFormatError("clean and corrupted sequences differ in length")
        if tuple(self.clean) == tuple(self.corrupt):
            raise DataFormatError("clean and corrupted sequences are identical")

    def to_line(self) -> str:
        return "|".join([
            " ".join(map(str, self.clean)),
            " ".join(map(str, self.corrupt)),
            str(self.answer),
            str(self.foil),
        ])

    @classmethod
    def from_line(cls, line: str) -> "PairedExample":
        parts = line.strip().split("|")
        if len(parts) != 4:
            raise DataFormatError(f"expected 4 '|'-separated fields, got {len(parts)}: {line!r}")
        try:
            clean = tuple(int(t) for t in parts[0].split())
            corrupt = tuple(int(t) for t in parts[1].split())
            return cls(clean, corrupt, int(parts[2]), int(parts[3]))
        except ValueError as exc:
            raise DataFormatError(f"bad record {line!r}: {exc}") from None


@dataclass(frozen=True)
class Batch:
    """Column view over examples; no clean != corrupt requirement, so the
    degenerate ``clean == corrupt`` case can be built for testing."""

    clean: np.ndarray  # [B, T] int
    corrupt: np.ndarray
    answer: np.ndarray  # [B] int
    foil: np.ndarray

    def __post_init__(self):
        if self.clean.shape != self.corrupt.shape or self.clean.ndim != 2:
            raise DataFormatError("clean/corrupt token arrays must share shape [batch, seq]")
        if len(self.clean) == 0:
            raise DataFormatError("empty batch")

    def __len__(self) -> int:
        return self.clean.shape[0]

    @classmethod
    def from_examples(cls, examples: Sequence[PairedExample]) -> "Batch":
        if not examples:
            raise DataFormatError("empty batch")
        return cls(
            np.array([e.clean for e in examples], dtype=np.int64),
            np.array([e.corrupt for e in examples], dtype=np.int64),
            np.array([e.answer for e in examples], dtype=np.int64),
            np.array([e.foil for e in examples], dtype=np.int64),
        )

    @classmethod
    def from_arrays(cls, clean, corrupt, answer, foil) -> "Batch":
        clean = np.atleast_2d(np.asarray(clean, dtype=np.int64))
        corrupt = np.atleast_2d(np.asarray(corrupt, dtype=np.int64))
        return cls(clean, corrupt, np.atleast_1d(np.asarray(answer, dtype=np.int64)),
                   np.atleast_1d(np.asarray(foil, dtype=np.int64)))

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.intp)
        return Batch(self.clean[idx], self.corrupt[idx], self.answer[idx], self.foil[idx])

    def examples(self) -> list[PairedExample]:
        return [PairedExample(tuple(int(t) for t in c), tuple(int(t) for t in d), int(a), int(f))
                for c, d, a, f in zip(self.clean, self.corrupt, self.answer, self.foil)]

    def repeat(self, times: int) -> "Batch":
        return Batch(*(np.concatenate([a] * times) for a in
                       (self.clean, self.corrupt, self.answer, self.foil)))


def write_examples(path: str | Path, examples: Iterable[PairedExample]) -> None:
    Path(path).write_text("".join(e.to_line() + "\n" for e in examples))


def read_examples(path: str | Path) -> list[PairedExample]:
    lines = Path(path).read_text().splitlines()
    return [PairedExample.from_line(l) for l in lines if l.strip() and not l.startswith("#")]


def read_batch(path: str | Path) -> Batch:
    return Batch.from_examples(read_examples(path))
