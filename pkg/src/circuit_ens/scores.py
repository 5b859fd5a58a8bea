"""Edge score maps and the shared score file format.

A score file is a header line ``#method=<name> metric=<kind> n=<count>``
followed by ``edge_id<TAB>score`` lines. Scores are written with ``repr``,
which is the shortest decimal string that parses back to the same double.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import EdgeId, GraphTopology


class ScoreFormatError(ValueError):
    pass


@dataclass
class EdgeScoreMap:
    method: str
    edges: tuple[EdgeId, ...]
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        self.edges = tuple(self.edges)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.edges),):
            raise ScoreFormatError(f"{len(self.edges)} edges but values of shape {self.values.shape}")
        if len(set(self.edges)) != len(self.edges):
            raise ScoreFormatError("duplicate edge in score map")
        if not np.all(np.isfinite(self.values)):
            raise ScoreFormatError(f"non-finite score in map {self.method!r}")

    @classmethod
    def for_topology(cls, method: str, topology: GraphTopology, values, **metadata) -> "EdgeScoreMap":
        return cls(method, topology.edges, values, dict(metadata))

    @classmethod
    def from_dict(cls, method: str, scores: Mapping, **metadata) -> "EdgeScoreMap":
        edges = [k if isinstance(k, EdgeId) else EdgeId.parse(k) for k in scores]
        return cls(method, tuple(edges), np.array(list(scores.values()), dtype=np.float64),
                   dict(metadata))

    def __len__(self) -> int:
        return len(self.edges)

    def __getitem__(self, edge) -> float:
        if isinstance(edge, str):
            edge = EdgeId.parse(edge)
        return float(self.values[self.edges.index(edge)])

    def as_dict(self) -> dict[str, float]:
        return {str(e): float(v) for e, v in zip(self.edges, self.values)}

    def replace(self, values=None, method=None, normalized=None, **metadata) -> "EdgeScoreMap":
        meta = {**self.metadata, **metadata}
        return EdgeScoreMap(
            self.method if method is None else method,
            self.edges,
            self.values.copy() if values is None else values,
            meta,
            self.normalized if normalized is None else normalized,
        )

    def aligned_to(self, edges: Sequence[EdgeId]) -> "EdgeScoreMap":
        """Same map reordered to ``edges``; the edge sets must match exactly."""
        edges = tuple(edges)
        if edges == self.edges:
            return self
        if set(edges) != set(self.edges):
            raise ScoreFormatError("score maps cover different edge sets")
        pos = {e: i for i, e in enumerate(self.edges)}
        return EdgeScoreMap(self.method, edges, self.values[[pos[e] for e in edges]],
                            dict(self.metadata), self.normalized)

    def header(self) -> str:
        parts = [f"method={self.method}",
                 f"metric={self.metadata.get('metric', 'none')}",
                 f"n={self.metadata.get('n', 0)}"]
        for key in sorted(k for k in self.metadata if k not in ("metric", "n")):
            parts.append(f"{key}={self.metadata[key]}")
        if self.normalized:
            parts.append("normalized=true")
        return "#" + " ".join(parts)

    def dumps(self) -> str:
        lines = [self.header()]
        lines.extend(f"{e}\t{float(v)!r}" for e, v in zip(self.edges, self.values))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EdgeScoreMap":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ScoreFormatError("score file must start with a '#method=...' header")
        meta = {}
        for tok in lines[0][1:].split():
            key, sep, value = tok.partition("=")
            if not sep:
                raise ScoreFormatError(f"bad header token {tok!r}")
            meta[key] = value
        if "method" not in meta:
            raise ScoreFormatError("header lacks method=")
        method = meta.pop("method")
        normalized = meta.pop("normalized", "false") == "true"
        if "n" in meta:
            meta["n"] = int(meta["n"])
        if "ig_steps" in meta:
            meta["ig_steps"] = int(meta["ig_steps"])
        edges, values = [], []
        for line in lines[1:]:
            if line.startswith("#"):
                continue
            name, sep, value = line.partition("\t")
            if not sep:
                raise ScoreFormatError(f"expected edge<TAB>score, got {line!r}")
            edges.append(EdgeId.parse(name))
            values.append(float(value))
        return cls(method, tuple(edges), np.array(values, dtype=np.float64), meta, normalized)

    @classmethod
    def load(cls, path: str | Path) -> "EdgeScoreMap":
        return cls.loads(Path(path).read_text())
