"""Circuit extraction from edge scores."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import OUTPUT, EdgeId, NodeId
from .scores import EdgeScoreMap

SIZE_GRID = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class CircuitSpec:
    edges: frozenset[EdgeId]
    size_fraction: float
    order: tuple[EdgeId, ...] = ()

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, edge) -> bool:
        return edge in self.edges

    def dumps(self, all_edges=None) -> str:
        listed = self.order or tuple(sorted(self.edges, key=str))
        if all_edges is not None:
            listed = tuple(e for e in all_edges if e in self.edges)
        return f"#size_fraction={self.size_fraction!r}\n" + "".join(f"{e}\n" for e in listed)

    def save(self, path: str | Path, all_edges=None) -> None:
        Path(path).write_text(self.dumps(all_edges))

    @classmethod
    def loads(cls, text: str) -> "CircuitSpec":
        lines = [l.strip() for l in text.splitlines() if l.strip()]
        if not lines or not lines[0].startswith("#size_fraction="):
            raise ValueError("circuit file must start with '#size_fraction=<f>'")
        frac = float(lines[0].split("=", 1)[1])
        order = tuple(EdgeId.parse(l) for l in lines[1:] if not l.startswith("#"))
        return cls(frozenset(order), frac, order)

    @classmethod
    def load(cls, path: str | Path) -> "CircuitSpec":
        return cls.loads(Path(path).read_text())


def size_to_count(size_fraction: float, total: int) -> int:
    """Half-up rounding of ``size_fraction * total``."""
    return int(np.floor(size_fraction * total + 0.5))


def ranked_edges(scores: EdgeScoreMap) -> list[int]:
    """Edge positions by descending ``|score|``; ties keep map order."""
    return list(np.argsort(-np.abs(scores.values), kind="stable"))


def topk_circuit(scores: EdgeScoreMap, k: int, size_fraction: float | None = None) -> CircuitSpec:
    total = len(scores)
    if not 0 <= k <= total:
        raise ValueError(f"k must lie in [0, {total}], got {k}")
    chosen = tuple(scores.edges[i] for i in ranked_edges(scores)[:k])
    frac = k / total if size_fraction is None else size_fraction
    return CircuitSpec(frozenset(chosen), frac, chosen)


def greedy_circuit(scores: EdgeScoreMap, k: int, size_fraction: float | None = None) -> CircuitSpec:
    """Grow a circuit backward from Output, best edge first.

    An edge is eligible once its destination already reaches Output inside
    the circuit, so every chosen edge lies on a path to Output.
    """
    total = len(scores)
    if not 0 <= k <= total:
        raise ValueError(f"k must lie in [0, {total}], got {k}")
    values = scores.values
    reachable: set[NodeId] = {NodeId(OUTPUT)}
    chosen: list[EdgeId] = []
    taken = np.zeros(total, dtype=bool)
    while len(chosen) < k:
        best = -1
        for i, e in enumerate(scores.edges):
            if taken[i] or e.dst not in reachable:
                continue
            if best < 0 or values[i] > values[best]:
                best = i
        if best < 0:
            break
        taken[best] = True
        chosen.append(scores.edges[best])
        reachable.add(scores.edges[best].src)
    frac = k / total if size_fraction is None else size_fraction
    return CircuitSpec(frozenset(chosen), frac, tuple(chosen))


def circuits_over_grid(scores: EdgeScoreMap, grid=SIZE_GRID, greedy: bool = False):
    total = len(scores)
    pick = greedy_circuit if greedy else topk_circuit
    return [pick(scores, size_to_count(f, total), f) for f in grid]
