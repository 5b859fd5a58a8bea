"""Faithfulness curves and their CPR/CMD summaries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .circuits import SIZE_GRID, CircuitSpec, circuits_over_grid
from .data import Batch
from .scores import EdgeScoreMap


class DegenerateTaskError(ValueError):
    pass


@dataclass
class EvalCurve:
    points: list[tuple[float, float]]
    metric: str = M.LOGIT_DIFF
    num_examples: int = 0

    def __post_init__(self):
        sizes = [s for s, _ in self.points]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("curve sizes must be strictly increasing")
        if not all(np.isfinite(f) for _, f in self.points):
            raise ValueError("non-finite faithfulness value")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s for s, _ in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([f for _, f in self.points])

    def to_csv(self) -> str:
        return "size_fraction,faithfulness\n" + "".join(f"{s!r},{f!r}\n" for s, f in self.points)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "EvalCurve":
        rows = [l.split(",") for l in text.splitlines()[1:] if l.strip()]
        return cls([(float(s), float(f)) for s, f in rows])


class Evaluator:
    """Caches the full-model and empty-circuit metric for one batch."""

    def __init__(self, params: M.ModelParams, batch: Batch):
        if len(batch) == 0:
            raise ValueError("evaluation needs a nonempty batch")
        self.params = params
        self.batch = batch
        self.reference = M.run(params, batch.corrupt).cache
        n = params.topology.num_edges
        self.full = self.metric_for(np.ones(n))
        self.empty = self.metric_for(np.zeros(n))
        if abs(self.full - self.empty) < 1e-9:
            raise DegenerateTaskError("full model and empty circuit score the same")

    def metric_for(self, z: np.ndarray) -> float:
        logits = M.run(self.params, self.batch.clean, z=z, reference=self.reference).logits
        return M.metric(logits, None, M.LOGIT_DIFF, self.batch.answer, self.batch.foil)

    def indicator(self, circuit: CircuitSpec) -> np.ndarray:
        index = self.params.topology.edge_index
        z = np.zeros(self.params.topology.num_edges)
        for e in circuit.edges:
            z[index[e]] = 1.0
        return z

    def faithfulness(self, circuit: CircuitSpec) -> float:
        m = self.metric_for(self.indicator(circuit))
        return (m - self.empty) / (self.full - self.empty)

    def curve(self, circuits) -> EvalCurve:
        pts = [(c.size_fraction, self.faithfulness(c)) for c in circuits]
        return EvalCurve(pts, M.LOGIT_DIFF, len(self.batch))


def faithfulness(params: M.ModelParams, circuit: CircuitSpec, batch: Batch) -> float:
    """``(m(C) - m(empty)) / (m(model) - m(empty))`` with mean LogitDiff ``m``."""
    return Evaluator(params, batch).faithfulness(circuit)


def score_curve(params: M.ModelParams, scores: EdgeScoreMap, batch: Batch, grid=SIZE_GRID,
                greedy: bool = False) -> EvalCurve:
    scores = scores.aligned_to(params.topology.edges)
    return Evaluator(params, batch).curve(circuits_over_grid(scores, grid, greedy))


def _grid_values(curve: EvalCurve) -> np.ndarray:
    if len(curve.points) < 2:
        raise ValueError("CPR/CMD need at least two curve points")
    keep = curve.sizes < 1.0
    return curve.values[keep] if keep.any() else curve.values


def cpr(curve: EvalCurve) -> float:
    """Equal-weight mean faithfulness over the grid, full circuit excluded."""
    return float(np.mean(_grid_values(curve)))


def cmd(curve: EvalCurve) -> float:
    """Equal-weight mean of ``|f - 1|`` over the grid, full circuit excluded."""
    return float(np.mean(np.abs(_grid_values(curve) - 1.0)))


def objective(cpr_value: float, cmd_value: float) -> float:
    """Search objective ``CMD - CPR``; lower is better."""
    return cmd_value - cpr_value


def summary_line(curve: EvalCurve) -> str:
    c, d = cpr(curve), cmd(curve)
    return f"CPR={c!r} CMD={d!r} P={objective(c, d)!r}"
