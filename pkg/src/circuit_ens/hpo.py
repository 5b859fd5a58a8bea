"""Grid search over pruning hyperparameters.

Trials are drawn from a finite grid, either exhaustively or by sampling
without replacement, and scored on validation data by ``P = CMD - CPR``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import evaluation as Ev
from . import model as M
from .data import Batch
from .pruning import PruneConfig, train
from .scores import EdgeScoreMap
from .signs import signs_from_eapig, z_score_attribution
from .warmstart import initialize_mask

GRID: dict[str, tuple] = {
    "edge_lr": (0.03, 0.4, 0.8),
    "layer_lr": (0.001, 0.4, 0.8),
    "reg_edge_lr": (0.03, 0.4, 0.8),
    "reg_layer_lr": (0.001, 0.4, 0.8),
    "start_edge_sparsity": (0.8, 0.9, 0.95),
    "target_edge_sparsity": (0.975, 0.99, 1.05),
    "target_layer_sparsity": (0.4, 0.69),
    "warmup_steps": (50, 250, 500),
    "disable_node_loss": (True, False),
    "signs_from_eapig": (True, False),
}
DEFAULT_BUDGET = 200

Evaluate = Callable[[PruneConfig], "tuple[float, float]"]


def grid_size(grid: Mapping[str, Sequence]) -> int:
    return math.prod(len(v) for v in grid.values())


def grid_point(grid: Mapping[str, Sequence], index: int) -> dict:
    """The ``index``-th point in row-major order (last key varies fastest)."""
    size = grid_size(grid)
    if not 0 <= index < size:
        raise IndexError(f"grid index {index} outside [0, {size})")
    point = {}
    for key in reversed(list(grid)):
        values = grid[key]
        index, pos = divmod(index, len(values))
        point[key] = values[pos]
    return {k: point[k] for k in grid}


def grid_points(grid: Mapping[str, Sequence]):
    keys = list(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, combo))


@dataclass
class Trial:
    index: int
    grid_index: int
    params: dict
    cpr: float
    cmd: float

    @property
    def objective(self) -> float:
        return Ev.objective(self.cpr, self.cmd)


@dataclass
class SearchResult:
    best: PruneConfig
    best_trial: Trial
    trials: list[Trial]

    def report_csv(self) -> str:
        keys = list(self.trials[0].params) if self.trials else []
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["trial", "grid_index", *keys, "cpr", "cmd", "objective"])
        for t in self.trials:
            writer.writerow([t.index, t.grid_index, *(_cell(t.params[k]) for k in keys),
                             repr(t.cpr), repr(t.cmd), repr(t.objective)])
        return buf.getvalue()

    def save_report(self, path: str | Path) -> None:
        Path(path).write_text(self.report_csv())


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def choose_indices(size: int, budget: int, seed: int) -> list[int]:
    """All indices when the budget covers the grid, else a seeded sample."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if budget >= size:
        return list(range(size))
    rng = np.random.default_rng([seed, 17])
    return [int(i) for i in rng.choice(size, size=budget, replace=False)]


def _run_one(job):
    evaluate, config = job
    cpr, cmd = evaluate(config)
    return float(cpr), float(cmd)


def search(evaluate: Evaluate, grid: Mapping[str, Sequence] = GRID, budget: int = DEFAULT_BUDGET,
           seed: int = 0, workers: int = 1, base: PruneConfig | None = None) -> SearchResult:
    """Evaluate grid points and return the one minimizing ``CMD - CPR``.

    ``evaluate`` maps a config to ``(cpr, cmd)`` on validation data and must be
    picklable when ``workers > 1``. Ties go to the earliest trial.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    base = base or PruneConfig()
    unknown = set(grid) - set(asdict(base))
    if unknown:
        raise ValueError(f"grid names unknown config fields: {sorted(unknown)}")
    indices = choose_indices(grid_size(grid), budget, seed)
    points = [grid_point(grid, i) for i in indices]
    configs = [replace(base, **p) for p in points]
    jobs = [(evaluate, c) for c in configs]
    if workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    trials = [Trial(n, gi, p, cpr, cmd)
              for n, (gi, p, (cpr, cmd)) in enumerate(zip(indices, points, results))]
    best = min(trials, key=lambda t: (t.objective, t.index))
    return SearchResult(configs[best.index], best, trials)


@dataclass
class PruningObjective:
    """Warm-start from ``eapig``, train, sign, and score on validation data."""

    params: M.ModelParams
    train_data: Batch
    val_data: Batch
    eapig: EdgeScoreMap
    train_steps: int | None = None

    def __call__(self, config: PruneConfig) -> tuple[float, float]:
        if self.train_steps is not None:
            config = replace(config, train_steps=self.train_steps)
        init = initialize_mask(self.eapig, config.start_edge_sparsity,
                               self.params.topology.num_layers)
        mask, _ = train(self.params, self.train_data, config, init)
        scores = prune_scores(self.params, mask, self.train_data, self.eapig, config.signs_from_eapig)
        curve = Ev.score_curve(self.params, scores, self.val_data)
        return Ev.cpr(curve), Ev.cmd(curve)


def prune_scores(params, mask, batch, eapig: EdgeScoreMap, from_eapig: bool) -> EdgeScoreMap:
    if from_eapig:
        return signs_from_eapig(mask, eapig)
    return z_score_attribution(params, mask, batch, M.KL_DIV)
