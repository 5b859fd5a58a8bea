"""Attribution scores to hard-concrete log-alpha initialisation.

Pipeline: per-layer rank normalisation of ``|score|``, a logistic map of the
ranks whose mean keep probability hits ``1 - start_sparsity``, then the
inverse of the deterministic (median-noise) hard-concrete gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, logit
from scipy.stats import rankdata

from .graph import EdgeId
from .scores import EdgeScoreMap

EPS = 1e-6
TEMPERATURE = 2.0 / 3.0  # multiplies the logistic noise
STRETCH_L = -0.1
STRETCH_R = 1.1
CLIP = 10.0
INVERSE_DELTA = 1e-6
LOGISTIC_SLOPE = 8.0


class FitError(ValueError):
    pass


@dataclass
class MaskParams:
    edges: tuple[EdgeId, ...]
    log_alpha: np.ndarray
    layer_log_alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    signs: np.ndarray | None = None
    eps: float = EPS
    temperature: float = TEMPERATURE
    l: float = STRETCH_L
    r: float = STRETCH_R
    clip: float = CLIP

    def __post_init__(self):
        self.edges = tuple(self.edges)
        self.log_alpha = np.asarray(self.log_alpha, dtype=np.float64)
        self.layer_log_alpha = np.asarray(self.layer_log_alpha, dtype=np.float64)
        if self.log_alpha.shape != (len(self.edges),):
            raise ValueError("log_alpha must hold one value per edge")
        if self.signs is None:
            self.signs = np.ones(len(self.edges))
        self.signs = np.asarray(self.signs, dtype=np.float64)

    def copy(self) -> "MaskParams":
        return replace(self, log_alpha=self.log_alpha.copy(),
                       layer_log_alpha=self.layer_log_alpha.copy(), signs=self.signs.copy())

    def keep(self) -> np.ndarray:
        """Deterministic gate value of every edge."""
        return deterministic_keep(self.log_alpha, self.l, self.r)

    def layer_keep(self) -> np.ndarray:
        return deterministic_keep(self.layer_log_alpha, self.l, self.r)

    def dumps(self) -> str:
        lines = [f"#eps={self.eps!r} temperature={self.temperature!r} l={self.l!r} "
                 f"r={self.r!r} clip={self.clip!r}"]
        lines.extend(f"#layer={i} log_alpha={float(v)!r}" for i, v in enumerate(self.layer_log_alpha))
        lines.extend(f"{e}\t{float(a)!r}\t{int(s):+d}"
                     for e, a, s in zip(self.edges, self.log_alpha, self.signs))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "MaskParams":
        consts: dict = {}
        layers: dict[int, float] = {}
        edges, alphas, signs = [], [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                kv = dict(tok.split("=", 1) for tok in line[1:].split())
                if "layer" in kv:
                    layers[int(kv["layer"])] = float(kv["log_alpha"])
                else:
                    consts.update({k: float(v) for k, v in kv.items()})
                continue
            name, alpha, sign = line.split("\t")
            edges.append(EdgeId.parse(name))
            alphas.append(float(alpha))
            signs.append(float(sign))
        layer_vals = np.array([layers[i] for i in sorted(layers)], dtype=np.float64)
        return cls(tuple(edges), np.array(alphas), layer_vals, np.array(signs), **consts)

    @classmethod
    def load(cls, path: str | Path) -> "MaskParams":
        return cls.loads(Path(path).read_text())


def deterministic_keep(log_alpha, l: float = STRETCH_L, r: float = STRETCH_R):
    """Gate value at median noise ``u = 0.5``: ``clip(sigmoid(log_alpha)(r-l)+l, 0, 1)``."""
    s = expit(np.asarray(log_alpha, dtype=np.float64))
    return np.clip(s * r + (1.0 - s) * l, 0.0, 1.0)


def abs_rank_normalize(scores: EdgeScoreMap, groups=None) -> np.ndarray:
    """Rank of ``|score|`` within each group, scaled to ``[0, 1]``.

    Groups default to the destination layer of each edge. Ties share their
    mean rank; a singleton group maps to 1.
    """
    if groups is None:
        groups = [_edge_group(e) for e in scores.edges]
    groups = np.asarray(groups)
    mags = np.abs(scores.values)
    out = np.empty(len(mags))
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        if len(idx) == 1:
            out[idx] = 1.0
            continue
        out[idx] = (rankdata(mags[idx], method="average") - 1.0) / (len(idx) - 1)
    return out


def _edge_group(edge: EdgeId) -> int:
    # Output edges sort after every layer.
    return edge.dst.layer if edge.dst.layer >= 0 else 1 << 30


def fit_logistic_keep(ranks, start_sparsity: float, slope: float = LOGISTIC_SLOPE,
                      tol: float = 1e-10) -> np.ndarray:
    """Keep probabilities ``sigmoid(slope * (rank - b))`` with mean ``1 - start_sparsity``.

    The offset ``b`` is found by bisection on ``[-10, 10]``.
    """
    if not 0.0 <= start_sparsity < 1.0:
        raise FitError(f"start sparsity must lie in [0, 1), got {start_sparsity}")
    ranks = np.asarray(ranks, dtype=np.float64)
    target = 1.0 - start_sparsity

    def mean_keep(b):
        return float(np.mean(expit(slope * (ranks - b))))

    lo, hi = -10.0, 10.0
    if not mean_keep(hi) - tol <= target <= mean_keep(lo) + tol:
        raise FitError(f"mean keep {target} unreachable with slope {slope}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gap = mean_keep(mid) - target
        if abs(gap) < tol:
            break
        if gap > 0:
            lo = mid
        else:
            hi = mid
    return expit(slope * (ranks - mid))


def hard_concrete_inverse(p, l: float = STRETCH_L, r: float = STRETCH_R,
                          delta: float = INVERSE_DELTA, clip: float = CLIP):
    """log-alpha whose deterministic gate value is ``p``."""
    s = np.clip((np.asarray(p, dtype=np.float64) - l) / (r - l), delta, 1.0 - delta)
    return np.clip(logit(s), -clip, clip)


def initialize_mask(scores: EdgeScoreMap, start_sparsity: float, num_layers: int | None = None,
                    slope: float = LOGISTIC_SLOPE) -> MaskParams:
    """Warm-start mask from attribution scores; layer gates start fully open."""
    ranks = abs_rank_normalize(scores)
    keep = fit_logistic_keep(ranks, start_sparsity, slope)
    log_alpha = hard_concrete_inverse(keep)
    if num_layers is None:
        num_layers = 1 + max((e.dst.layer for e in scores.edges), default=-1)
    signs = np.where(scores.values < 0, -1.0, 1.0)
    return MaskParams(scores.edges, log_alpha, np.full(num_layers, CLIP), signs)


def cold_mask(edges, start_sparsity: float, num_layers: int, seed: int = 0,
              jitter: float = 0.01) -> MaskParams:
    """Baseline init: one shared log-alpha for ``1 - start_sparsity`` plus small noise."""
    base = float(hard_concrete_inverse(1.0 - start_sparsity))
    rng = np.random.default_rng([seed, 7])
    log_alpha = base + jitter * rng.standard_normal(len(edges))
    return MaskParams(tuple(edges), log_alpha, np.full(num_layers, CLIP))
