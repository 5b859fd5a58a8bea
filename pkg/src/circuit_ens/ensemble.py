"""Parallel score fusion and the three submission variants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .attribution import EAP, EAP_IG_ACTIVATIONS, EAP_IG_INPUTS, ifr_normalize
from .scores import EdgeScoreMap, ScoreFormatError
from .signs import S_ENS

MEAN = "mean"
WEIGHTED_MEAN = "wmean"
MAX = "max"
MIN = "min"
REDUCTIONS = (MEAN, WEIGHTED_MEAN, MAX, MIN)

P_ENS = "p-ens"
HYBRID_ENS = "hybrid-ens"
VARIANTS = (S_ENS, P_ENS, HYBRID_ENS)
EAP_FAMILY = (EAP, EAP_IG_INPUTS, EAP_IG_ACTIVATIONS)


class EnsembleConfigError(ValueError):
    pass


@dataclass
class EnsembleSpec:
    inputs: Sequence[str]
    reduction: str = MEAN
    weights: Sequence[float] | None = None
    normalize_ifr: bool = False
    name: str = field(default="")

    def __post_init__(self):
        if len(self.inputs) < 2:
            raise EnsembleConfigError("an ensemble needs at least two inputs")
        if self.reduction not in REDUCTIONS:
            raise EnsembleConfigError(f"unknown reduction {self.reduction!r}")
        if self.reduction == WEIGHTED_MEAN:
            if self.weights is None or len(self.weights) != len(self.inputs):
                raise EnsembleConfigError("weighted mean needs one weight per input")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0) or w.sum() <= 0:
                raise EnsembleConfigError("weights must be nonnegative with a positive sum")


def reduce(maps: Sequence[EdgeScoreMap], spec: EnsembleSpec) -> EdgeScoreMap:
    """Per-edge reduction of signed scores."""
    if len(maps) != len(spec.inputs):
        raise EnsembleConfigError(f"spec lists {len(spec.inputs)} inputs, got {len(maps)} maps")
    first = maps[0]
    aligned = []
    for m in maps:
        if set(m.edges) != set(first.edges):
            raise ScoreFormatError("score maps cover different edge sets")
        m = m.aligned_to(first.edges)
        aligned.append(ifr_normalize(m) if spec.normalize_ifr else m)
    stack = np.stack([m.values for m in aligned])
    if spec.reduction == MEAN:
        values = stack.mean(axis=0)
    elif spec.reduction == WEIGHTED_MEAN:
        w = np.asarray(spec.weights, dtype=np.float64)
        values = (w[:, None] * stack).sum(axis=0) / w.sum()
    elif spec.reduction == MAX:
        values = stack.max(axis=0)
    else:
        values = stack.min(axis=0)
    name = spec.name or f"{spec.reduction}({','.join(spec.inputs)})"
    meta = {k: v for k, v in first.metadata.items() if k in ("metric", "n")}
    return EdgeScoreMap(name, first.edges, values, meta, normalized=spec.normalize_ifr)


def make_submission(variant: str, maps: Mapping[str, EdgeScoreMap]) -> EdgeScoreMap:
    """Assemble ``s-ens``, ``p-ens`` (mean of the EAP family) or ``hybrid-ens`` (mean of all four)."""
    if variant == S_ENS:
        needed = (S_ENS,)
    elif variant == P_ENS:
        needed = EAP_FAMILY
    elif variant == HYBRID_ENS:
        needed = EAP_FAMILY + (S_ENS,)
    else:
        raise EnsembleConfigError(f"unknown variant {variant!r}")
    missing = [k for k in needed if k not in maps]
    if missing:
        raise EnsembleConfigError(f"{variant} needs score maps for {missing}")
    if variant == S_ENS:
        return maps[S_ENS].replace(method=S_ENS)
    return reduce([maps[k] for k in needed], EnsembleSpec(list(needed), MEAN, name=variant))
