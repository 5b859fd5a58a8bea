"""Signed scores from trained (unsigned) pruning masks."""

from __future__ import annotations

import numpy as np

from . import model as M
from .data import Batch
from .pruning import effective_mask
from .scores import EdgeScoreMap
from .warmstart import MaskParams

S_ENS = "s-ens"


def signs_from_eapig(mask: MaskParams, base: EdgeScoreMap) -> EdgeScoreMap:
    """``sign(base) * keep``; a zero base score counts as positive."""
    base = base.aligned_to(mask.edges)
    sign = np.where(base.values < 0, -1.0, 1.0)
    meta = {"metric": base.metadata.get("metric", "none"), "n": base.metadata.get("n", 0),
            "signs": "eapig"}
    return EdgeScoreMap(S_ENS, mask.edges, sign * mask.keep(), meta)


def z_score_attribution(params: M.ModelParams, mask: MaskParams, batch: Batch,
                        kind: str = M.KL_DIV) -> EdgeScoreMap:
    """Keep value signed by the mask gradient of the metric.

    The circuit runs at the deterministic gates. An edge is useful when
    raising its gate lowers KL, or raises LogitDiff.
    """
    if len(batch) == 0:
        raise ValueError("z-score attribution needs a nonempty batch")
    topo = params.topology
    if mask.edges != topo.edges:
        raise ValueError("mask does not match the model's edges")
    keep = mask.keep()
    layer_keep = mask.layer_keep() if len(mask.layer_log_alpha) else None
    z = effective_mask(topo, keep, layer_keep)
    grads = M.gradients(params, batch, M.EDGE_MASK, kind, z=z)
    g = np.array([grads[e] for e in topo.edges])
    direction = -1.0 if kind == M.KL_DIV else 1.0
    values = direction * np.sign(g) * keep
    return EdgeScoreMap(S_ENS, topo.edges, values,
                        {"metric": kind, "n": len(batch), "signs": "zscore"})
