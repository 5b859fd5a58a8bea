"""Per-edge attribution: exact edge patching and its gradient approximations.

All methods share one sign convention: a score is the drop in the metric
caused by patching the edge to its counterfactual value,
``M(clean) - M(patched)``, so positive scores mark edges that support the
behaviour. The gradient methods approximate it as
``(y_src - y_ref_src) . dM/d(input of dst)``.
"""

from __future__ import annotations

import numpy as np

from . import model as M
from .data import Batch
from .scores import EdgeScoreMap

EXACT = "exact"
EAP = "eap"
EAP_IG_INPUTS = "eap-ig-inputs"
EAP_IG_ACTIVATIONS = "eap-ig-activations"
METHODS = (EXACT, EAP, EAP_IG_INPUTS, EAP_IG_ACTIVATIONS)


def _check_batch(batch: Batch):
    if len(batch) == 0:
        raise ValueError("attribution needs a nonempty batch")


def _check_steps(m: int):
    if int(m) < 1:
        raise ValueError(f"integrated-gradient step count must be >= 1, got {m}")


def ig_alphas(m: int) -> np.ndarray:
    """Midpoint interpolation weights ``(k - 0.5) / m`` for ``k = 1..m``."""
    return (np.arange(1, m + 1) - 0.5) / m


def _edge_scores(params: M.ModelParams, clean: M.Trace, ref: M.Trace, grads) -> np.ndarray:
    topo = params.topology
    out = np.empty(topo.num_edges)
    for e in range(topo.num_edges):
        s, d = topo.edge_src[e], topo.edge_dst[e]
        out[e] = np.sum((clean.outputs[s] - ref.outputs[s]) * grads[d])
    return out


def exact_patching(params: M.ModelParams, batch: Batch, kind: str = M.LOGIT_DIFF) -> EdgeScoreMap:
    """Oracle: one masked forward per edge with only that edge patched."""
    _check_batch(batch)
    topo = params.topology
    clean = M.run(params, batch.clean)
    ref = M.run(params, batch.corrupt).cache
    base = M.metric(clean.logits, clean.logits, kind, batch.answer, batch.foil)
    values = np.empty(topo.num_edges)
    z = np.ones(topo.num_edges)
    for e in range(topo.num_edges):
        z[e] = 0.0
        patched = M.run(params, batch.clean, z=z, reference=ref)
        values[e] = base - M.metric(patched.logits, clean.logits, kind, batch.answer, batch.foil)
        z[e] = 1.0
    return EdgeScoreMap.for_topology(EXACT, topo, values, metric=kind, n=len(batch))


def eap(params: M.ModelParams, batch: Batch, kind: str = M.LOGIT_DIFF) -> EdgeScoreMap:
    """Activation difference times the gradient at the clean input."""
    _check_batch(batch)
    clean = M.run(params, batch.clean)
    ref = M.run(params, batch.corrupt)
    ct = M.metric_cotangent(clean.logits, clean.logits, kind, batch.answer, batch.foil)
    grads, _ = M.backward(params, clean, ct)
    values = _edge_scores(params, clean, ref, grads)
    return EdgeScoreMap.for_topology(EAP, params.topology, values, metric=kind, n=len(batch))


def eap_ig_inputs(params: M.ModelParams, batch: Batch, m: int = 5,
                  kind: str = M.LOGIT_DIFF) -> EdgeScoreMap:
    """EAP with gradients averaged along the corrupted-to-clean embedding path."""
    _check_batch(batch)
    _check_steps(m)
    clean = M.run(params, batch.clean)
    ref = M.run(params, batch.corrupt)
    e_clean, e_ref = clean.outputs[0], ref.outputs[0]
    n = len(params.topology.nodes)
    acc = [None] + [np.zeros_like(e_clean) for _ in range(n - 1)]
    for alpha in ig_alphas(m):
        point = M.run(params, input_embedding=e_ref + alpha * (e_clean - e_ref))
        ct = M.metric_cotangent(point.logits, clean.logits, kind, batch.answer, batch.foil)
        grads, _ = M.backward(params, point, ct)
        for i in range(1, n):
            acc[i] += grads[i]
    acc = [None] + [g / m for g in acc[1:]]
    values = _edge_scores(params, clean, ref, acc)
    return EdgeScoreMap.for_topology(EAP_IG_INPUTS, params.topology, values, metric=kind,
                                     n=len(batch), ig_steps=m, ig_points="midpoint")


def eap_ig_activations(params: M.ModelParams, batch: Batch, m: int = 5,
                       kind: str = M.LOGIT_DIFF) -> EdgeScoreMap:
    """EAP with each node's gradient averaged along its own activation path.

    For node ``i`` the summed input is pinned to the interpolation of the
    cached corrupted and clean inputs, the rest of the model runs downstream
    of it, and the gradient at ``i`` is averaged over the ``m`` points.
    """
    _check_batch(batch)
    _check_steps(m)
    topo = params.topology
    clean = M.run(params, batch.clean)
    ref = M.run(params, batch.corrupt)
    n = len(topo.nodes)
    acc: list = [None] * n
    for i in range(1, n):
        x_clean, x_ref = clean.inputs[i], ref.inputs[i]
        g_sum = np.zeros_like(x_clean)
        for alpha in ig_alphas(m):
            point = M.run(params, batch.clean, node_inputs={i: x_ref + alpha * (x_clean - x_ref)})
            ct = M.metric_cotangent(point.logits, clean.logits, kind, batch.answer, batch.foil)
            grads, _ = M.backward(params, point, ct)
            g_sum += grads[i]
        acc[i] = g_sum / m
    values = _edge_scores(params, clean, ref, acc)
    return EdgeScoreMap.for_topology(EAP_IG_ACTIVATIONS, topo, values, metric=kind,
                                     n=len(batch), ig_steps=m, ig_points="midpoint")


def ifr_normalize(scores: EdgeScoreMap) -> EdgeScoreMap:
    """Absolute scores rescaled so each node's incoming edges sum to one.

    A node whose incoming scores are all zero gets the uniform ``1/deg``.
    """
    values = np.abs(scores.values)
    out = np.empty_like(values)
    groups: dict = {}
    for k, e in enumerate(scores.edges):
        groups.setdefault(e.dst, []).append(k)
    for idx in groups.values():
        idx = np.array(idx)
        total = values[idx].sum()
        out[idx] = values[idx] / total if total > 0 else 1.0 / len(idx)
    return scores.replace(values=out, method=f"{scores.method}+ifr", normalized=True)


def attribute(params: M.ModelParams, batch: Batch, method: str, m: int = 5,
              kind: str = M.LOGIT_DIFF) -> EdgeScoreMap:
    if method == EXACT:
        return exact_patching(params, batch, kind)
    if method == EAP:
        return eap(params, batch, kind)
    if method == EAP_IG_INPUTS:
        return eap_ig_inputs(params, batch, m, kind)
    if method == EAP_IG_ACTIVATIONS:
        return eap_ig_activations(params, batch, m, kind)
    raise ValueError(f"unknown attribution method {method!r}")
