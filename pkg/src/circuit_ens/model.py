"""Toy differentiable model over a :class:`GraphTopology`.

Node inputs are sums of upstream node outputs, one term per edge. A masked run
mixes each edge's clean and reference (corrupted) activation,
``z * y_src + (1 - z) * y_ref_src``; ``z = 1`` everywhere is the plain forward.

Reverse-mode derivatives are accumulated by hand over the fixed node order, so
no tracing or autograd library is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .graph import ATTN, INPUT, MLP, OUTPUT, GraphTopology

LINEAR = "linear"
NONLINEAR = "nonlinear"
FAMILIES = (LINEAR, NONLINEAR)

LOGIT_DIFF = "logitdiff"
KL_DIV = "kl"
METRICS = (LOGIT_DIFF, KL_DIV)


class ModelInputError(ValueError):
    pass


@dataclass(frozen=True)
class HeadParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    pos_bias: np.ndarray  # [seq, seq] additive attention logits


@dataclass(frozen=True)
class MlpParams:
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    topology: GraphTopology
    family: str
    seed: int
    embed: np.ndarray  # [vocab, d]
    heads: tuple[tuple[HeadParams, ...], ...]
    mlps: tuple[MlpParams, ...]
    unembed: np.ndarray  # [d, vocab]

    def arrays(self):
        yield self.embed
        for layer in self.heads:
            for h in layer:
                yield from (h.w_q, h.w_k, h.w_v, h.w_o, h.b_o, h.pos_bias)
        for m in self.mlps:
            yield from (m.w_in, m.b_in, m.w_out, m.b_out)
        yield self.unembed

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a).tobytes() for a in self.arrays())


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def build_model(topology: GraphTopology, seed: int = 0, family: str = NONLINEAR,
                noise_scale: float = 0.3) -> ModelParams:
    """Random small-weight model; identical arguments give bit-identical params."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    d, T, V = topology.d_model, topology.seq_len, topology.vocab
    rng = np.random.default_rng(seed)
    s = noise_scale / np.sqrt(d)
    embed = rng.normal(0.0, 1.0, size=(V, d))
    heads = []
    for _ in range(topology.num_layers):
        layer = []
        for _ in range(topology.num_heads):
            layer.append(HeadParams(
                w_q=_frozen(rng.normal(0.0, s, size=(d, d))),
                w_k=_frozen(rng.normal(0.0, s, size=(d, d))),
                w_v=_frozen(rng.normal(0.0, s, size=(d, d))),
                w_o=_frozen(rng.normal(0.0, s, size=(d, d))),
                b_o=_frozen(np.zeros(d)),
                pos_bias=_frozen(rng.normal(0.0, 1.0, size=(T, T))),
            ))
        heads.append(tuple(layer))
    mlps = []
    for _ in range(topology.num_layers):
        mlps.append(MlpParams(
            w_in=_frozen(rng.normal(0.0, s, size=(d, d))),
            b_in=_frozen(rng.normal(0.0, s, size=d) * (family == NONLINEAR)),
            w_out=_frozen(rng.normal(0.0, s, size=(d, d))),
            b_out=_frozen(np.zeros(d)),
        ))
    unembed = rng.normal(0.0, s, size=(d, V))
    return ModelParams(topology, family, seed, _frozen(embed), tuple(heads), tuple(mlps),
                       _frozen(unembed))


def with_head(params: ModelParams, layer: int, head: int, **updates) -> ModelParams:
    heads = [list(l) for l in params.heads]
    heads[layer][head] = replace(heads[layer][head], **{k: _frozen(v) for k, v in updates.items()})
    return replace(params, heads=tuple(tuple(l) for l in heads))


def with_mlp(params: ModelParams, layer: int, **updates) -> ModelParams:
    mlps = list(params.mlps)
    mlps[layer] = replace(mlps[layer], **{k: _frozen(v) for k, v in updates.items()})
    return replace(params, mlps=tuple(mlps))


@dataclass
class ActivationCache:
    """Per-node outputs ``[batch, seq, d]`` for every non-Output node."""

    outputs: list[np.ndarray]

    def stacked(self) -> np.ndarray:
        return np.stack(self.outputs)


@dataclass
class Trace:
    inputs: list[np.ndarray | None]
    outputs: list[np.ndarray | None]
    logits: np.ndarray
    aux: list[dict] = field(default_factory=list)
    overridden: frozenset[int] = frozenset()

    @property
    def cache(self) -> ActivationCache:
        return ActivationCache(self.outputs[:-1])


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=axis, keepdims=True)


def _log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - np.max(x, axis=axis, keepdims=True)
    return x - np.log(np.sum(np.exp(x), axis=axis, keepdims=True))


def _check_tokens(params: ModelParams, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] != params.topology.seq_len:
        raise ModelInputError(f"expected tokens of shape [batch, {params.topology.seq_len}], "
                              f"got {tokens.shape}")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise ModelInputError("tokens must be integers")
    if tokens.min() < 0 or tokens.max() >= params.topology.vocab:
        raise ModelInputError(f"token out of vocabulary [0, {params.topology.vocab})")
    return tokens


def embed(params: ModelParams, tokens) -> np.ndarray:
    return params.embed[_check_tokens(params, tokens)]


def _attn_forward(p: HeadParams, x: np.ndarray, nonlinear: bool):
    T = x.shape[1]
    scores = np.broadcast_to(p.pos_bias, (x.shape[0], T, T)).copy()
    aux = {}
    if nonlinear:
        q, k = x @ p.w_q, x @ p.w_k
        scores = scores + q @ k.transpose(0, 2, 1) / np.sqrt(q.shape[-1])
        aux.update(q=q, k=k)
    causal = np.triu(np.ones((T, T), dtype=bool), 1)
    scores[:, causal] = -np.inf
    a = _softmax(scores)
    v = x @ p.w_v
    o = a @ v
    aux.update(a=a, v=v, o=o)
    return o @ p.w_o + p.b_o, aux


def _attn_backward(p: HeadParams, x: np.ndarray, aux: dict, dy: np.ndarray, nonlinear: bool):
    a, v = aux["a"], aux["v"]
    do = dy @ p.w_o.T
    dv = a.transpose(0, 2, 1) @ do
    dx = dv @ p.w_v.T
    if nonlinear:
        q, k = aux["q"], aux["k"]
        da = do @ v.transpose(0, 2, 1)
        ds = a * (da - np.sum(da * a, axis=-1, keepdims=True))
        ds = ds / np.sqrt(q.shape[-1])
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        dx = dx + dq @ p.w_q.T + dk @ p.w_k.T
    return dx


def _mlp_forward(p: MlpParams, x: np.ndarray, nonlinear: bool):
    pre = x @ p.w_in + p.b_in
    h = np.tanh(pre) if nonlinear else pre
    return h @ p.w_out + p.b_out, {"h": h}


def _mlp_backward(p: MlpParams, aux: dict, dy: np.ndarray, nonlinear: bool):
    dh = dy @ p.w_out.T
    if nonlinear:
        dh = dh * (1.0 - aux["h"] ** 2)
    return dh @ p.w_in.T


def run(params: ModelParams, tokens=None, *, z: np.ndarray | None = None,
        reference: ActivationCache | None = None, input_embedding: np.ndarray | None = None,
        node_inputs: Mapping[int, np.ndarray] | None = None) -> Trace:
    """Forward pass, optionally masked and/or with intervened values.

    ``z`` is one mixing weight per edge (requires ``reference``).
    ``input_embedding`` replaces the Input node output; ``node_inputs`` pins the
    summed input of the given node positions, with everything downstream
    recomputed.
    """
    topo = params.topology
    nonlinear = params.family == NONLINEAR
    if input_embedding is None:
        y0 = embed(params, tokens)
    else:
        y0 = np.asarray(input_embedding, dtype=np.float64)
    if z is not None:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (topo.num_edges,):
            raise ValueError(f"mask must have one value per edge ({topo.num_edges}), got {z.shape}")
        if reference is None:
            raise ValueError("masked forward needs a reference activation cache")
    node_inputs = dict(node_inputs or {})
    n = len(topo.nodes)
    inputs: list = [None] * n
    outputs: list = [None] * n
    aux: list = [None] * n
    outputs[0] = y0
    for i in range(1, n):
        node = topo.nodes[i]
        if i in node_inputs:
            x = np.asarray(node_inputs[i], dtype=np.float64)
        else:
            x = np.zeros_like(y0)
            for e in topo.incoming[i]:
                src = topo.edge_src[e]
                if z is None:
                    x = x + outputs[src]
                else:
                    ref = reference.outputs[src]
                    x = x + z[e] * outputs[src] + (1.0 - z[e]) * ref
        inputs[i] = x
        if node.kind == ATTN:
            outputs[i], aux[i] = _attn_forward(params.heads[node.layer][node.head], x, nonlinear)
        elif node.kind == MLP:
            outputs[i], aux[i] = _mlp_forward(params.mlps[node.layer], x, nonlinear)
    logits = inputs[-1] @ params.unembed
    return Trace(inputs, outputs, logits, aux, frozenset(node_inputs))


def forward(params: ModelParams, tokens) -> tuple[ActivationCache, np.ndarray]:
    trace = run(params, tokens)
    return trace.cache, trace.logits


def backward(params: ModelParams, trace: Trace, dlogits: np.ndarray, *,
             z: np.ndarray | None = None, reference: ActivationCache | None = None):
    """Reverse pass for a given cotangent on the logits.

    Returns ``(node_input_grads, mask_grad)``: the gradient wrt each node's
    summed input (``None`` for Input) and, for masked runs, the gradient wrt
    each edge's mixing weight summed over the batch.
    """
    topo = params.topology
    nonlinear = params.family == NONLINEAR
    n = len(topo.nodes)
    g_in: list = [None] * n
    g_in[-1] = dlogits @ params.unembed.T
    dz = np.zeros(topo.num_edges) if z is not None else None
    for i in range(n - 2, -1, -1):
        dy = np.zeros_like(trace.outputs[i])
        for e in topo.outgoing[i]:
            dst = topo.edge_dst[e]
            if dst in trace.overridden:
                continue
            g = g_in[dst]
            if z is None:
                dy += g
            else:
                dy += z[e] * g
                dz[e] = np.sum(g * (trace.outputs[i] - reference.outputs[i]))
        node = topo.nodes[i]
        if node.kind == ATTN:
            g_in[i] = _attn_backward(params.heads[node.layer][node.head], trace.inputs[i],
                                     trace.aux[i], dy, nonlinear)
        elif node.kind == MLP:
            g_in[i] = _mlp_backward(params.mlps[node.layer], trace.aux[i], dy, nonlinear)
    return g_in, dz


def _final(logits: np.ndarray) -> np.ndarray:
    return logits[:, -1, :] if logits.ndim == 3 else logits


def metric_per_example(logits_circuit, logits_model, kind: str, answer, foil) -> np.ndarray:
    """Per-example metric at the final position."""
    c = _final(np.asarray(logits_circuit, dtype=np.float64))
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite logits")
    if kind == LOGIT_DIFF:
        rows = np.arange(c.shape[0])
        return c[rows, np.asarray(answer)] - c[rows, np.asarray(foil)]
    if kind == KL_DIV:
        m = _final(np.asarray(logits_model, dtype=np.float64))
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite logits")
        logp, logq = _log_softmax(m), _log_softmax(c)
        return np.sum(np.exp(logp) * (logp - logq), axis=-1)
    raise ValueError(f"unknown metric {kind!r}")


def metric(logits_circuit, logits_model, kind: str, answer, foil) -> float:
    """Batch-mean LogitDiff or KL(model || circuit)."""
    return float(np.mean(metric_per_example(logits_circuit, logits_model, kind, answer, foil)))


def metric_cotangent(logits_circuit, logits_model, kind: str, answer, foil) -> np.ndarray:
    """d(batch-mean metric)/d(logits_circuit), same shape as the logits."""
    c = np.asarray(logits_circuit, dtype=np.float64)
    B = c.shape[0]
    out = np.zeros_like(c)
    rows = np.arange(B)
    if kind == LOGIT_DIFF:
        out[rows, -1, np.asarray(answer)] += 1.0 / B
        out[rows, -1, np.asarray(foil)] -= 1.0 / B
    elif kind == KL_DIV:
        q = _softmax(c[:, -1, :])
        p = _softmax(np.asarray(logits_model, dtype=np.float64)[:, -1, :])
        out[:, -1, :] = (q - p) / B
    else:
        raise ValueError(f"unknown metric {kind!r}")
    return out


NODE_INPUTS = "node_inputs"
EDGE_MASK = "edge_mask"


def gradients(params: ModelParams, batch, wrt: str = NODE_INPUTS, kind: str = LOGIT_DIFF,
              z: np.ndarray | None = None) -> dict:
    """Exact derivatives of the batch-mean metric.

    ``wrt=NODE_INPUTS`` differentiates the clean forward wrt each node's summed
    input (``{NodeId: [batch, seq, d]}``). ``wrt=EDGE_MASK`` differentiates the
    masked forward (corrupted reference, mask ``z``, default all ones) wrt each
    edge's mask value (``{EdgeId: float}``). KL is measured against the clean
    model.
    """
    topo = params.topology
    clean = run(params, batch.clean)
    if wrt == NODE_INPUTS:
        ct = metric_cotangent(clean.logits, clean.logits, kind, batch.answer, batch.foil)
        g, _ = backward(params, clean, ct)
        return {topo.nodes[i]: g[i] for i in range(1, len(topo.nodes))}
    if wrt == EDGE_MASK:
        ref = run(params, batch.corrupt).cache
        z = np.ones(topo.num_edges) if z is None else np.asarray(z, dtype=np.float64)
        masked = run(params, batch.clean, z=z, reference=ref)
        ct = metric_cotangent(masked.logits, clean.logits, kind, batch.answer, batch.foil)
        _, dz = backward(params, masked, ct, z=z, reference=ref)
        return dict(zip(topo.edges, dz.tolist()))
    raise ValueError(f"unknown gradient target {wrt!r}")
