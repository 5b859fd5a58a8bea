"""Node/edge structure of the toy residual-stream model.

Every upstream node output feeds every downstream node input through its own
edge, so edges are the unit of patching, masking and attribution.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

INPUT = "input"
ATTN = "attn"
MLP = "mlp"
OUTPUT = "logits"

_HEAD_RE = re.compile(r"^a(\d+)\.h(\d+)$")
_MLP_RE = re.compile(r"^m(\d+)$")


class TopologyError(ValueError):
    pass


@dataclass(frozen=True, order=False)
class NodeId:
    kind: str
    layer: int = -1
    head: int = -1

    def __str__(self) -> str:
        if self.kind == INPUT:
            return "input"
        if self.kind == ATTN:
            return f"a{self.layer}.h{self.head}"
        if self.kind == MLP:
            return f"m{self.layer}"
        return "logits"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        if text == "input":
            return cls(INPUT)
        if text == "logits":
            return cls(OUTPUT)
        m = _HEAD_RE.match(text)
        if m:
            return cls(ATTN, int(m.group(1)), int(m.group(2)))
        m = _MLP_RE.match(text)
        if m:
            return cls(MLP, int(m.group(1)))
        raise TopologyError(f"unparseable node id {text!r}")

    def sort_key(self, num_layers: int) -> tuple[int, int, int]:
        if self.kind == INPUT:
            return (0, 0, 0)
        if self.kind == OUTPUT:
            return (num_layers + 1, 0, 0)
        return (self.layer + 1, 0 if self.kind == ATTN else 1, max(self.head, 0))


@dataclass(frozen=True)
class EdgeId:
    src: NodeId
    dst: NodeId

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}"

    @classmethod
    def parse(cls, text: str) -> "EdgeId":
        src, sep, dst = text.partition("->")
        if not sep:
            raise TopologyError(f"unparseable edge id {text!r}")
        return cls(NodeId.parse(src), NodeId.parse(dst))


@dataclass(frozen=True)
class GraphTopology:
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 8
    seq_len: int = 4
    vocab: int = 16
    nodes: tuple[NodeId, ...] = field(init=False, repr=False, compare=False)
    edges: tuple[EdgeId, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "d_model", "seq_len", "vocab"):
            if int(getattr(self, name)) < 1:
                raise TopologyError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.vocab < 2:
            raise TopologyError("vocab must hold at least an answer and a foil token")
        nodes = [NodeId(INPUT)]
        for layer in range(self.num_layers):
            nodes.extend(NodeId(ATTN, layer, h) for h in range(self.num_heads))
            nodes.append(NodeId(MLP, layer))
        nodes.append(NodeId(OUTPUT))
        edges = []
        for i, dst in enumerate(nodes):
            for src in nodes[:i]:
                if self.is_upstream(src, dst):
                    edges.append(EdgeId(src, dst))
        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "edges", tuple(edges))

    def is_upstream(self, src: NodeId, dst: NodeId) -> bool:
        """True when ``src`` may feed ``dst`` (heads of one layer run in parallel)."""
        ks, kd = src.sort_key(self.num_layers), dst.sort_key(self.num_layers)
        if ks[:2] == kd[:2]:
            return False
        return ks < kd

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def node_index(self) -> dict[NodeId, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def edge_index(self) -> dict[EdgeId, int]:
        return {e: i for i, e in enumerate(self.edges)}

    @cached_property
    def edge_names(self) -> tuple[str, ...]:
        return tuple(str(e) for e in self.edges)

    @cached_property
    def edge_src(self) -> tuple[int, ...]:
        return tuple(self.node_index[e.src] for e in self.edges)

    @cached_property
    def edge_dst(self) -> tuple[int, ...]:
        return tuple(self.node_index[e.dst] for e in self.edges)

    @cached_property
    def incoming(self) -> tuple[tuple[int, ...], ...]:
        """Edge indices entering each node, indexed by node position."""
        buckets: list[list[int]] = [[] for _ in self.nodes]
        for k, d in enumerate(self.edge_dst):
            buckets[d].append(k)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def outgoing(self) -> tuple[tuple[int, ...], ...]:
        buckets: list[list[int]] = [[] for _ in self.nodes]
        for k, s in enumerate(self.edge_src):
            buckets[s].append(k)
        return tuple(tuple(b) for b in buckets)

    def layer_of_node(self, node: NodeId) -> int:
        return self.num_layers if node.kind == OUTPUT else node.layer

    @cached_property
    def layer_of_edge(self) -> tuple[int, ...]:
        """Layer of each edge's destination; Output edges form group ``num_layers``."""
        return tuple(self.layer_of_node(e.dst) for e in self.edges)

    def edge(self, text: str) -> EdgeId:
        e = EdgeId.parse(text)
        if e not in self.edge_index:
            raise TopologyError(f"edge {text} is not part of this topology")
        return e
