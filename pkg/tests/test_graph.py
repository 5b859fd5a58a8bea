from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuit_ens.graph import ATTN, MLP, OUTPUT, EdgeId, GraphTopology, NodeId, TopologyError

import oracles


class TestNodeId:
    @pytest.mark.parametrize("text", ["input", "logits", "a0.h0", "a3.h12", "m0", "m7"])
    def test_round_trip(self, text):
        assert str(NodeId.parse(text)) == text

    @pytest.mark.parametrize("text", ["", "a1", "h0", "m", "a0.h", "mlp0", "Input"])
    def test_rejects_garbage(self, text):
        with pytest.raises(TopologyError):
            NodeId.parse(text)

    def test_rendering_is_injective(self):
        topo = GraphTopology(3, 4, 4, 3, 8)
        names = [str(n) for n in topo.nodes]
        assert len(set(names)) == len(names)


class TestEdgeId:
    def test_round_trip(self):
        e = EdgeId.parse("a0.h1->m1")
        assert e.src == NodeId(ATTN, 0, 1) and e.dst == NodeId(MLP, 1)
        assert str(e) == "a0.h1->m1"

    def test_missing_arrow(self):
        with pytest.raises(TopologyError):
            EdgeId.parse("a0.h1 m1")


class TestTopology:
    def test_default_edge_set_matches_rule(self, topo):
        assert topo.num_edges == 26
        assert list(topo.edge_names) == oracles.edge_names(2, 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4))
    def test_edge_count_formula(self, layers, heads):
        topo = GraphTopology(layers, heads, 2, 2, 4)
        assert topo.num_edges == oracles.count_edges(layers, heads)
        assert set(topo.edge_names) == set(oracles.edge_names(layers, heads))

    def test_sources_strictly_upstream(self, topo):
        for e in topo.edges:
            assert topo.node_index[e.src] < topo.node_index[e.dst]
            if e.src.kind == ATTN and e.dst.kind == ATTN:
                assert e.src.layer < e.dst.layer

    def test_layer_groups_partition(self, topo):
        groups = set(topo.layer_of_edge)
        assert groups == set(range(topo.num_layers + 1))
        out = [e for e, g in zip(topo.edges, topo.layer_of_edge) if g == topo.num_layers]
        assert all(e.dst.kind == OUTPUT for e in out)
        assert len(out) == len(topo.nodes) - 1

    def test_incoming_outgoing_consistent(self, topo):
        for k, (s, d) in enumerate(zip(topo.edge_src, topo.edge_dst)):
            assert k in topo.outgoing[s] and k in topo.incoming[d]
        assert topo.incoming[0] == ()
        assert topo.outgoing[-1] == ()

    def test_edge_lookup(self, topo):
        assert topo.edge("input->logits") in topo.edge_index
        with pytest.raises(TopologyError):
            topo.edge("a1.h0->a1.h1")

    @pytest.mark.parametrize("kwargs", [dict(num_layers=0), dict(num_heads=0), dict(d_model=0),
                                        dict(seq_len=0), dict(vocab=1)])
    def test_invalid_dimensions(self, kwargs):
        with pytest.raises(TopologyError):
            GraphTopology(**kwargs)

    def test_deterministic_order(self):
        assert GraphTopology(2, 3).edges == GraphTopology(2, 3).edges
