from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuit_ens import attribution as A
from circuit_ens import model as M
from circuit_ens.data import Batch
from circuit_ens.graph import GraphTopology
from circuit_ens.scores import EdgeScoreMap
from circuit_ens.task import ModelConfig, generate_splits, planted_edge_names
from conftest import random_batch

import oracles

METHODS = [A.EAP, A.EAP_IG_INPUTS, A.EAP_IG_ACTIVATIONS]


def _corr(a: EdgeScoreMap, b: EdgeScoreMap) -> float:
    return float(np.corrcoef(a.values, b.values)[0, 1])


def _split(cfg: ModelConfig, n: int = 40) -> tuple[M.ModelParams, Batch]:
    params = cfg.build()
    return params, Batch.from_examples(generate_splits(params.topology, n, 1, 1, cfg.seed)["train"])


class TestExactPatching:
    def test_matches_loop_oracle(self, nonlinear_model, batch):
        exs = batch.examples()[:2]
        scores = A.exact_patching(nonlinear_model, Batch.from_examples(exs))
        for k, name in enumerate(nonlinear_model.topology.edge_names):
            expected = np.mean([oracles.patch_score(nonlinear_model, ex, name) for ex in exs])
            assert abs(scores.values[k] - expected) < 1e-10

    def test_dead_readout_scores_zero(self, topo, batch):
        params = M.build_model(topo, 0, M.NONLINEAR)
        params = M.with_mlp(params, 0, w_out=np.zeros((topo.d_model, topo.d_model)))
        scores = A.exact_patching(params, batch)
        # m0 writes nothing, so none of its outgoing edges can matter
        for e in topo.edges:
            if str(e.src) == "m0":
                assert scores[e] == 0.0

    def test_planted_edges_top_k(self, planted):
        params, splits = planted
        scores = A.exact_patching(params, splits["train"])
        k = len(planted_edge_names(params.topology))
        top = {str(params.topology.edges[i]) for i in np.argsort(-np.abs(scores.values))[:k]}
        assert top == set(planted_edge_names(params.topology))


class TestCommonProperties:
    @pytest.mark.parametrize("method", [A.EXACT] + METHODS)
    def test_zero_counterfactual(self, nonlinear_model, batch, method):
        same = Batch(batch.clean, batch.clean.copy(), batch.answer, batch.foil)
        assert np.all(A.attribute(nonlinear_model, same, method).values == 0.0)

    @pytest.mark.parametrize("method", [A.EXACT] + METHODS)
    def test_batch_additivity(self, nonlinear_model, batch, method):
        whole = A.attribute(nonlinear_model, batch, method).values
        parts = np.mean([A.attribute(nonlinear_model, batch.take([i]), method).values
                         for i in range(len(batch))], axis=0)
        assert np.max(np.abs(whole - parts)) < 1e-12

    @pytest.mark.parametrize("method", [A.EAP_IG_INPUTS, A.EAP_IG_ACTIVATIONS])
    def test_zero_steps_rejected(self, linear_model, batch, method):
        with pytest.raises(ValueError):
            A.attribute(linear_model, batch, method, m=0)

    def test_empty_batch_rejected(self, linear_model):
        with pytest.raises(ValueError):
            A.eap(linear_model, Batch(np.zeros((0, 4), int), np.zeros((0, 4), int),
                                      np.zeros(0, int), np.zeros(0, int)))

    def test_unknown_method(self, linear_model, batch):
        with pytest.raises(ValueError):
            A.attribute(linear_model, batch, "saliency")

    def test_ig_midpoints(self):
        assert A.ig_alphas(1).tolist() == [0.5]
        assert A.ig_alphas(4).tolist() == [0.125, 0.375, 0.625, 0.875]


class TestLinearFamily:
    @pytest.mark.parametrize("method", METHODS)
    def test_equals_exact(self, linear_model, batch, method):
        exact = A.exact_patching(linear_model, batch)
        got = A.attribute(linear_model, batch, method)
        assert np.max(np.abs(got.values - exact.values)) < 1e-9

    @pytest.mark.parametrize("method", [A.EAP_IG_INPUTS, A.EAP_IG_ACTIVATIONS])
    def test_independent_of_steps(self, linear_model, batch, method):
        ref = A.attribute(linear_model, batch, method, m=1).values
        for m in (5, 50):
            assert np.max(np.abs(A.attribute(linear_model, batch, method, m=m).values - ref)) < 1e-12

    def test_metric_affine_in_edge_activation(self, linear_model, batch):
        topo = linear_model.topology
        ref = M.run(linear_model, batch.corrupt).cache
        e = topo.edge_index[topo.edge("a0.h1->m1")]
        vals = []
        for w in (0.0, 0.5, 1.0, 2.0):
            z = np.ones(topo.num_edges)
            z[e] = w
            logits = M.run(linear_model, batch.clean, z=z, reference=ref).logits
            vals.append(M.metric(logits, None, M.LOGIT_DIFF, batch.answer, batch.foil))
        slope = vals[2] - vals[0]
        assert abs(vals[1] - (vals[0] + 0.5 * slope)) < 1e-12
        assert abs(vals[3] - (vals[0] + 2.0 * slope)) < 1e-12


class TestNonlinearFamily:
    def test_ig_inputs_converges(self, nonlinear_model, batch):
        at = {m: A.eap_ig_inputs(nonlinear_model, batch, m).values for m in (4, 64, 128)}
        far = np.max(np.abs(at[4] - at[128]))
        near = np.max(np.abs(at[64] - at[128]))
        assert near < far

    def test_eap_correlation_on_default_toy(self):
        params, b = _split(ModelConfig(seed=0, task="random"))
        assert _corr(A.eap(params, b), A.exact_patching(params, b)) > 0.9

    def test_ig_activations_at_least_eap_majority(self):
        wins = 0
        for seed in range(10):
            params, b = _split(ModelConfig(seed=seed))
            exact = A.exact_patching(params, b)
            wins += _corr(A.eap_ig_activations(params, b), exact) >= _corr(A.eap(params, b), exact)
        assert wins >= 6

    def test_planted_saturation_hurts_eap_only(self, planted):
        params, splits = planted
        b = splits["train"]
        exact = A.exact_patching(params, b)
        assert _corr(A.eap_ig_inputs(params, b), exact) > 0.99
        assert _corr(A.eap_ig_activations(params, b), exact) > 0.99
        assert _corr(A.eap(params, b), exact) < 0.9


class TestIfr:
    def test_two_edge_example(self):
        topo = GraphTopology(1, 1, 2, 2, 4)
        vals = np.zeros(topo.num_edges)
        inc = topo.incoming[topo.node_index[topo.nodes[2]]]  # m0: input, a0.h0
        vals[list(inc)] = [1.0, -3.0]
        out = A.ifr_normalize(EdgeScoreMap.for_topology("eap", topo, vals))
        assert out.values[list(inc)].tolist() == [0.25, 0.75]
        assert out.method == "eap+ifr" and out.normalized

    def test_zero_inflow_uniform(self, topo):
        out = A.ifr_normalize(EdgeScoreMap.for_topology("x", topo, np.zeros(topo.num_edges)))
        a1 = topo.node_index[topo.nodes[4]]
        assert len(topo.incoming[a1]) == 4
        assert out.values[list(topo.incoming[a1])].tolist() == [0.25] * 4

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=26, max_size=26),
           st.lists(st.booleans(), min_size=26, max_size=26))
    def test_simplex(self, values, zero):
        topo = GraphTopology()
        v = np.where(zero, 0.0, values)
        out = A.ifr_normalize(EdgeScoreMap.for_topology("x", topo, v))
        assert np.all(out.values >= 0)
        for idx in topo.incoming[1:]:
            assert abs(out.values[list(idx)].sum() - 1.0) < 1e-9
