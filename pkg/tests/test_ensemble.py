from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuit_ens.attribution import EAP, EAP_IG_ACTIVATIONS, EAP_IG_INPUTS
from circuit_ens.ensemble import (HYBRID_ENS, MAX, MEAN, MIN, P_ENS, REDUCTIONS, WEIGHTED_MEAN,
                                  EnsembleConfigError, EnsembleSpec, make_submission, reduce)
from circuit_ens.graph import GraphTopology
from circuit_ens.scores import EdgeScoreMap, ScoreFormatError
from circuit_ens.signs import S_ENS

TOPO = GraphTopology()
vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=26, max_size=26)


def _map(values, name="x") -> EdgeScoreMap:
    return EdgeScoreMap.for_topology(name, TOPO, np.asarray(values, dtype=float))


def _spec(k, reduction=MEAN, weights=None):
    return EnsembleSpec([f"m{i}" for i in range(k)], reduction, weights)


def _four(seed):
    rng = np.random.default_rng(seed)
    return {name: _map(rng.normal(size=26), name) for name in (EAP, EAP_IG_INPUTS, EAP_IG_ACTIVATIONS, S_ENS)}


class TestReduce:
    def test_mean_example(self):
        out = reduce([_map(np.ones(26)), _map(np.full(26, 3.0))], _spec(2))
        assert np.all(out.values == 2.0)

    def test_max_idempotent(self):
        m = _map(np.linspace(-1, 1, 26))
        assert np.array_equal(reduce([m, m, m], _spec(3, MAX)).values, m.values)

    def test_weighted_mean(self):
        a, b = _map(np.zeros(26)), _map(np.ones(26))
        out = reduce([a, b], _spec(2, WEIGHTED_MEAN, [1.0, 3.0]))
        assert np.allclose(out.values, 0.75, atol=0)

    def test_signed_max_min(self):
        a, b = _map(np.full(26, -5.0)), _map(np.full(26, 1.0))
        assert np.all(reduce([a, b], _spec(2, MAX)).values == 1.0)
        assert np.all(reduce([a, b], _spec(2, MIN)).values == -5.0)

    def test_aligns_edge_order(self):
        a = _map(np.arange(26.0))
        b = a.aligned_to(TOPO.edges[::-1])
        assert np.array_equal(reduce([a, b], _spec(2)).values, a.values)

    def test_edge_set_mismatch(self):
        short = EdgeScoreMap("x", TOPO.edges[:-1], np.zeros(25))
        with pytest.raises(ScoreFormatError):
            reduce([_map(np.zeros(26)), short], _spec(2))

    def test_ifr_inputs(self):
        rng = np.random.default_rng(0)
        spec = EnsembleSpec(["a", "b"], MEAN, normalize_ifr=True)
        out = reduce([_map(rng.normal(size=26)), _map(rng.normal(size=26))], spec)
        assert out.normalized and np.all(out.values >= 0)
        for idx in TOPO.incoming[1:]:
            assert abs(out.values[list(idx)].sum() - 1.0) < 1e-12

    def test_count_mismatch(self):
        with pytest.raises(EnsembleConfigError):
            reduce([_map(np.zeros(26))] * 3, _spec(2))


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(inputs=["a"]), dict(inputs=["a", "b"], reduction="median"),
                                    dict(inputs=["a", "b"], reduction=WEIGHTED_MEAN),
                                    dict(inputs=["a", "b"], reduction=WEIGHTED_MEAN, weights=[1.0]),
                                    dict(inputs=["a", "b"], reduction=WEIGHTED_MEAN, weights=[1.0, -1.0]),
                                    dict(inputs=["a", "b"], reduction=WEIGHTED_MEAN, weights=[0.0, 0.0])])
    def test_invalid(self, kw):
        with pytest.raises(EnsembleConfigError):
            EnsembleSpec(**kw)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(vec, min_size=2, max_size=5), st.sampled_from(REDUCTIONS), st.randoms())
    def test_permutation_invariance(self, rows, reduction, rnd):
        maps = [_map(r) for r in rows]
        weights = [1.0] * len(maps)
        order = list(range(len(maps)))
        rnd.shuffle(order)
        a = reduce(maps, _spec(len(maps), reduction, weights))
        b = reduce([maps[i] for i in order], _spec(len(maps), reduction, weights))
        assert np.max(np.abs(a.values - b.values)) < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(vec, min_size=2, max_size=5))
    def test_bounds(self, rows):
        maps = [_map(r) for r in rows]
        k = len(maps)
        lo, mid, hi = (reduce(maps, _spec(k, r)).values for r in (MIN, MEAN, MAX))
        assert np.all(lo <= mid + 1e-12) and np.all(mid <= hi + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(vec, st.integers(2, 5), st.sampled_from(REDUCTIONS))
    def test_idempotence(self, row, k, reduction):
        m = _map(row)
        out = reduce([m] * k, _spec(k, reduction, [1.0] * k))
        assert np.max(np.abs(out.values - m.values)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.lists(vec, min_size=2, max_size=4))
    def test_mean_is_equal_weight_mean(self, rows):
        maps = [_map(r) for r in rows]
        k = len(maps)
        a = reduce(maps, _spec(k)).values
        b = reduce(maps, _spec(k, WEIGHTED_MEAN, [2.5] * k)).values
        assert np.max(np.abs(a - b)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.integers(-100, 100), min_size=26, max_size=26), min_size=2, max_size=4),
           st.sampled_from([MEAN, MAX, MIN]), st.sampled_from([0.5, 2.0, 4.0]))
    def test_positive_scaling(self, rows, reduction, c):
        maps = [_map(r) for r in rows]
        k = len(maps)
        base = reduce(maps, _spec(k, reduction)).values
        scaled = reduce([_map(np.asarray(r, dtype=float) * c) for r in rows], _spec(k, reduction)).values
        assert np.max(np.abs(scaled - c * base)) < 1e-9


class TestSubmission:
    def test_hybrid_identity(self):
        maps = _four(0)
        p = make_submission(P_ENS, maps).values
        h = make_submission(HYBRID_ENS, maps).values
        assert np.max(np.abs(h - (3 * p + maps[S_ENS].values) / 4)) < 1e-12

    def test_mean_absorption(self):
        maps = _four(1)
        p = make_submission(P_ENS, maps)
        maps[S_ENS] = p.replace(method=S_ENS)
        assert np.max(np.abs(make_submission(HYBRID_ENS, maps).values - p.values)) < 1e-12

    def test_p_ens_copies(self):
        m = _map(np.linspace(-3, 3, 26))
        out = make_submission(P_ENS, {EAP: m, EAP_IG_INPUTS: m, EAP_IG_ACTIVATIONS: m})
        assert np.max(np.abs(out.values - m.values)) < 1e-12
        assert out.method == P_ENS

    def test_s_ens_passthrough(self):
        maps = _four(2)
        assert np.array_equal(make_submission(S_ENS, maps).values, maps[S_ENS].values)

    @pytest.mark.parametrize("variant,drop", [(P_ENS, EAP), (HYBRID_ENS, S_ENS), (S_ENS, S_ENS)])
    def test_missing_input(self, variant, drop):
        maps = _four(3)
        del maps[drop]
        with pytest.raises(EnsembleConfigError):
            make_submission(variant, maps)

    def test_unknown_variant(self):
        with pytest.raises(EnsembleConfigError):
            make_submission("q-ens", _four(4))
