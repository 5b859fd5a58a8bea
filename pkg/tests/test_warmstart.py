from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from circuit_ens.graph import GraphTopology
from circuit_ens.scores import EdgeScoreMap
from circuit_ens.warmstart import (CLIP, FitError, MaskParams, abs_rank_normalize, cold_mask,
                                   deterministic_keep, fit_logistic_keep, hard_concrete_inverse,
                                   initialize_mask)

import oracles

TOPO = GraphTopology()
scores_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=26, max_size=26)


def _map(values) -> EdgeScoreMap:
    return EdgeScoreMap.for_topology("eap-ig-inputs", TOPO, np.asarray(values, dtype=float))


class TestRankNormalize:
    def test_three_edge_example(self):
        m = EdgeScoreMap.for_topology("x", TOPO, np.zeros(26))
        out = abs_rank_normalize(m.replace(values=np.arange(26.0)), groups=[0] * 23 + [1, 1, 1])
        assert out[-3:].tolist() == [0.0, 0.5, 1.0]
        out = abs_rank_normalize(m.replace(values=np.r_[np.zeros(23), -3.0, 1.0, 2.0]),
                                 groups=[0] * 23 + [1, 1, 1])
        assert out[-3:].tolist() == [1.0, 0.0, 0.5]

    def test_ties_share_mean_rank(self):
        out = abs_rank_normalize(_map(np.ones(26)), groups=[0] * 22 + [1] * 4)
        assert out[-4:].tolist() == [0.5] * 4

    def test_singleton_group(self):
        out = abs_rank_normalize(_map(np.arange(26.0)), groups=[0] * 25 + [1])
        assert out[-1] == 1.0

    def test_default_groups_are_destination_layers(self):
        out = abs_rank_normalize(_map(np.arange(26.0)))
        for g in set(TOPO.layer_of_edge):
            idx = [k for k, l in enumerate(TOPO.layer_of_edge) if l == g]
            assert out[idx].min() == 0.0 and out[idx].max() == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=26, max_size=26))
    def test_monotone_transform_invariance(self, values):
        v = np.asarray(values, dtype=float)
        base = abs_rank_normalize(_map(v))
        mag = np.abs(v)
        transformed = -np.sign(v) * (np.sqrt(mag) + mag ** 3)
        assert np.array_equal(abs_rank_normalize(_map(transformed)), base)


class TestLogisticFit:
    def test_symmetric_half(self):
        ranks = np.linspace(0, 1, 11)
        keep = fit_logistic_keep(ranks, 0.5)
        assert abs(keep.mean() - 0.5) < 1e-9
        b = oracles.logistic_offset(ranks, 0.5)
        assert abs(b - np.median(ranks)) < 1e-9

    @pytest.mark.parametrize("start", [0.8, 0.9, 0.95])
    def test_hits_target(self, start):
        ranks = abs_rank_normalize(_map(np.random.default_rng(0).normal(size=26)))
        keep = fit_logistic_keep(ranks, start)
        assert abs(keep.mean() - (1 - start)) < 1e-9
        b = oracles.logistic_offset(ranks, start)
        np.testing.assert_allclose(keep, expit(8.0 * (ranks - b)), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(scores_st, st.floats(0.05, 0.95))
    def test_monotone(self, values, start):
        ranks = abs_rank_normalize(_map(values))
        keep = fit_logistic_keep(ranks, start)
        order = np.argsort(ranks, kind="stable")
        assert np.all(np.diff(keep[order]) >= 0)

    @pytest.mark.parametrize("start", [-0.1, 1.0])
    def test_out_of_range(self, start):
        with pytest.raises(FitError):
            fit_logistic_keep(np.linspace(0, 1, 5), start)

    def test_infeasible(self):
        with pytest.raises(FitError):
            fit_logistic_keep(np.zeros(5), 1e-12, slope=1e-3)


class TestInverse:
    def test_half(self):
        assert abs(hard_concrete_inverse(0.5)) < 1e-15

    def test_one_keeps_edge(self):
        la = float(hard_concrete_inverse(1.0))
        assert la == pytest.approx(logit(1.1 / 1.2))
        assert deterministic_keep(la) == 1.0

    def test_zero_drops_edge(self):
        assert deterministic_keep(hard_concrete_inverse(0.0)) == 0.0

    @pytest.mark.parametrize("p", [0.05, 0.3, 0.7, 0.95])
    def test_round_trip(self, p):
        assert abs(deterministic_keep(hard_concrete_inverse(p)) - p) < 1e-6

    def test_clip(self):
        # without the stretch, p = 1 would need logit(1 - 1e-9) ~ 20.7
        assert float(hard_concrete_inverse(1.0, l=0.0, r=1.0, delta=1e-9)) == CLIP
        assert float(hard_concrete_inverse(0.0, l=0.0, r=1.0, delta=1e-9)) == -CLIP


class TestInitializeMask:
    @pytest.mark.parametrize("start", [0.8, 0.9, 0.95])
    def test_calibrated(self, start):
        mask = initialize_mask(_map(np.random.default_rng(1).normal(size=26)), start)
        assert abs(mask.keep().mean() - (1 - start)) < 1e-6
        assert np.all(np.abs(mask.log_alpha) <= CLIP)

    def test_uniform_scores(self):
        mask = initialize_mask(_map(np.full(26, 0.3)), 0.9)
        assert np.ptp(mask.log_alpha) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=26, max_size=26), st.floats(0.1, 10.0))
    def test_monotone_and_scale_invariant(self, values, scale):
        v = np.asarray(values, dtype=float)
        mask = initialize_mask(_map(v), 0.9)
        groups = np.asarray(TOPO.layer_of_edge)
        for g in np.unique(groups):
            idx = np.flatnonzero(groups == g)
            order = idx[np.argsort(np.abs(v[idx]), kind="stable")]
            assert np.all(np.diff(mask.log_alpha[order]) >= 0)
        assert np.array_equal(initialize_mask(_map(v * scale), 0.9).log_alpha, mask.log_alpha)

    def test_signs_and_layers(self):
        v = np.linspace(-1, 1, 26)
        mask = initialize_mask(_map(v), 0.9, num_layers=2)
        assert mask.signs.tolist() == np.where(v < 0, -1.0, 1.0).tolist()
        assert mask.layer_log_alpha.tolist() == [CLIP, CLIP]


class TestMaskFile:
    def test_round_trip(self, tmp_path):
        mask = initialize_mask(_map(np.random.default_rng(2).normal(size=26)), 0.8, 2)
        mask.save(tmp_path / "m.mask")
        back = MaskParams.load(tmp_path / "m.mask")
        assert back.edges == mask.edges
        assert back.log_alpha.tobytes() == mask.log_alpha.tobytes()
        assert back.layer_log_alpha.tolist() == mask.layer_log_alpha.tolist()
        assert back.signs.tolist() == mask.signs.tolist()
        assert back.dumps() == mask.dumps()

    def test_garbage(self):
        with pytest.raises(ValueError):
            MaskParams.loads("input->logits\tnope\t1\n")


def test_cold_mask_is_flat_and_seeded():
    a = cold_mask(TOPO.edges, 0.9, 2, seed=3)
    b = cold_mask(TOPO.edges, 0.9, 2, seed=3)
    assert np.array_equal(a.log_alpha, b.log_alpha)
    assert np.std(a.log_alpha) < 0.05
    assert abs(deterministic_keep(hard_concrete_inverse(0.1)) - 0.1) < 1e-9
