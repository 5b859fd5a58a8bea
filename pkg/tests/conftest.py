from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from circuit_ens import model as M  # noqa: E402
from circuit_ens.data import Batch  # noqa: E402
from circuit_ens.graph import GraphTopology  # noqa: E402
from circuit_ens.task import ModelConfig, generate_splits  # noqa: E402


@pytest.fixture(scope="session")
def topo() -> GraphTopology:
    return GraphTopology(2, 2, 8, 4, 16)


def random_batch(topology: GraphTopology, n: int, seed: int) -> Batch:
    """Clean/corrupt pairs that differ in at least the first token."""
    rng = np.random.default_rng(seed)
    clean = rng.integers(0, topology.vocab, size=(n, topology.seq_len))
    corrupt = clean.copy()
    corrupt[:, 0] = (clean[:, 0] + 1 + rng.integers(0, topology.vocab - 1, size=n)) % topology.vocab
    flip = rng.random((n, topology.seq_len)) < 0.3
    corrupt[flip] = rng.integers(0, topology.vocab, size=int(flip.sum()))
    corrupt[:, 0] = np.where(corrupt[:, 0] == clean[:, 0], (clean[:, 0] + 1) % topology.vocab, corrupt[:, 0])
    answer = rng.integers(0, topology.vocab, size=n)
    foil = (answer + 1 + rng.integers(0, topology.vocab - 1, size=n)) % topology.vocab
    return Batch.from_arrays(clean, corrupt, answer, foil)


@pytest.fixture(scope="session")
def linear_model(topo):
    return M.build_model(topo, seed=0, family=M.LINEAR)


@pytest.fixture(scope="session")
def nonlinear_model(topo):
    return M.build_model(topo, seed=0, family=M.NONLINEAR)


@pytest.fixture(scope="session")
def batch(topo):
    return random_batch(topo, 6, seed=1)


@pytest.fixture(scope="session")
def planted():
    cfg = ModelConfig(seed=0)
    params = cfg.build()
    splits = generate_splits(params.topology, 40, 20, 40, cfg.seed)
    return params, {k: Batch.from_examples(v) for k, v in splits.items()}
