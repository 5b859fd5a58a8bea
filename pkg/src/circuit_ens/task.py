"""Synthetic copy task with a planted ground-truth circuit.

Clean and corrupted prompts differ only in the first (answer-bearing) token.
The residual stream is split into a readable half (token embeddings,
unembedding) and a hidden half. Head ``a0.h0`` copies the first token into the
hidden half at the final position, the last-layer MLP decodes it back into the
readable half through a saturating tanh, and the unembedding reads token
identity. The planted path has one edge per layer group, every other weight
is small random noise.

Answer tokens carry distinct ``+-1`` codes, so every decoded coordinate sits
deep in the flat part of the tanh. The clean-point gradient through the
decoder is then nearly zero: plain EAP underrates the two upstream planted
edges while exact patching and the integrated-gradient variants do not.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .data import PairedExample
from .graph import GraphTopology

PLANTED_COPY = "planted_copy"
RANDOM = "random"
TASKS = (PLANTED_COPY, RANDOM)

# The tanh gain sets how far EAP's first-order estimate drifts from exact
# patching on the planted path.
COPY_GAIN = 1.0
MLP_IN_GAIN = 5.0
MLP_OUT_GAIN = 2.0
ATTN_FOCUS = 10.0
READOUT_GAIN = 1.0
BACKGROUND_SCALE = 0.3


class ConfigError(ValueError):
    pass


def read_kv(path: str | Path) -> dict[str, str]:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def write_kv(path: str | Path, values: dict) -> None:
    Path(path).write_text("".join(f"{k}={_fmt(v)}\n" for k, v in values.items()))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 2
    d_model: int = 8
    seq_len: int = 4
    vocab: int = 16
    seed: int = 0
    family: str = M.NONLINEAR
    task: str = PLANTED_COPY

    def topology(self) -> GraphTopology:
        return GraphTopology(self.layers, self.heads, self.d_model, self.seq_len, self.vocab)

    def build(self) -> M.ModelParams:
        if self.family not in M.FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.task == PLANTED_COPY:
            return planted_model(self.topology(), self.seed, self.family)
        if self.task == RANDOM:
            return M.build_model(self.topology(), self.seed, self.family)
        raise ConfigError(f"unknown task {self.task!r}")

    def save(self, path: str | Path) -> None:
        write_kv(path, asdict(self))

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        raw = read_kv(path)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in raw.items():
            kwargs[k] = v if k in ("family", "task") else int(v)
        return cls(**kwargs)


def planted_edge_names(topology: GraphTopology) -> tuple[str, ...]:
    last = topology.num_layers - 1
    return ("input->a0.h0", f"a0.h0->m{last}", f"m{last}->logits")


def planted_model(topology: GraphTopology, seed: int = 0, family: str = M.NONLINEAR,
                  noise_scale: float = BACKGROUND_SCALE) -> M.ModelParams:
    """Random base model with the copy circuit written over it."""
    if topology.num_layers < 2 or topology.seq_len < 2 or topology.d_model < 2:
        raise ConfigError("planted task needs >= 2 layers, seq_len >= 2 and d_model >= 2")
    params = M.build_model(topology, seed, family, noise_scale)
    d, T, last = topology.d_model, topology.seq_len, topology.num_layers - 1
    tok = d // 2
    hid = min(tok, d - tok)
    embed = np.array(params.embed)
    embed[:, tok:] = 0.0
    n_answers = max(2, topology.vocab // 2)
    if 2 ** hid >= n_answers:
        rng = np.random.default_rng([seed, 3])
        picks = rng.choice(2 ** hid, size=n_answers, replace=False)
        bits = (picks[:, None] >> np.arange(hid)) & 1
        embed[:n_answers, :hid] = 2.0 * bits - 1.0
    bias = np.array(params.heads[0][0].pos_bias)
    bias[T - 1] = 0.0
    bias[T - 1, 0] = ATTN_FOCUS
    to_hidden = np.zeros((d, d))
    to_hidden[np.arange(hid), tok + np.arange(hid)] = COPY_GAIN
    params = M.with_head(params, 0, 0, w_q=np.zeros((d, d)), w_k=np.zeros((d, d)),
                         w_v=to_hidden, w_o=np.eye(d), pos_bias=bias)
    decode_in = np.zeros((d, d))
    decode_in[tok + np.arange(hid), np.arange(hid)] = MLP_IN_GAIN
    decode_out = np.zeros((d, d))
    decode_out[np.arange(hid), np.arange(hid)] = MLP_OUT_GAIN
    params = M.with_mlp(params, last, w_in=decode_in, b_in=np.zeros(d), w_out=decode_out)
    unembed = READOUT_GAIN * embed.T
    return M.ModelParams(params.topology, params.family, params.seed, M._frozen(embed),
                         params.heads, params.mlps, M._frozen(unembed))


def planted_edges(topology: GraphTopology):
    return [topology.edge(e) for e in planted_edge_names(topology)]


def generate_examples(topology: GraphTopology, n: int, rng: np.random.Generator):
    """``n`` prompts ``[answer, fillers..., query]`` with a swapped-answer twin."""
    V, T = topology.vocab, topology.seq_len
    n_answers = max(2, V // 2)
    fillers = np.arange(n_answers, V - 1) if V - 1 > n_answers else np.arange(V)
    query = V - 1
    out = []
    for _ in range(n):
        a, b = rng.choice(n_answers, size=2, replace=False)
        middle = rng.choice(fillers, size=max(T - 2, 0)).tolist()
        tail = [query] if T >= 2 else []
        clean = (int(a), *map(int, middle), *tail)
        corrupt = (int(b), *map(int, middle), *tail)
        out.append(PairedExample(clean, corrupt, int(a), int(b)))
    return out


def generate_splits(topology: GraphTopology, n_train: int, n_val: int, n_test: int, seed: int):
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError("split sizes must be >= 1")
    rng = np.random.default_rng([seed, 1])
    return {
        "train": generate_examples(topology, n_train, rng),
        "val": generate_examples(topology, n_val, rng),
        "test": generate_examples(topology, n_test, rng),
    }
