"""Hard-concrete edge pruning.

Each edge carries a stretched, clipped gate ``z`` driven by its log-alpha
and logistic noise. Training minimises ``KL(model || circuit)`` plus a
two-multiplier Lagrangian pulling expected sparsity toward a (warmed-up)
target; the multipliers climb with their own learning rates.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from . import model as M
from .data import Batch
from .task import ConfigError, read_kv, write_kv
from .warmstart import MaskParams, cold_mask

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def _gate(log_alpha, u, temperature, l, r):
    s = expit(temperature * logit(u) + log_alpha)
    # convex form keeps the symmetric point exact: s = 0.5 gives 0.5
    stretched = s * r + (1.0 - s) * l
    return np.clip(stretched, 0.0, 1.0), s, stretched


def sample_mask(mask: MaskParams, u=None, deterministic: bool = False) -> np.ndarray:
    """Gate values ``z = min(1, max(0, s*(r-l) + l))`` with ``s = sigmoid(T*logit(u) + log_alpha)``.

    ``u`` is one uniform draw per edge in ``(eps, 1 - eps)``, or a
    ``np.random.Generator`` to draw from; ``deterministic`` fixes ``u = 0.5``.
    """
    n = len(mask.log_alpha)
    if deterministic or u is None:
        u = np.full(n, 0.5)
    elif isinstance(u, np.random.Generator):
        u = u.uniform(mask.eps, 1.0 - mask.eps, size=n)
    z, _, _ = _gate(mask.log_alpha, np.asarray(u, dtype=np.float64), mask.temperature,
                    mask.l, mask.r)
    return z


def gate_and_grad(log_alpha, u, temperature=2.0 / 3.0, l=-0.1, r=1.1):
    """Gate value and its derivative wrt log-alpha (zero where clipped)."""
    z, s, stretched = _gate(np.asarray(log_alpha, dtype=np.float64), np.asarray(u, dtype=np.float64),
                            temperature, l, r)
    inside = (stretched > 0.0) & (stretched < 1.0)
    return z, np.where(inside, s * (1.0 - s) * (r - l), 0.0)


def expected_gate(log_alpha, temperature=2.0 / 3.0, l=-0.1, r=1.1, eps=1e-6):
    """``E_u[z]`` and ``dE_u[z]/dlog_alpha`` under ``u ~ Uniform(eps, 1 - eps)``.

    Integrates over ``t = logit(u)``. The gate is 1 above ``t_hi`` and 0
    below ``t_lo``; between them a 64-point Gauss-Legendre rule is exact to
    rounding for this smooth integrand.
    """
    a = np.atleast_1d(np.asarray(log_alpha, dtype=np.float64))
    t_min, t_max = logit(eps), logit(1.0 - eps)
    t_lo = np.clip((logit(-l / (r - l)) - a) / temperature, t_min, t_max)
    t_hi = np.clip((logit((1.0 - l) / (r - l)) - a) / temperature, t_min, t_max)
    half = 0.5 * (t_hi - t_lo)
    t = 0.5 * (t_hi + t_lo)[:, None] + half[:, None] * _GL_NODES[None, :]
    dens = expit(t) * expit(-t)
    s = expit(temperature * t + a[:, None])
    middle = half * np.sum(_GL_WEIGHTS * (s * r + (1.0 - s) * l) * dens, axis=1)
    slope = half * np.sum(_GL_WEIGHTS * s * (1.0 - s) * (r - l) * dens, axis=1)
    upper = expit(t_max) - expit(t_hi)
    norm = 1.0 - 2.0 * eps
    value, grad = (upper + middle) / norm, slope / norm
    if np.ndim(log_alpha) == 0:
        return float(value[0]), float(grad[0])
    return value, grad


def expected_sparsity(mask: MaskParams) -> float:
    """``1 -`` mean over edges of the noise-averaged gate value."""
    value, _ = expected_gate(mask.log_alpha, mask.temperature, mask.l, mask.r, mask.eps)
    return float(1.0 - np.mean(value))


def deterministic_sparsity(mask: MaskParams) -> float:
    return float(1.0 - np.mean(mask.keep()))


def effective_mask(topology, z_edge: np.ndarray, z_layer: np.ndarray | None) -> np.ndarray:
    """Edge gates times the gate of the destination layer (Output edges ungated)."""
    if z_layer is None or len(z_layer) == 0:
        return z_edge
    layer = np.asarray(topology.layer_of_edge)
    factor = np.ones_like(z_edge)
    inner = layer < topology.num_layers
    factor[inner] = np.asarray(z_layer)[layer[inner]]
    return z_edge * factor


def masked_forward(params: M.ModelParams, z, tokens, reference: M.ActivationCache) -> np.ndarray:
    """Logits when every edge mixes clean and reference activations by ``z``."""
    topo = params.topology
    if isinstance(z, dict):
        missing = [e for e in topo.edges if e not in z and str(e) not in z]
        if missing:
            raise ValueError(f"mask misses {len(missing)} edges, e.g. {missing[0]}")
        z = np.array([z[e] if e in z else z[str(e)] for e in topo.edges])
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (topo.num_edges,):
        raise ValueError(f"mask must cover all {topo.num_edges} edges")
    return M.run(params, tokens, z=z, reference=reference).logits


@dataclass
class PruneConfig:
    """Pruning hyperparameters; the defaults are the GPT-2 setting."""

    train_steps: int = 1000
    batch: int = 20
    warmup_type: str = "linear"
    warmup_steps: int = 250
    disable_node_loss: bool = True
    edge_lr: float = 0.4
    layer_lr: float = 0.03
    reg_edge_lr: float = 0.8
    reg_layer_lr: float = 0.001
    start_edge_sparsity: float = 0.90
    target_edge_sparsity: float = 0.975
    start_layer_sparsity: float = 0.0
    target_layer_sparsity: float = 0.69
    signs_from_eapig: bool = False
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in ("bool", bool) and isinstance(value, str):
                value = value.lower() in ("1", "true", "yes", "on")
            elif f.type in ("int", int):
                value = int(value)
            elif f.type in ("float", float):
                value = float(value)
            setattr(self, f.name, value)
        if self.train_steps < 1:
            raise ConfigError("train_steps must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        for name in ("edge_lr", "layer_lr", "reg_edge_lr", "reg_layer_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("start_edge_sparsity", "target_edge_sparsity",
                     "start_layer_sparsity", "target_layer_sparsity"):
            if not 0.0 <= getattr(self, name) <= 1.1:
                raise ConfigError(f"{name} must lie in [0, 1.1]")
        if self.warmup_type not in ("linear", "none"):
            raise ConfigError(f"unsupported warmup_type {self.warmup_type!r}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")

    def target_at(self, step: int) -> tuple[float, float]:
        """Edge and layer sparsity targets after ``step`` completed steps."""
        if self.warmup_type == "none" or self.warmup_steps == 0:
            frac = 1.0
        else:
            frac = min(1.0, step / self.warmup_steps)
        edge = self.start_edge_sparsity + frac * (self.target_edge_sparsity - self.start_edge_sparsity)
        layer = self.start_layer_sparsity + frac * (self.target_layer_sparsity - self.start_layer_sparsity)
        return edge, layer

    def save(self, path: str | Path) -> None:
        write_kv(path, asdict(self))

    @classmethod
    def load(cls, path: str | Path) -> "PruneConfig":
        raw = read_kv(path)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown prune config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class TrainTrace:
    task_loss: list[float] = field(default_factory=list)
    edge_penalty: list[float] = field(default_factory=list)
    layer_penalty: list[float] = field(default_factory=list)
    sparsity: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.task_loss)

    def to_csv(self) -> str:
        rows = ["step,task_loss,edge_penalty,layer_penalty,sparsity"]
        for i in range(len(self)):
            rows.append(f"{i},{self.task_loss[i]!r},{self.edge_penalty[i]!r},"
                        f"{self.layer_penalty[i]!r},{self.sparsity[i]!r}")
        return "\n".join(rows) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class Multipliers:
    edge: tuple[float, float] = (0.0, 0.0)
    layer: tuple[float, float] = (0.0, 0.0)


@dataclass
class LossParts:
    loss: float
    task: float
    edge_penalty: float
    layer_penalty: float
    edge_sparsity: float
    layer_sparsity: float
    grad_edge: np.ndarray
    grad_layer: np.ndarray


def _penalty(sparsity, target, lam):
    gap = sparsity - target
    return lam[0] * gap + lam[1] * gap * gap, lam[0] + 2.0 * lam[1] * gap


def loss_and_grad(params: M.ModelParams, batch: Batch, mask: MaskParams, *,
                  edge_target: float, layer_target: float, multipliers: Multipliers,
                  u_edge=None, u_layer=None, freeze_layers: bool = True,
                  model_logits=None, reference=None) -> LossParts:
    """Training loss and its gradient wrt every edge and layer log-alpha.

    ``u_edge``/``u_layer`` default to the deterministic ``u = 0.5``.
    """
    topo = params.topology
    n_e = topo.num_edges
    u_edge = np.full(n_e, 0.5) if u_edge is None else np.asarray(u_edge)
    args = (mask.temperature, mask.l, mask.r)
    z_edge, dz_edge = gate_and_grad(mask.log_alpha, u_edge, *args)
    n_l = len(mask.layer_log_alpha)
    if freeze_layers or n_l == 0:
        z_layer, dz_layer = np.ones(n_l), np.zeros(n_l)
    else:
        u_layer = np.full(n_l, 0.5) if u_layer is None else np.asarray(u_layer)
        z_layer, dz_layer = gate_and_grad(mask.layer_log_alpha, u_layer, *args)
    z = effective_mask(topo, z_edge, z_layer)

    if model_logits is None:
        model_logits = M.run(params, batch.clean).logits
    if reference is None:
        reference = M.run(params, batch.corrupt).cache
    trace = M.run(params, batch.clean, z=z, reference=reference)
    task = M.metric(trace.logits, model_logits, M.KL_DIV, batch.answer, batch.foil)
    ct = M.metric_cotangent(trace.logits, model_logits, M.KL_DIV, batch.answer, batch.foil)
    _, dz = M.backward(params, trace, ct, z=z, reference=reference)

    layer_of = np.asarray(topo.layer_of_edge)
    inner = layer_of < topo.num_layers
    gate_factor = np.ones(n_e)
    if n_l:
        gate_factor[inner] = z_layer[layer_of[inner]]
    grad_edge = dz * gate_factor * dz_edge
    grad_layer = np.zeros(n_l)
    if n_l and not freeze_layers:
        np.add.at(grad_layer, layer_of[inner], (dz * z_edge)[inner])
        grad_layer *= dz_layer

    e_val, e_grad = expected_gate(mask.log_alpha, *args, mask.eps)
    edge_sparsity = 1.0 - float(np.mean(e_val))
    edge_pen, edge_slope = _penalty(edge_sparsity, edge_target, multipliers.edge)
    grad_edge = grad_edge - edge_slope * e_grad / n_e

    layer_pen, layer_sparsity = 0.0, 0.0
    if n_l and not freeze_layers:
        l_val, l_grad = expected_gate(mask.layer_log_alpha, *args, mask.eps)
        layer_sparsity = 1.0 - float(np.mean(l_val))
        layer_pen, layer_slope = _penalty(layer_sparsity, layer_target, multipliers.layer)
        grad_layer = grad_layer - layer_slope * l_grad / n_l

    return LossParts(task + edge_pen + layer_pen, task, edge_pen, layer_pen,
                     edge_sparsity, layer_sparsity, grad_edge, grad_layer)


def train(params: M.ModelParams, data: Batch, config: PruneConfig, init: MaskParams | None = None,
          callback: Callable[[int, MaskParams], bool] | None = None):
    """Gradient-descent pruning; returns the trained mask and per-step trace.

    ``init=None`` is the cold start. ``callback(step, mask)`` runs after each
    update and may return True to stop early.
    """
    topo = params.topology
    if init is None:
        mask = cold_mask(topo.edges, config.start_edge_sparsity, topo.num_layers, config.seed)
    else:
        mask = init.copy()
        if mask.edges != topo.edges:
            raise ValueError("initial mask does not match the model's edges")
        if len(mask.layer_log_alpha) != topo.num_layers:
            mask.layer_log_alpha = np.full(topo.num_layers, mask.clip)
    freeze = config.disable_node_loss
    if freeze:
        mask.layer_log_alpha = np.full(topo.num_layers, mask.clip)
    rng = np.random.default_rng([config.seed, 11])
    lam = Multipliers()
    trace = TrainTrace()
    n = len(data)
    model_logits = M.run(params, data.clean).logits
    reference = M.run(params, data.corrupt)
    for step in range(config.train_steps):
        t0 = time.perf_counter()
        idx = np.sort(rng.choice(n, size=min(config.batch, n), replace=False))
        batch = data.take(idx)
        ref = M.ActivationCache([o[idx] for o in reference.outputs[:-1]])
        u_edge = rng.uniform(mask.eps, 1.0 - mask.eps, size=topo.num_edges)
        u_layer = rng.uniform(mask.eps, 1.0 - mask.eps, size=topo.num_layers)
        edge_t, layer_t = config.target_at(step)
        try:
            parts = loss_and_grad(params, batch, mask, edge_target=edge_t, layer_target=layer_t,
                                  multipliers=lam, u_edge=u_edge, u_layer=u_layer,
                                  freeze_layers=freeze, model_logits=model_logits[idx], reference=ref)
        except ValueError as exc:
            raise TrainingError(step, str(exc)) from exc
        if not (math.isfinite(parts.loss) and np.all(np.isfinite(parts.grad_edge))
                and np.all(np.isfinite(parts.grad_layer))):
            raise TrainingError(step, "non-finite loss or gradient")
        with np.errstate(over="ignore", invalid="ignore"):
            mask.log_alpha = mask.log_alpha - config.edge_lr * parts.grad_edge
            if not freeze:
                mask.layer_log_alpha = mask.layer_log_alpha - config.layer_lr * parts.grad_layer
        if not (np.all(np.isfinite(mask.log_alpha)) and np.all(np.isfinite(mask.layer_log_alpha))):
            raise TrainingError(step, "log-alpha diverged")
        gap = parts.edge_sparsity - edge_t
        lam.edge = (lam.edge[0] + config.reg_edge_lr * gap, lam.edge[1] + config.reg_edge_lr * gap * gap)
        if not freeze:
            gap = parts.layer_sparsity - layer_t
            lam.layer = (lam.layer[0] + config.reg_layer_lr * gap,
                         lam.layer[1] + config.reg_layer_lr * gap * gap)
        trace.task_loss.append(parts.task)
        trace.edge_penalty.append(parts.edge_penalty)
        trace.layer_penalty.append(parts.layer_penalty)
        trace.sparsity.append(expected_sparsity(mask))
        trace.wall_time.append(time.perf_counter() - t0)
        if callback is not None and callback(step + 1, mask):
            break
    return mask, trace
