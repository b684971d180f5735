"""Gradient training of DECN kernels on surrogate function sets.

Each epoch draws ``K`` fresh initial populations per training instance,
runs the whole minibatch through a recorded DECN forward pass, and
minimizes the mean normalized-improvement loss with Adam after clipping
the global gradient norm.  The learning rate decays geometrically every
``decay_every`` epochs and the instance shifts are redrawn every ``T``
epochs.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import NumericError, Tensor
from .evolution import DEFAULT_KERNEL_SIZES, DecnModel, evolve, min_lattice_side
from .functions import FunctionSet, ObjectiveBatch
from .population import NotEvaluatedError, PopulationGrid, evaluate, init_population
from .records import substream

__all__ = [
    "LOSS_EPS",
    "ModelConfig",
    "TrainConfig",
    "TrainLog",
    "TrainingError",
    "AdamState",
    "population_losses",
    "loss",
    "adam_step",
    "clip_by_global_norm",
    "learning_rate",
    "train_step_loss",
    "train",
]

LOSS_EPS = 1e-12


class TrainingError(NumericError):
    """Training hit a non-finite loss."""


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 3
    share_weights: bool = True
    kernel_sizes: tuple[int, ...] = DEFAULT_KERNEL_SIZES
    init_std: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; ``T`` is the shift-resampling period."""

    K: int = 32
    epochs: int = 5000
    lr: float = 5e-4
    lr_decay: float = 0.9
    decay_every: int = 100
    clip_norm: float = 10.0
    T: int = 10
    L: int = 10
    seed: int = 0
    instances_per_epoch: int | None = None

    def __post_init__(self):
        if self.K < 1 or self.decay_every < 1 or self.T < 1 or self.L < 1:
            raise ValueError("K, decay_every, T and L must be positive")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be non-negative")
        if not self.clip_norm > 0 or not self.lr_decay > 0:
            raise ValueError("clip_norm and lr_decay must be positive")
        if self.instances_per_epoch is not None and self.instances_per_epoch < 1:
            raise ValueError("instances_per_epoch must be positive")


@dataclass
class TrainLog:
    mean_loss: list[float] = field(default_factory=list)
    function_losses: list[list[float]] = field(default_factory=list)
    grad_norm_pre: list[float] = field(default_factory=list)
    grad_norm_post: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.mean_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={json.dumps(self.metadata[key], sort_keys=True)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "grad_norm_pre", "grad_norm_post", "lr"])
        for e in range(len(self)):
            writer.writerow([e, repr(self.mean_loss[e]), repr(self.grad_norm_pre[e]),
                             repr(self.grad_norm_post[e]), repr(self.lr[e])])
        return buf.getvalue()


def population_losses(S0: PopulationGrid, S_out: PopulationGrid) -> Tensor:
    """Per-population loss ``-(mean f(S0) - mean f(S_out)) / max(|mean f(S0)|, eps)``.

    ``S0`` is treated as a constant; gradients flow through ``S_out`` only.
    """
    if S0.fitness is None or S_out.fitness is None:
        raise NotEvaluatedError("loss needs evaluated grids")
    start = S0.fitness.data.mean(axis=(-2, -1))
    denom = np.maximum(np.abs(start), LOSS_EPS)
    end = dc.mean(S_out.fitness, axis=(-2, -1))
    return (end - start) / denom


def loss(S0: PopulationGrid, S_out: PopulationGrid) -> Tensor:
    """Mean of :func:`population_losses` (a scalar tensor)."""
    return dc.mean(population_losses(S0, S_out))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float):
    """Scale all gradients together so their joint 2-norm is at most ``max_norm``.

    Returns ``(clipped, norm_before, norm_after)``.
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        clipped = [g * scale for g in grads]
        after = float(np.sqrt(sum(float(np.sum(g * g)) for g in clipped)))
        return clipped, norm, after
    return [np.array(g) for g in grads], norm, norm


def learning_rate(epoch: int, lr0: float, decay: float, decay_every: int) -> float:
    return lr0 * decay ** (epoch // decay_every)


def _leaf_blocks(model: DecnModel, tape: dc.Tape):
    leaves = [[tape.leaf(k) for k in em.kernels] for em in model.ems]
    blocks = [leaves[0] if model.share_weights else leaves[i] for i in range(model.depth)]
    return leaves, blocks


def train_step_loss(model: DecnModel, S0: PopulationGrid, objective):
    """Recorded forward pass; returns ``(scalar loss, per-population losses, leaves)``."""
    tape = dc.Tape()
    leaves, blocks = _leaf_blocks(model, tape)
    final = evolve(S0, blocks, objective)
    per_pop = population_losses(S0, final)
    return dc.mean(per_pop), per_pop, leaves


def train(model_config: ModelConfig, dataset: FunctionSet, cfg: TrainConfig,
          model: DecnModel | None = None) -> tuple[DecnModel, TrainLog]:
    """Train a DECN on ``dataset``; deterministic given ``cfg.seed``.

    Random streams: ``init`` (kernels), ``shifts`` (resampled instances),
    ``training`` (initial populations and instance minibatches).
    """
    if cfg.L < min_lattice_side(model_config.kernel_sizes):
        raise ValueError(f"L={cfg.L} is too small for kernel sizes {model_config.kernel_sizes}")
    if model is None:
        model = DecnModel.initialize(model_config.depth, model_config.share_weights,
                                     substream(cfg.seed, "init"), model_config.kernel_sizes,
                                     model_config.init_std)
    model = DecnModel(model.ems, model.share_weights, model.depth, {
        "suite": dataset.fidelity if dataset.fidelity == "low" else f"high:{dataset.target_id}",
        "D": dataset.dim, "L": cfg.L, "seed": cfg.seed,
    })
    shift_rng = substream(cfg.seed, "shifts")
    train_rng = substream(cfg.seed, "training")
    params = [k for em in model.ems for k in em.kernels]
    state = AdamState.zeros_like(params)
    log = TrainLog(metadata={"train_config": asdict(cfg), "model_config": asdict(model_config),
                             "dataset_fidelity": dataset.fidelity,
                             "dataset_target": dataset.target_id})

    for epoch in range(cfg.epochs):
        lr = learning_rate(epoch, cfg.lr, cfg.lr_decay, cfg.decay_every)
        if epoch > 0 and epoch % cfg.T == 0:
            dataset = dataset.resampled(shift_rng)
        instances = list(dataset.instances)
        if cfg.instances_per_epoch is not None and cfg.instances_per_epoch < len(instances):
            chosen = np.sort(train_rng.choice(len(instances), cfg.instances_per_epoch,
                                              replace=False))
            instances = [instances[i] for i in chosen]
        batch = ObjectiveBatch(instances, cfg.K)
        S0 = evaluate(init_population(cfg.L, batch, train_rng), batch)
        try:
            total, per_pop, leaves = train_step_loss(model, S0, batch)
        except NumericError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        flat_leaves = [leaf for block in leaves for leaf in block]
        grads = dc.grad(total, flat_leaves)
        clipped, pre, post = clip_by_global_norm(grads, cfg.clip_norm)
        params, state = adam_step(params, clipped, state, lr)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingError(f"epoch {epoch}: parameters became non-finite")
        sizes = [len(em.kernels) for em in model.ems]
        blocks, start = [], 0
        for n in sizes:
            blocks.append(params[start:start + n])
            start += n
        model = model.with_kernels(blocks)

        per_function = per_pop.data.reshape(len(instances), cfg.K).mean(axis=1)
        log.mean_loss.append(float(total.item()))
        log.function_losses.append([float(v) for v in per_function])
        log.grad_norm_pre.append(pre)
        log.grad_norm_post.append(post)
        log.lr.append(lr)
    return model, log
