"""Evolution modules: convolutional offspring generation and mask selection.

One evolution module (EM) takes an evaluated lattice, sorts it by fitness,
convolves every decision channel with each kernel of its kernel set,
averages the results into offspring, clamps them into the box, evaluates
them and keeps, cell by cell, the parent if the offspring is strictly worse
and the offspring otherwise.  A DECN model stacks ``depth`` EMs, either
reusing one kernel set (weight sharing) or one set per EM.

Selection masks and sort permutations are constants for differentiation;
gradients reach the kernels only through the surviving branch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import KernelError, ShapeError, Tensor
from .population import (
    NotEvaluatedError,
    PopulationGrid,
    clip_to_bounds,
    evaluate,
    sort_descending,
)
from .records import RunRecord, atomic_write_text

__all__ = [
    "MODEL_VERSION",
    "DEFAULT_KERNEL_SIZES",
    "ConfigError",
    "ModelFormatError",
    "KernelSet",
    "DecnModel",
    "crm_forward",
    "sm_select",
    "em_step",
    "evolve",
    "decn_run",
    "model_blocks",
    "min_lattice_side",
    "save_model",
    "load_model",
    "model_to_json",
    "model_from_json",
    "dump_kernels",
]

MODEL_VERSION = 1
DEFAULT_KERNEL_SIZES = (3, 5, 7)


class ConfigError(ValueError):
    """Inconsistent model or run configuration."""


class ModelFormatError(ValueError):
    """A model file is malformed or has an unsupported version."""


@dataclass(frozen=True, eq=False)
class KernelSet:
    """Square kernels of distinct odd sizes used by one EM."""

    kernels: tuple[np.ndarray, ...]

    def __post_init__(self):
        kernels = tuple(np.array(k, dtype=np.float64) for k in self.kernels)
        if not kernels:
            raise KernelError("a kernel set needs at least one kernel")
        sizes = []
        for k in kernels:
            if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
                raise KernelError(f"kernels must be square with odd size, got {k.shape}")
            if not np.all(np.isfinite(k)):
                raise KernelError("kernel values must be finite")
            k.flags.writeable = False
            sizes.append(k.shape[0])
        if len(set(sizes)) != len(sizes):
            raise KernelError(f"kernel sizes must be distinct, got {sizes}")
        object.__setattr__(self, "kernels", kernels)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(k.shape[0] for k in self.kernels)

    @classmethod
    def gaussian(cls, sizes: Sequence[int], std: float, rng: np.random.Generator,
                 mean: float = 0.0) -> "KernelSet":
        return cls(tuple(rng.normal(mean, std, size=(s, s)) for s in sizes))

    @classmethod
    def identity(cls, sizes: Sequence[int] = DEFAULT_KERNEL_SIZES) -> "KernelSet":
        out = []
        for s in sizes:
            k = np.zeros((s, s))
            k[s // 2, s // 2] = 1.0
            out.append(k)
        return cls(tuple(out))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KernelSet):
            return NotImplemented
        return (self.sizes == other.sizes
                and all(np.array_equal(a, b) for a, b in zip(self.kernels, other.kernels)))


@dataclass(frozen=True, eq=False)
class DecnModel:
    """Stack of EM kernel sets.

    With ``share_weights`` the model stores one kernel set that is applied
    ``depth`` times; otherwise ``ems`` holds one set per EM.
    """

    ems: tuple[KernelSet, ...]
    share_weights: bool
    depth: int
    trained_on: dict = field(default_factory=dict)
    version: int = MODEL_VERSION

    def __post_init__(self):
        object.__setattr__(self, "ems", tuple(self.ems))
        if not self.ems:
            raise ConfigError("a model needs at least one EM")
        if self.depth < 1:
            raise ConfigError("depth must be at least 1")
        if self.share_weights and len(self.ems) != 1:
            raise ConfigError("a weight-sharing model stores exactly one kernel set")
        if not self.share_weights and len(self.ems) != self.depth:
            raise ConfigError(f"expected {self.depth} kernel sets, got {len(self.ems)}")
        if len({em.sizes for em in self.ems}) != 1:
            raise ConfigError("all EMs must use the same kernel sizes")

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return self.ems[0].sizes

    @property
    def n_parameters(self) -> int:
        return sum(k.size for em in self.ems for k in em.kernels)

    def block(self, step: int) -> KernelSet:
        """Kernel set used by EM number ``step`` (0-based)."""
        return self.ems[0] if self.share_weights else self.ems[step]

    def with_kernels(self, kernels: Sequence[Sequence[np.ndarray]]) -> "DecnModel":
        return replace(self, ems=tuple(KernelSet(tuple(ks)) for ks in kernels))

    @classmethod
    def initialize(cls, depth: int, share_weights: bool, rng: np.random.Generator,
                   kernel_sizes: Sequence[int] = DEFAULT_KERNEL_SIZES, std: float = 0.5,
                   trained_on: dict | None = None) -> "DecnModel":
        """Kernels drawn i.i.d. from ``N(0, std**2)``."""
        blocks = 1 if share_weights else depth
        ems = tuple(KernelSet.gaussian(kernel_sizes, std, rng) for _ in range(blocks))
        return cls(ems, share_weights, depth, dict(trained_on or {}))

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecnModel):
            return NotImplemented
        return (self.share_weights == other.share_weights and self.depth == other.depth
                and self.version == other.version and self.trained_on == other.trained_on
                and len(self.ems) == len(other.ems)
                and all(a == b for a, b in zip(self.ems, other.ems)))


def min_lattice_side(kernel_sizes: Sequence[int]) -> int:
    """Smallest ``L`` whose symmetric padding fits the largest kernel."""
    return (max(kernel_sizes) + 1) // 2


def _kernels(params) -> Sequence:
    return params.kernels if isinstance(params, KernelSet) else params


def crm_forward(pop: PopulationGrid, params) -> PopulationGrid:
    """Offspring: mean of the depthwise convolutions of the decision channels.

    ``params`` is a :class:`KernelSet` or a sequence of kernel tensors
    (recorded leaves during training).  The fitness channel is not
    convolved; the offspring come back clamped and unevaluated.
    """
    kernels = _kernels(params)
    if pop.L < min_lattice_side([k.shape[0] for k in kernels]):
        raise KernelError(f"lattice side {pop.L} is too small for kernel sizes "
                          f"{[k.shape[0] for k in kernels]}")
    # Symmetric padding maps every border tap identically whatever the pad
    # width, so the mean of the per-kernel convolutions equals a single
    # convolution with the mean of the centre-embedded kernels.
    size = max(k.shape[0] for k in kernels)
    combined = None
    for kernel in kernels:
        part = kernel if kernel.shape[0] == size else dc.center_embed(kernel, size)
        combined = part if combined is None else combined + part
    if len(kernels) > 1:
        combined = combined / float(len(kernels))
    mixed = dc.depthwise_conv2d(pop.decisions, combined)
    offspring = replace(pop, decisions=mixed, fitness=None, permutation=None)
    return clip_to_bounds(offspring)


def sm_select(parent: PopulationGrid, offspring: PopulationGrid) -> PopulationGrid:
    """Cellwise survivor selection.

    A cell keeps its parent when ``f(offspring) - f(parent) > 0`` and the
    offspring otherwise, so ties go to the offspring.  The surviving fitness
    is the cellwise minimum of the two fitness matrices.
    """
    if parent.decisions.shape != offspring.decisions.shape:
        raise ShapeError(f"parent {parent.decisions.shape} and offspring "
                         f"{offspring.decisions.shape} differ in shape")
    if parent.fitness is None or offspring.fitness is None:
        raise NotEvaluatedError("selection needs evaluated parent and offspring")
    keep_parent = (offspring.fitness.data - parent.fitness.data) > 0
    decisions = dc.where(keep_parent[..., None], parent.decisions, offspring.decisions)
    fitness = dc.where(keep_parent, parent.fitness, offspring.fitness)
    return replace(parent, decisions=decisions, fitness=fitness,
                   eval_count=max(parent.eval_count, offspring.eval_count), permutation=None)


def em_step(pop: PopulationGrid, params, objective) -> PopulationGrid:
    """One generation: (evaluate) -> sort -> CRM -> evaluate offspring -> SM."""
    if not pop.evaluated:
        pop = evaluate(pop, objective)
    parent = sort_descending(pop)
    offspring = evaluate(crm_forward(parent, params), objective)
    return sm_select(parent, offspring)


def evolve(pop: PopulationGrid, blocks: Sequence, objective, callback=None) -> PopulationGrid:
    """Apply one EM per entry of ``blocks`` (kernel sets or kernel-tensor lists).

    ``callback(step, grid)`` is invoked after the initial evaluation
    (``step == 0``) and after every EM.
    """
    if not pop.evaluated:
        pop = evaluate(pop, objective)
    if callback is not None:
        callback(0, pop)
    for step, params in enumerate(blocks, start=1):
        pop = em_step(pop, params, objective)
        if callback is not None:
            callback(step, pop)
    return pop


def model_blocks(model: DecnModel, depth: int | None = None) -> list[KernelSet]:
    depth = model.depth if depth is None else depth
    if not model.share_weights and depth != model.depth:
        raise ConfigError("only weight-sharing models can run at a different depth")
    return [model.block(i) for i in range(depth)]


def decn_run(S0: PopulationGrid, model: DecnModel, objective, depth: int | None = None,
             metadata: dict | None = None) -> tuple[PopulationGrid, RunRecord]:
    """Run the model on a single population and log every generation."""
    if S0.batch_shape:
        raise ShapeError("decn_run takes a single population; use evolve for batches")
    record = RunRecord(metadata=dict(metadata or {}))

    def log(step, grid):
        record.append(step, grid.best_fitness(), grid.mean_fitness(), grid.eval_count)

    final = evolve(S0, model_blocks(model, depth), objective, callback=log)
    return final, record


# ---------------------------------------------------------------- persistence

def model_to_json(model: DecnModel) -> str:
    doc = {
        "version": model.version,
        "share_weights": model.share_weights,
        "depth": model.depth,
        "kernel_sizes": list(model.kernel_sizes),
        "ems": [{f"k{k.shape[0]}": k.reshape(-1).tolist() for k in em.kernels}
                for em in model.ems],
        "trained_on": model.trained_on,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def model_from_json(text: str) -> DecnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    try:
        sizes = [int(s) for s in doc["kernel_sizes"]]
        ems = []
        for em in doc["ems"]:
            ems.append(KernelSet(tuple(np.array(em[f"k{s}"], dtype=np.float64).reshape(s, s)
                                       for s in sizes)))
        return DecnModel(tuple(ems), bool(doc["share_weights"]), int(doc["depth"]),
                         dict(doc.get("trained_on", {})))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc


def save_model(model: DecnModel, path) -> Path:
    return atomic_write_text(path, model_to_json(model))


def load_model(path) -> DecnModel:
    return model_from_json(Path(path).read_text())


def dump_kernels(model: DecnModel, directory) -> list[Path]:
    """One CSV matrix per (EM, kernel size); a shared block is written once."""
    directory = Path(directory)
    paths = []
    for index, em in enumerate(model.ems):
        for kernel in em.kernels:
            size = kernel.shape[0]
            lines = [f"# em={index} size={size} shared={str(model.share_weights).lower()} "
                     f"depth={model.depth}"]
            lines += [",".join(repr(float(v)) for v in row) for row in kernel]
            path = directory / f"em{index:02d}_k{size}.csv"
            paths.append(atomic_write_text(path, "\n".join(lines) + "\n"))
    return paths
