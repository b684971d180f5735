"""Population lattice: initialization, evaluation, fitness sorting, bounds.

A grid stores its decision variables as a ``(..., L, L, D)`` tensor and its
fitness channel separately as ``(..., L, L)``; :attr:`PopulationGrid.lattice`
joins them into the ``(L, L, D + 1)`` layout.  Leading axes, when present,
index independent populations of a minibatch.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcore as dc
from .diffcore import NumericError, ShapeError, Tensor

__all__ = [
    "NotEvaluatedError",
    "PopulationGrid",
    "init_population",
    "evaluate",
    "sort_descending",
    "clip_to_bounds",
    "objective_bounds",
    "snapshot_csv",
]


class NotEvaluatedError(RuntimeError):
    """The fitness channel is stale."""


def objective_bounds(objective, ndim: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper bounds of ``objective`` shaped to broadcast over rank-``ndim`` decisions."""
    if hasattr(objective, "bounds"):
        return objective.bounds(ndim)
    return np.asarray(objective.lower, dtype=float), np.asarray(objective.upper, dtype=float)


@dataclass(frozen=True)
class PopulationGrid:
    decisions: Tensor
    lower: np.ndarray
    upper: np.ndarray
    fitness: Tensor | None = None
    eval_count: int = 0
    permutation: np.ndarray | None = None

    def __post_init__(self):
        shape = self.decisions.shape
        if len(shape) < 3 or shape[-3] != shape[-2]:
            raise ShapeError(f"decisions must have shape (..., L, L, D), got {shape}")
        if self.fitness is not None and self.fitness.shape != shape[:-1]:
            raise ShapeError(f"fitness shape {self.fitness.shape} does not match {shape[:-1]}")

    @property
    def L(self) -> int:
        return self.decisions.shape[-2]

    @property
    def D(self) -> int:
        return self.decisions.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.decisions.shape[:-3]

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None

    @property
    def lattice(self) -> np.ndarray:
        """``(..., L, L, D + 1)`` array; the fitness channel is NaN when stale."""
        fit = (np.full(self.decisions.shape[:-1], np.nan) if self.fitness is None
               else self.fitness.data)
        return np.concatenate([self.decisions.data, fit[..., None]], axis=-1)

    def best_fitness(self) -> np.ndarray | float:
        f = self._require_fitness().data
        out = f.min(axis=(-2, -1))
        return float(out) if out.ndim == 0 else out

    def mean_fitness(self) -> np.ndarray | float:
        f = self._require_fitness().data
        out = f.mean(axis=(-2, -1))
        return float(out) if out.ndim == 0 else out

    def best_individual(self) -> np.ndarray:
        f = self._require_fitness().data
        flat = f.reshape(f.shape[:-2] + (-1,))
        idx = np.argmin(flat, axis=-1)
        dec = self.decisions.data.reshape(flat.shape + (self.D,))
        return np.take_along_axis(dec, idx[..., None, None], axis=-2)[..., 0, :]

    def detach(self) -> "PopulationGrid":
        return replace(self, decisions=self.decisions.detach(),
                       fitness=None if self.fitness is None else self.fitness.detach())

    def _require_fitness(self) -> Tensor:
        if self.fitness is None:
            raise NotEvaluatedError("population has not been evaluated")
        return self.fitness


def init_population(L: int, objective, rng: np.random.Generator,
                    batch: int | None = None) -> PopulationGrid:
    """Uniform random decisions inside the objective's bounds; fitness stale.

    An objective batch always yields one population per batch slot;
    ``batch`` adds a leading axis for a single instance.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    size = getattr(objective, "size", None)
    if size is not None:
        lead = (size,)
    elif batch is not None:
        lead = (batch,)
    else:
        lead = ()
    ndim = len(lead) + 3
    lower, upper = objective_bounds(objective, ndim)
    D = lower.shape[-1]
    values = rng.uniform(lower, upper, size=lead + (L, L, D))
    return PopulationGrid(Tensor(values), lower, upper)


def evaluate(pop: PopulationGrid, objective) -> PopulationGrid:
    """Fill the fitness channel and charge ``L**2`` evaluations per population.

    Recorded decisions give recorded fitness.
    """
    dec = pop.decisions.data
    if np.any(dec < pop.lower) or np.any(dec > pop.upper):
        raise ValueError("decision values lie outside the bounds")
    try:
        fitness = objective.evaluate(pop.decisions)
    except NumericError:
        raise NumericError(_locate_bad_cell(pop, objective)) from None
    return replace(pop, fitness=fitness, eval_count=pop.eval_count + pop.L * pop.L)


def _locate_bad_cell(pop: PopulationGrid, objective) -> str:
    if hasattr(objective, "size"):
        return "non-finite fitness inside an objective batch"
    dec = pop.decisions.data
    for index in np.ndindex(dec.shape[:-1]):
        try:
            objective.evaluate(dec[index])
        except NumericError:
            return f"non-finite fitness at cell {index}"
    return "non-finite fitness"


def sort_descending(pop: PopulationGrid) -> PopulationGrid:
    """Stable row-major sort by fitness, worst at ``(0, 0)`` and best last."""
    fit = pop._require_fitness()
    L, D = pop.L, pop.D
    lead = pop.batch_shape
    flat_fit = dc.reshape(fit, lead + (L * L,))
    perm = np.argsort(-flat_fit.data, axis=-1, kind="stable")
    flat_dec = dc.reshape(pop.decisions, lead + (L * L, D))
    dec = dc.reshape(dc.permute(flat_dec, perm[..., None], axis=-2), lead + (L, L, D))
    new_fit = dc.reshape(dc.permute(flat_fit, perm, axis=-1), lead + (L, L))
    return replace(pop, decisions=dec, fitness=new_fit, permutation=perm)


def clip_to_bounds(pop: PopulationGrid) -> PopulationGrid:
    """Clamp decisions into the box; fitness goes stale if anything moved."""
    inside = (pop.decisions.data >= pop.lower) & (pop.decisions.data <= pop.upper)
    clipped = dc.clip(pop.decisions, pop.lower, pop.upper)
    fitness = pop.fitness if np.all(inside) else None
    return replace(pop, decisions=clipped, fitness=fitness)


def snapshot_csv(pop: PopulationGrid) -> str:
    """Single-grid dump with columns ``row, col, x1..xD, fitness`` (empty when stale)."""
    if pop.batch_shape:
        raise ShapeError("snapshot_csv takes a single population")
    dec = pop.decisions.data
    fit = None if pop.fitness is None else pop.fitness.data
    header = ["row", "col"] + [f"x{d + 1}" for d in range(pop.D)] + ["fitness"]
    lines = [",".join(header)]
    for i in range(pop.L):
        for j in range(pop.L):
            cells = [str(i), str(j)] + [repr(float(v)) for v in dec[i, j]]
            cells.append("" if fit is None else repr(float(fit[i, j])))
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
