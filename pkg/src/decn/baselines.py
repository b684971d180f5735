"""Reference optimizers charged one evaluation per fitness query."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import RunRecord

__all__ = ["DeConfig", "de_rand_1_bin", "random_search"]


@dataclass(frozen=True)
class DeConfig:
    pop_size: int = 100
    F: float = 0.5
    CR: float = 0.9
    budget: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.pop_size < 4:
            raise ValueError("DE needs a population of at least 4")
        if not self.F >= 0:
            raise ValueError("F must be non-negative")
        if not 0 < self.CR <= 1:
            raise ValueError("CR must lie in (0, 1]")
        if self.budget < self.pop_size:
            raise ValueError(f"budget {self.budget} cannot cover the initial population "
                             f"of {self.pop_size}")


def _distinct_donors(n: int, rng: np.random.Generator) -> np.ndarray:
    """Three mutually distinct indices per target, none equal to the target."""
    out = np.empty((n, 3), dtype=np.intp)
    for i in range(n):
        choices = rng.choice(n - 1, size=3, replace=False)
        choices[choices >= i] += 1
        out[i] = choices
    return out


def de_rand_1_bin(inst, cfg: DeConfig, rng: np.random.Generator | None = None):
    """DE/rand/1/bin with greedy parent-vs-trial replacement.

    Generations are synchronous: all trials of a generation are built from
    the same population.  The last generation is truncated so exactly
    ``cfg.budget`` evaluations are spent.  ``F = 0`` is accepted so that the
    degenerate copy-a-donor case can be exercised.

    Returns
    -------
    best : ndarray
        Best decision vector found.
    record : RunRecord
        One row per generation.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    lower, upper = np.asarray(inst.lower), np.asarray(inst.upper)
    n, dim = cfg.pop_size, lower.size
    pop = rng.uniform(lower, upper, size=(n, dim))
    fit = np.asarray(inst.evaluate(pop))
    evals = n
    record = RunRecord(metadata={"algorithm": "de", "function": inst.id, "D": dim,
                                 "pop_size": n, "F": cfg.F, "CR": cfg.CR,
                                 "budget": cfg.budget, "seed": cfg.seed})
    record.append(0, fit.min(), fit.mean(), evals)
    gen = 0
    while evals < cfg.budget:
        gen += 1
        count = min(n, cfg.budget - evals)
        donors = _distinct_donors(n, rng)[:count]
        mutant = pop[donors[:, 0]] + cfg.F * (pop[donors[:, 1]] - pop[donors[:, 2]])
        cross = rng.random((count, dim)) < cfg.CR
        cross[np.arange(count), rng.integers(0, dim, size=count)] = True
        trial = np.clip(np.where(cross, mutant, pop[:count]), lower, upper)
        trial_fit = np.asarray(inst.evaluate(trial))
        evals += count
        better = trial_fit <= fit[:count]
        pop[:count][better] = trial[better]
        fit[:count][better] = trial_fit[better]
        record.append(gen, fit.min(), fit.mean(), evals)
    return pop[np.argmin(fit)].copy(), record


def random_search(inst, budget: int, rng: np.random.Generator, batch: int = 100):
    """Uniform sampling inside the bounds, logged every ``batch`` samples."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    lower, upper = np.asarray(inst.lower), np.asarray(inst.upper)
    record = RunRecord(metadata={"algorithm": "random", "function": inst.id,
                                 "D": lower.size, "budget": budget, "batch": batch})
    best_x, best_f = None, np.inf
    evals, gen = 0, 0
    while evals < budget:
        count = min(batch, budget - evals)
        xs = rng.uniform(lower, upper, size=(count, lower.size))
        fs = np.asarray(inst.evaluate(xs))
        evals += count
        i = int(np.argmin(fs))
        if fs[i] < best_f:
            best_f, best_x = float(fs[i]), xs[i].copy()
        record.append(gen, best_f, fs.mean(), evals)
        gen += 1
    return best_x, record
