"""scikit-learn style front ends.

:class:`DECN` learns kernels with :meth:`DECN.fit` on a
:class:`~decn.functions.FunctionSet` and then maps initial populations to
evolved ones with :meth:`DECN.transform`, or runs a complete seeded
optimization with :meth:`DECN.optimize`.  The baselines expose the same
``optimize`` call so they can be swapped in comparison loops.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_function_set,
    check_kernel_sizes,
    check_lattice_side,
    check_objective,
    check_population_array,
    check_random_state,
)
from .baselines import DeConfig, de_rand_1_bin, random_search
from .diffcore import Tensor
from .evolution import DecnModel, decn_run, evolve, model_blocks
from .population import PopulationGrid, evaluate, init_population, objective_bounds
from .records import RunRecord
from .training import ModelConfig, TrainConfig, population_losses, train

__all__ = ["DECN", "DifferentialEvolution", "RandomSearch"]


class DECN(BaseEstimator):
    """Deep evolution convolution network optimizer.

    Parameters
    ----------
    depth : int
        Number of evolution modules.
    share_weights : bool
        Reuse one kernel set in every module.
    kernel_sizes : tuple of int
        Odd kernel sizes of each module.
    L : int
        Side of the population lattice (``L * L`` individuals).
    epochs, batch_populations, lr, lr_decay, decay_every, clip_norm, resample_every
        Training schedule; ``batch_populations`` is ``K`` and
        ``resample_every`` is ``T``.
    init_std : float
        Standard deviation of the Gaussian kernel initialization.
    random_state : int or None
        Seed for every random stream used by :meth:`fit`.
    """

    def __init__(self, depth=3, share_weights=True, kernel_sizes=(3, 5, 7), L=10, epochs=500,
                 batch_populations=16, lr=5e-4, lr_decay=0.9, decay_every=100, clip_norm=10.0,
                 resample_every=10, init_std=0.5, instances_per_epoch=None, random_state=None):
        self.depth = depth
        self.share_weights = share_weights
        self.kernel_sizes = kernel_sizes
        self.L = L
        self.epochs = epochs
        self.batch_populations = batch_populations
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.clip_norm = clip_norm
        self.resample_every = resample_every
        self.init_std = init_std
        self.instances_per_epoch = instances_per_epoch
        self.random_state = random_state

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        sizes = check_kernel_sizes(self.kernel_sizes)
        L = check_lattice_side(self.L, sizes)
        seed = 0 if self.random_state is None else int(self.random_state)
        return (ModelConfig(int(self.depth), bool(self.share_weights), sizes, float(self.init_std)),
                TrainConfig(K=int(self.batch_populations), epochs=int(self.epochs), lr=float(self.lr),
                            lr_decay=float(self.lr_decay), decay_every=int(self.decay_every),
                            clip_norm=float(self.clip_norm), T=int(self.resample_every), L=L,
                            seed=seed, instances_per_epoch=self.instances_per_epoch))

    def fit(self, X, y=None):
        """Train the kernels on a function set (``y`` is ignored)."""
        dataset = check_function_set(X)
        model_cfg, train_cfg = self._configs()
        self.model_, self.train_log_ = train(model_cfg, dataset, train_cfg)
        self.n_features_in_ = dataset.dim
        return self

    @classmethod
    def from_model(cls, model: DecnModel, L: int | None = None) -> "DECN":
        """Wrap an already trained (or loaded) model."""
        est = cls(depth=model.depth, share_weights=model.share_weights,
                  kernel_sizes=model.kernel_sizes, L=L or model.trained_on.get("L", 10))
        est.model_ = model
        return est

    def _run_model(self) -> DecnModel:
        check_is_fitted(self, "model_")
        return self.model_

    def transform(self, X, objective):
        """Evolve initial populations ``X`` of shape ``(L, L, D)`` or ``(B, L, L, D)``.

        Returns the final decision arrays with the same shape.
        """
        model = self._run_model()
        objective = check_objective(objective)
        X = check_population_array(X, objective)
        lower, upper = objective_bounds(objective, X.ndim)
        grid = PopulationGrid(Tensor(X), lower, upper)
        final = evolve(grid, model_blocks(model), objective)
        return np.array(final.decisions.data)

    def optimize(self, objective, random_state=None):
        """Run on one instance from a random lattice.

        Returns ``(best_x, best_f, record)``.
        """
        model = self._run_model()
        objective = check_objective(objective)
        L = check_lattice_side(self.L, model.kernel_sizes)
        rng = check_random_state(random_state)
        S0 = init_population(L, objective, rng)
        final, record = decn_run(S0, model, objective, metadata={
            "algorithm": "decn", "function": objective.id, "D": objective.dim, "L": L,
            "depth": model.depth})
        return final.best_individual(), record.final_best, record

    def score(self, X, y=None, random_state=None):
        """Mean normalized improvement (negated loss) over ``X``; higher is better."""
        from .functions import ObjectiveBatch

        model = self._run_model()
        dataset = check_function_set(X)
        batch = ObjectiveBatch(dataset.instances, int(self.batch_populations))
        rng = check_random_state(random_state)
        S0 = evaluate(init_population(check_lattice_side(self.L, model.kernel_sizes), batch, rng),
                      batch)
        final = evolve(S0, model_blocks(model), batch)
        return float(-population_losses(S0, final).data.mean())


class DifferentialEvolution(BaseEstimator):
    """DE/rand/1/bin baseline."""

    def __init__(self, pop_size=100, F=0.5, CR=0.9, budget=400):
        self.pop_size = pop_size
        self.F = F
        self.CR = CR
        self.budget = budget

    def optimize(self, objective, random_state=None):
        cfg = DeConfig(int(self.pop_size), float(self.F), float(self.CR), int(self.budget),
                       seed=random_state if isinstance(random_state, int) else 0)
        best, record = de_rand_1_bin(check_objective(objective), cfg, check_random_state(random_state))
        return best, record.final_best, record


class RandomSearch(BaseEstimator):
    """Uniform random sampling baseline."""

    def __init__(self, budget=400, batch=100):
        self.budget = budget
        self.batch = batch

    def optimize(self, objective, random_state=None) -> tuple[np.ndarray, float, RunRecord]:
        best, record = random_search(check_objective(objective), int(self.budget),
                                     check_random_state(random_state), int(self.batch))
        return best, record.final_best, record
