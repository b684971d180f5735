"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .diffcore import KernelError, ShapeError
from .evolution import min_lattice_side
from .functions import FunctionSet, ObjectiveBatch, ObjectiveInstance


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int or a Generator into a :class:`numpy.random.Generator`."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_kernel_sizes(sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in sizes)
    if not sizes:
        raise KernelError("at least one kernel size is required")
    if any(s < 1 or s % 2 == 0 for s in sizes):
        raise KernelError(f"kernel sizes must be positive and odd, got {sizes}")
    if len(set(sizes)) != len(sizes):
        raise KernelError(f"kernel sizes must be distinct, got {sizes}")
    return sizes


def check_lattice_side(L: int, kernel_sizes: Sequence[int]) -> int:
    L = int(L)
    need = min_lattice_side(kernel_sizes)
    if L < need:
        raise ValueError(f"L={L} is below the minimum {need} for kernel sizes {tuple(kernel_sizes)}")
    return L


def check_objective(objective) -> ObjectiveInstance | ObjectiveBatch:
    if not isinstance(objective, (ObjectiveInstance, ObjectiveBatch)):
        raise TypeError(f"expected an ObjectiveInstance or ObjectiveBatch, got {type(objective).__name__}")
    return objective


def check_function_set(data) -> FunctionSet:
    if isinstance(data, FunctionSet):
        return data
    if isinstance(data, (list, tuple)) and data and all(isinstance(d, ObjectiveInstance) for d in data):
        fids = {d.id for d in data}
        fidelity = "low" if fids <= {"F1", "F2", "F3"} and len(fids) > 1 else "high"
        return FunctionSet(tuple(data), fidelity, data[0].id)
    raise TypeError("training data must be a FunctionSet or a non-empty list of ObjectiveInstance")


def check_population_array(X, objective, L: int | None = None) -> np.ndarray:
    """Validate initial decisions of shape ``(L, L, D)`` or ``(B, L, L, D)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (3, 4):
        raise ShapeError(f"populations must have shape (L, L, D) or (B, L, L, D), got {X.shape}")
    if X.shape[-3] != X.shape[-2]:
        raise ShapeError(f"population lattice must be square, got {X.shape[-3]}x{X.shape[-2]}")
    if L is not None and X.shape[-2] != L:
        raise ShapeError(f"expected lattice side {L}, got {X.shape[-2]}")
    dim = objective.dim
    if X.shape[-1] != dim:
        raise ShapeError(f"objective has dim {dim}, populations have {X.shape[-1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("populations contain non-finite values")
    if isinstance(objective, ObjectiveBatch):
        if X.ndim != 4 or X.shape[0] != objective.size:
            raise ShapeError(f"an objective batch needs {objective.size} populations")
        lower, upper = objective.bounds(4)
    else:
        lower, upper = objective.lower, objective.upper
    if np.any(X < lower) or np.any(X > upper):
        raise ValueError("populations lie outside the objective bounds")
    return X
