"""Objective functions: training set F1-F3, test set F4-F9 and the planar arm.

Every formula is written against :mod:`decn.diffcore` so the same code
evaluates plain arrays (inference, baselines) and recorded tensors
(training).  Inputs carry the decision vector on the last axis; any leading
axes (lattice rows/cols, minibatch) are broadcast.

F6 follows the tabulated form ``sum 100 (z_i^2 - z_{i+1})^2 + (z_i - 1)^2``,
whose minimum lies at ``z = 1`` (``x = b + 1``) rather than at ``x = b``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor

__all__ = [
    "TRAINING_IDS",
    "TEST_IDS",
    "ARM_IDS",
    "FUNCTION_RANGES",
    "WEIGHT_RANGE",
    "ARM_SEGMENT_LENGTH",
    "ObjectiveInstance",
    "ObjectiveBatch",
    "FunctionSet",
    "evaluate",
    "sample_shift",
    "make_dataset",
    "sample_test_instances",
    "arm_instance",
    "sample_arm_targets",
    "make_arm_dataset",
]

TRAINING_IDS = ("F1", "F2", "F3")
TEST_IDS = ("F4", "F5", "F6", "F7", "F8", "F9")
ARM_IDS = ("ArmSC", "ArmCC")

# id -> (x range, b range)
FUNCTION_RANGES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "F1": ((-10.0, 10.0), (-10.0, 10.0)),
    "F2": ((-10.0, 10.0), (-10.0, 10.0)),
    "F3": ((-10.0, 10.0), (-10.0, 10.0)),
    "F4": ((-100.0, 100.0), (-50.0, 50.0)),
    "F5": ((-100.0, 100.0), (-50.0, 50.0)),
    "F6": ((-100.0, 100.0), (-50.0, 50.0)),
    "F7": ((-5.0, 5.0), (-2.5, 2.5)),
    "F8": ((-600.0, 600.0), (-300.0, 300.0)),
    "F9": ((-32.0, 32.0), (-16.0, 16.0)),
}
WEIGHT_RANGE = (-10.0, 10.0)
ARM_SEGMENT_LENGTH = 10.0
ARM_LENGTH_RANGE = (0.0, 10.0)


def _sum(x):
    return dc.sum(x, axis=-1)


def _formula(fid: str, x: Tensor, shift, weights, target) -> Tensor:
    if fid in ARM_IDS:
        return _arm_distance(fid, x, target)
    z = x - shift
    if fid == "F1":
        return _sum(dc.absolute(dc.sin(z) * weights))
    if fid == "F2":
        return _sum(dc.absolute(z))
    if fid == "F3":
        chain = _sum(dc.absolute(z[..., :-1] - z[..., 1:]))
        return chain + _sum(dc.absolute(z))
    if fid == "F4":
        return _sum(dc.square(z))
    if fid == "F5":
        return dc.amax(dc.absolute(z), axis=-1)
    if fid == "F6":
        head, tail = z[..., :-1], z[..., 1:]
        return _sum(100.0 * dc.square(dc.square(head) - tail) + dc.square(head - 1.0))
    if fid == "F7":
        return _sum(dc.square(z) - 10.0 * dc.cos(2.0 * np.pi * z) + 10.0)
    if fid == "F8":
        scale = 1.0 / np.sqrt(np.arange(1, x.shape[-1] + 1))
        return _sum(dc.square(z)) / 4000.0 - dc.prod(dc.cos(z * scale), axis=-1) + 1.0
    if fid == "F9":
        radial = dc.sqrt(dc.mean(dc.square(z), axis=-1))
        wave = dc.mean(dc.cos(2.0 * np.pi * z), axis=-1)
        return (20.0 + np.e) - 20.0 * dc.exp(-0.2 * radial) - dc.exp(wave)
    raise ValueError(f"unknown function id {fid!r}")


def _arm_distance(fid: str, x: Tensor, target) -> Tensor:
    if fid == "ArmSC":
        angles = x
        cx = ARM_SEGMENT_LENGTH * _sum(dc.cos(angles))
        cy = ARM_SEGMENT_LENGTH * _sum(dc.sin(angles))
    else:
        n = x.shape[-1] // 2
        lengths, angles = x[..., :n], x[..., n:]
        cx = _sum(lengths * dc.cos(angles))
        cy = _sum(lengths * dc.sin(angles))
    tx = target[..., 0]
    ty = target[..., 1]
    return dc.sqrt(dc.square(cx - tx) + dc.square(cy - ty))


def _array_or_none(value):
    return None if value is None else np.asarray(value, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ObjectiveInstance:
    """A function id bound to concrete parameters and box bounds.

    ``shift`` is ``b`` for F1-F9, ``weights`` is ``w`` for F1 and
    ``target``/``radius`` describe the arm task.
    """

    id: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    shift: np.ndarray | None = None
    weights: np.ndarray | None = None
    target: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        for name in ("lower", "upper", "shift", "weights", "target"):
            object.__setattr__(self, name, _array_or_none(getattr(self, name)))
        if self.id not in FUNCTION_RANGES and self.id not in ARM_IDS:
            raise ValueError(f"unknown function id {self.id!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise ShapeError("bounds must have length dim")
        if not np.all(self.lower < self.upper):
            raise ValueError("every lower bound must be below its upper bound")
        if self.id in ARM_IDS:
            if self.target is None or self.target.shape != (2,):
                raise ValueError("arm instances need a 2-D target point")
            if self.id == "ArmCC" and self.dim % 2:
                raise ValueError("ArmCC decision vectors are (lengths, angles); dim must be even")
        else:
            if self.shift is None or self.shift.shape != (self.dim,):
                raise ValueError(f"{self.id} needs a shift vector of length {self.dim}")
            if self.id == "F1" and (self.weights is None or self.weights.shape != (self.dim,)):
                raise ValueError("F1 needs a weight vector of length dim")

    @property
    def segments(self) -> int | None:
        if self.id == "ArmSC":
            return self.dim
        if self.id == "ArmCC":
            return self.dim // 2
        return None

    def evaluate(self, x):
        """Objective value(s); see :func:`evaluate`."""
        return evaluate(self, x)

    def to_dict(self) -> dict:
        out = {"id": self.id, "dim": self.dim,
               "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        for name in ("shift", "weights", "target"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value.tolist()
        if self.radius is not None:
            out["radius"] = self.radius
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectiveInstance":
        return cls(id=data["id"], dim=int(data["dim"]), lower=data["lower"], upper=data["upper"],
                   shift=data.get("shift"), weights=data.get("weights"),
                   target=data.get("target"), radius=data.get("radius"))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObjectiveInstance):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(json.dumps(self.to_dict(), sort_keys=True))


def evaluate(inst: ObjectiveInstance, x):
    """Evaluate ``inst`` at ``x`` (decision vector on the last axis).

    A 1-D array gives a float; a :class:`Tensor` input gives a tensor (so it
    can be recorded); other arrays give arrays of the leading shape.
    """
    as_float = not isinstance(x, Tensor) and np.ndim(x) == 1
    raw = not isinstance(x, Tensor)
    xt = dc.as_tensor(x)
    if xt.ndim == 0 or xt.shape[-1] != inst.dim:
        raise ShapeError(f"{inst.id} expects vectors of length {inst.dim}, got shape {xt.shape}")
    out = _formula(inst.id, xt, inst.shift, inst.weights, inst.target)
    if as_float:
        return out.item()
    return out.data.copy() if raw else out


class ObjectiveBatch:
    """Several instances evaluated as one leading minibatch axis.

    Every instance gets ``repeats`` consecutive slots, so the batch axis has
    length ``len(instances) * repeats``.  Consecutive instances with the
    same id are evaluated in one vectorized call.
    """

    def __init__(self, instances: Sequence[ObjectiveInstance], repeats: int = 1):
        if not instances:
            raise ValueError("an objective batch needs at least one instance")
        dims = {inst.dim for inst in instances}
        if len(dims) != 1:
            raise ShapeError(f"instances in a batch must share dim, got {sorted(dims)}")
        self.instances = list(instances)
        self.repeats = int(repeats)
        self.dim = dims.pop()
        self.size = len(self.instances) * self.repeats
        rep = lambda arrs: np.repeat(np.stack(arrs), self.repeats, axis=0)  # noqa: E731
        self.lower = rep([inst.lower for inst in self.instances])
        self.upper = rep([inst.upper for inst in self.instances])
        self._groups = []
        start = 0
        while start < len(self.instances):
            stop = start
            fid = self.instances[start].id
            while stop < len(self.instances) and self.instances[stop].id == fid:
                stop += 1
            group = self.instances[start:stop]

            def stacked(name, group=group):
                values = [getattr(inst, name) for inst in group]
                return None if values[0] is None else rep(values)

            self._groups.append((fid, start * self.repeats, stop * self.repeats,
                                 stacked("shift"), stacked("weights"), stacked("target")))
            start = stop

    def bounds(self, ndim: int) -> tuple[np.ndarray, np.ndarray]:
        """Bounds reshaped to broadcast against ``(B, ..., D)`` arrays of rank ``ndim``."""
        shape = (self.size,) + (1,) * (ndim - 2) + (self.dim,)
        return self.lower.reshape(shape), self.upper.reshape(shape)

    def evaluate(self, x):
        xt = dc.as_tensor(x)
        if xt.shape[0] != self.size or xt.shape[-1] != self.dim:
            raise ShapeError(f"batch expects shape ({self.size}, ..., {self.dim}), got {xt.shape}")
        middle = (1,) * (xt.ndim - 2)
        parts = []
        for fid, lo, hi, shift, weights, target in self._groups:
            part = xt if (lo, hi) == (0, self.size) else xt[lo:hi]
            reshape = lambda a, last: None if a is None else a.reshape((hi - lo,) + middle + (last,))  # noqa: E731
            parts.append(_formula(fid, part, reshape(shift, self.dim), reshape(weights, self.dim),
                                  reshape(target, 2)))
        out = parts[0] if len(parts) == 1 else dc.concatenate(parts, axis=0)
        return out if isinstance(x, Tensor) else out.data.copy()


def _bounds_for(fid: str, dim: int) -> tuple[np.ndarray, np.ndarray]:
    (lo, hi), _ = FUNCTION_RANGES[fid]
    return np.full(dim, lo), np.full(dim, hi)


def sample_shift(fid: str, dim: int, rng: np.random.Generator) -> ObjectiveInstance:
    """Draw a shifted instance of F1-F9 with ``b`` uniform in its range.

    F1 also draws its weights uniformly from :data:`WEIGHT_RANGE`.
    """
    if fid not in FUNCTION_RANGES:
        raise ValueError(f"unknown function id {fid!r}")
    _, (blo, bhi) = FUNCTION_RANGES[fid]
    lower, upper = _bounds_for(fid, dim)
    shift = rng.uniform(blo, bhi, size=dim)
    weights = rng.uniform(*WEIGHT_RANGE, size=dim) if fid == "F1" else None
    return ObjectiveInstance(fid, dim, lower, upper, shift=shift, weights=weights)


def _resample(inst: ObjectiveInstance, rng: np.random.Generator) -> ObjectiveInstance:
    if inst.id in ARM_IDS:
        return inst
    return sample_shift(inst.id, inst.dim, rng)


@dataclass(frozen=True)
class FunctionSet:
    """Training functions standing in for ``target_id``."""

    instances: tuple[ObjectiveInstance, ...]
    fidelity: str
    target_id: str
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise ValueError("a function set needs at least one instance")
        if self.fidelity not in ("high", "low"):
            raise ValueError(f"fidelity must be 'high' or 'low', got {self.fidelity!r}")
        if len({inst.dim for inst in self.instances}) != 1:
            raise ShapeError("all instances in a function set must share dim")
        if self.fidelity == "low" and any(i.id not in TRAINING_IDS for i in self.instances):
            raise ValueError("low-fidelity sets only hold F1, F2 and F3")

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def dim(self) -> int:
        return self.instances[0].dim

    def resampled(self, rng: np.random.Generator) -> "FunctionSet":
        """Fresh shifts for every F-instance; arm targets stay fixed."""
        return FunctionSet(tuple(_resample(inst, rng) for inst in self.instances),
                           self.fidelity, self.target_id, dict(self.metadata))

    def to_dict(self) -> dict:
        out = {"fidelity": self.fidelity, "target_id": self.target_id,
               "instances": [inst.to_dict() for inst in self.instances]}
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "FunctionSet":
        return cls(tuple(ObjectiveInstance.from_dict(d) for d in data["instances"]),
                   data["fidelity"], data["target_id"], data.get("metadata", {}))

    @classmethod
    def from_json(cls, text: str) -> "FunctionSet":
        return cls.from_dict(json.loads(text))


def make_dataset(fidelity: str, target_id: str, m: int, dim: int,
                 rng: np.random.Generator) -> FunctionSet:
    """High fidelity: ``m`` shifted copies of ``target_id``.
    Low fidelity: ``m`` instances cycling over F1, F2, F3."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if target_id not in FUNCTION_RANGES:
        raise ValueError(f"unknown target function {target_id!r}")
    if fidelity == "high":
        ids = [target_id] * m
    elif fidelity == "low":
        ids = [TRAINING_IDS[i % 3] for i in range(m)]
    else:
        raise ValueError(f"fidelity must be 'high' or 'low', got {fidelity!r}")
    return FunctionSet(tuple(sample_shift(fid, dim, rng) for fid in ids), fidelity, target_id)


def sample_test_instances(target_id: str, dim: int, count: int, rng: np.random.Generator,
                          exclude: FunctionSet | None = None) -> list[ObjectiveInstance]:
    """Held-out shifted instances; none shares a shift with ``exclude``."""
    taken = [] if exclude is None else [i.shift for i in exclude.instances if i.shift is not None]
    out = []
    for _ in range(count):
        inst = sample_shift(target_id, dim, rng)
        if any(s.shape == inst.shift.shape and np.array_equal(s, inst.shift) for s in taken):
            raise RuntimeError("held-out shift collides with a training shift")
        out.append(inst)
    return out


def arm_instance(case: str, n: int, target, radius: float) -> ObjectiveInstance:
    """Planar arm with ``n`` segments reaching for ``target``.

    ``sc`` searches the angles only (every segment has length 10);
    ``cc`` searches lengths in (0, 10) followed by angles in (-pi, pi).
    """
    case = case.lower()
    target = np.asarray(target, dtype=np.float64)
    if n < 1:
        raise ValueError("the arm needs at least one segment")
    if np.hypot(*target) > radius:
        raise ValueError(f"target {target.tolist()} lies outside radius {radius}")
    if case == "sc":
        return ObjectiveInstance("ArmSC", n, np.full(n, -np.pi), np.full(n, np.pi),
                                 target=target, radius=float(radius))
    if case == "cc":
        lower = np.concatenate([np.full(n, ARM_LENGTH_RANGE[0]), np.full(n, -np.pi)])
        upper = np.concatenate([np.full(n, ARM_LENGTH_RANGE[1]), np.full(n, np.pi)])
        return ObjectiveInstance("ArmCC", 2 * n, lower, upper, target=target, radius=float(radius))
    raise ValueError(f"arm case must be 'sc' or 'cc', got {case!r}")


def sample_arm_targets(count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Points uniform over the disk of ``radius`` (rejection sampling)."""
    out = np.empty((count, 2))
    filled = 0
    while filled < count:
        p = rng.uniform(-radius, radius, size=2)
        if np.hypot(*p) <= radius:
            out[filled] = p
            filled += 1
    return out


def make_arm_dataset(case: str, n: int, count: int, radius: float,
                     rng: np.random.Generator) -> FunctionSet:
    targets = sample_arm_targets(count, radius, rng)
    instances = tuple(arm_instance(case, n, p, radius) for p in targets)
    return FunctionSet(instances, "high", instances[0].id)
