"""Rectified-flow building blocks: states, schedules, conditions and the
interpolation/velocity arithmetic every sampler is made of.

Convention throughout the package: t=0 is data, t=1 is standard normal
noise, and the straight path between endpoints is
``x_t = (1-t) * x0 + t * x1`` with constant pair velocity ``x1 - x0``.
Generation therefore integrates from t=1 down to t=0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import InvalidConfigError, ShapeMismatchError
from .rng import CounterRng

MODALITIES = ("video", "audio", "generic")


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TensorState:
    """A flat real vector plus its logical shape and modality tag.

    The leading axes of ``shape`` may act as batch axes; all field and
    sampler arithmetic broadcasts over everything but the last axis.
    """

    data: np.ndarray
    shape: tuple[int, ...]
    modality: str = "generic"

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(np.ravel(self.data)))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if int(np.prod(self.shape, dtype=int)) != self.data.size:
            raise ShapeMismatchError(
                f"shape {self.shape} does not match data length {self.data.size}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InvalidConfigError("state entries must be finite")
        if self.modality not in MODALITIES:
            raise InvalidConfigError(f"unknown modality {self.modality!r}")

    @classmethod
    def from_array(cls, arr, modality: str = "generic") -> "TensorState":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(data=arr.ravel(), shape=arr.shape if arr.shape else (1,), modality=modality)

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @property
    def dim(self) -> int:
        return self.data.size

    def with_array(self, arr) -> "TensorState":
        return TensorState(data=np.ravel(arr), shape=self.shape, modality=self.modality)


@dataclass(frozen=True)
class Condition:
    """Conditioning vector with an explicit null flag.

    A null condition is the all-zero vector; it stands in for unconditional
    evaluation (the usual null-embedding convention).
    """

    vector: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        object.__setattr__(self, "vector", _frozen(np.ravel(self.vector)))
        if self.is_null and np.any(self.vector != 0.0):
            raise InvalidConfigError("null condition must have an all-zero vector")

    @classmethod
    def null(cls, dim: int) -> "Condition":
        return cls(vector=np.zeros(int(dim)), is_null=True)

    @classmethod
    def one_hot(cls, index: int, dim: int) -> "Condition":
        vec = np.zeros(int(dim))
        vec[int(index)] = 1.0
        return cls(vector=vec)

    @property
    def dim(self) -> int:
        return self.vector.size

    def concat(self, other: "Condition") -> "Condition":
        return Condition(
            vector=np.concatenate([self.vector, other.vector]),
            is_null=self.is_null and other.is_null,
        )


@dataclass(frozen=True)
class TimeSchedule:
    """Discretization {t_i}, i = 0..T, ascending in index, traversed in
    decreasing t by the samplers. ``n_max`` marks the editing start index,
    with t_max = times[n_max]."""

    times: np.ndarray
    n_max: int

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times))
        t = self.times
        if t.size < 3 or t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0.0):
            raise InvalidConfigError(
                "times must run strictly increasing from 0 to 1 with T >= 2 steps"
            )
        if not 1 <= self.n_max <= self.T:
            raise InvalidConfigError(f"n_max={self.n_max} outside 1..{self.T}")

    @property
    def T(self) -> int:
        return self.times.size - 1

    @property
    def t_max(self) -> float:
        return float(self.times[self.n_max])


def make_schedule(T: int, kind: str = "linear", n_max: int | None = None) -> TimeSchedule:
    """Uniform grid times[i] = i/T. ``n_max`` defaults to T (full horizon)."""
    if kind != "linear":
        raise InvalidConfigError(f"unknown schedule kind {kind!r}")
    if int(T) < 2:
        raise InvalidConfigError(f"T must be >= 2, got {T}")
    T = int(T)
    return TimeSchedule(times=np.arange(T + 1) / T, n_max=T if n_max is None else int(n_max))


@runtime_checkable
class VelocityField(Protocol):
    """Evaluable map (state, condition, t) -> velocity of identical shape."""

    state_dim: int
    condition_dim: int

    def velocity(self, x: np.ndarray, condition: Condition, t: float) -> np.ndarray:
        """Velocity for points ``x`` of shape (..., state_dim)."""
        ...


@runtime_checkable
class DualVelocityField(Protocol):
    """Joint field over a (video, audio) state pair; one invocation returns
    both modality velocities."""

    video_dim: int
    audio_dim: int
    condition_dim: int

    def velocities(
        self, video: np.ndarray, audio: np.ndarray, condition: Condition, t: float
    ) -> tuple[np.ndarray, np.ndarray]:
        ...


def eval_field(field: VelocityField, state: TensorState, condition: Condition, t: float) -> TensorState:
    """TensorState-level field evaluation with the shape contract enforced."""
    if state.shape[-1] != field.state_dim:
        raise ShapeMismatchError(
            f"state last axis {state.shape[-1]} != field state_dim {field.state_dim}"
        )
    if condition.dim != field.condition_dim:
        raise ShapeMismatchError(
            f"condition dim {condition.dim} != field condition_dim {field.condition_dim}"
        )
    v = field.velocity(state.array, condition, float(t))
    if v.shape != state.array.shape:
        raise ShapeMismatchError(f"field returned shape {v.shape}, expected {state.array.shape}")
    return state.with_array(v)


def _check_same_shape(a: TensorState, b: TensorState, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


def interpolate(x0: TensorState, x1: TensorState, t: float) -> TensorState:
    """Straight-path point (1-t)*x0 + t*x1, for t in [0, 1]."""
    _check_same_shape(x0, x1, "interpolate")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidConfigError(f"t={t} outside [0, 1]")
    return x0.with_array((1.0 - t) * x0.data + t * x1.data)


def conditional_velocity(x0: TensorState, x1: TensorState) -> TensorState:
    """Constant pair velocity x1 - x0."""
    _check_same_shape(x0, x1, "conditional_velocity")
    return x0.with_array(x1.data - x0.data)


def noisy_source(x_src: TensorState, eps: TensorState, t: float) -> TensorState:
    """Noised source state (1-t)*x_src + t*eps; identical to interpolate."""
    return interpolate(x_src, eps, t)


def cfg_combine(v_cond: TensorState, v_uncond: TensorState, scale: float) -> TensorState:
    """Classifier-free guidance: v_uncond + scale * (v_cond - v_uncond)."""
    _check_same_shape(v_cond, v_uncond, "cfg_combine")
    scale = float(scale)
    if scale < 0.0:
        raise InvalidConfigError(f"guidance scale must be >= 0, got {scale}")
    return v_cond.with_array(v_uncond.data + scale * (v_cond.data - v_uncond.data))


def fm_loss(
    field: VelocityField,
    batch: Sequence[tuple[TensorState, Condition]],
    rng: CounterRng,
) -> float:
    """Flow-matching regression loss on a batch of (data point, condition).

    For each batch element, draws the noise endpoint x1 ~ N(0, I) (dim
    normals) and then t (one uniform), forms x_t on the straight path and
    accumulates ||field(x_t, c, t) - (x1 - x0)||^2; returns the batch mean.
    Deterministic given the rng seed; draw order is per-sample, x1 first.
    """
    if len(batch) == 0:
        raise InvalidConfigError("fm_loss requires a non-empty batch")
    total = 0.0
    for x0, cond in batch:
        x1 = x0.with_array(rng.standard_normal(x0.dim))
        t = rng.uniform()
        x_t = interpolate(x0, x1, t)
        target = x1.data - x0.data
        pred = eval_field(field, x_t, cond, t)
        total += float(np.sum((pred.data - target) ** 2))
    return total / len(batch)
