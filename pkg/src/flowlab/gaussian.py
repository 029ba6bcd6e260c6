"""Closed-form Gaussian endpoint distributions and their exact marginal
velocity fields; the ground truth against which sampler bias is measured.

For data x0 ~ N(mu, Sigma) and noise x1 ~ N(0, I) on the straight path
x_t = (1-t) x0 + t x1, the point x_t is Gaussian and the marginal velocity
E[x1 - x0 | x_t = x] has the closed form

    S_t = (1-t)^2 Sigma + t^2 I
    V(x, t) = (t I - (1-t) Sigma) S_t^{-1} (x - (1-t) mu) - mu

with the exact limit V(x, 1) = x - mu. Everything here accepts diagonal
covariances (stored as a 1-D vector) or full SPD matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Condition, TensorState
from .errors import (
    InsufficientSamplesError,
    InvalidConfigError,
    ShapeMismatchError,
)
from .rng import CounterRng


@dataclass(frozen=True)
class GaussianSpec:
    """Mean vector plus covariance, diagonal (1-D) or full SPD (2-D)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64, copy=True).ravel()
        cov = np.array(self.cov, dtype=np.float64, copy=True)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        d = mean.size
        if cov.ndim == 1:
            if cov.size != d:
                raise ShapeMismatchError(f"diagonal cov has size {cov.size}, mean has {d}")
            if np.any(cov <= 0.0):
                raise InvalidConfigError("diagonal covariance entries must be positive")
        elif cov.ndim == 2:
            if cov.shape != (d, d):
                raise ShapeMismatchError(f"cov shape {cov.shape} does not match dim {d}")
            if not np.allclose(cov, cov.T):
                raise InvalidConfigError("covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise InvalidConfigError("covariance is not positive definite") from exc
        else:
            raise ShapeMismatchError("cov must be a vector (diagonal) or a matrix")

    @classmethod
    def isotropic(cls, mean, var: float, dim: int | None = None) -> "GaussianSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        if dim is not None and mean.size == 1:
            mean = np.full(int(dim), float(mean[0]))
        return cls(mean=mean, cov=np.full(mean.size, float(var)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def is_diagonal(self) -> bool:
        return self.cov.ndim == 1

    def cov_matrix(self) -> np.ndarray:
        return np.diag(self.cov) if self.is_diagonal else np.asarray(self.cov)

    def scale_tril(self) -> np.ndarray:
        if self.is_diagonal:
            return np.diag(np.sqrt(self.cov))
        return np.linalg.cholesky(self.cov)


def marginal_velocity(spec: GaussianSpec, x: np.ndarray, t: float) -> np.ndarray:
    """Exact marginal velocity at points ``x`` of shape (..., dim)."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidConfigError(f"t={t} outside [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.dim:
        raise ShapeMismatchError(f"x last axis {x.shape[-1]} != spec dim {spec.dim}")
    if t == 1.0:
        return x - spec.mean
    centered = x - (1.0 - t) * spec.mean
    if spec.is_diagonal:
        s_t = (1.0 - t) ** 2 * spec.cov + t * t
        return (t - (1.0 - t) * spec.cov) / s_t * centered - spec.mean
    sigma = spec.cov_matrix()
    s_t = (1.0 - t) ** 2 * sigma + t * t * np.eye(spec.dim)
    m = t * np.eye(spec.dim) - (1.0 - t) * sigma
    y = np.linalg.solve(s_t, centered[..., None])[..., 0]
    return y @ m.T - spec.mean


def gaussian_marginal_velocity(spec: GaussianSpec, x: TensorState, t: float) -> TensorState:
    return x.with_array(marginal_velocity(spec, x.array, t))


@dataclass(frozen=True)
class McVelocityEstimate:
    value: np.ndarray
    stderr: np.ndarray
    effective_samples: float
    n: int


def mc_conditional_velocity(
    spec: GaussianSpec,
    x,
    t: float,
    n: int,
    rng: CounterRng,
    bandwidth: float | None = None,
) -> McVelocityEstimate:
    """Brute-force kernel estimate of E[x1 - x0 | x_t ~ x].

    Draws n (x0, x1) pairs, weights them with a Gaussian kernel of width
    ``bandwidth`` (default 0.05 * sqrt(t)) around the query point, and
    returns the weighted mean of x1 - x0 with a per-coordinate standard
    error of the weighted mean.
    """
    if n < 10_000:
        raise InvalidConfigError(f"need n >= 1e4 Monte Carlo samples, got {n}")
    if bandwidth is None:
        bandwidth = 0.05 * float(np.sqrt(t))
    if not bandwidth > 0.0:
        raise InvalidConfigError(f"bandwidth must be positive, got {bandwidth}")
    x = x.array if isinstance(x, TensorState) else np.asarray(x, dtype=np.float64)
    x = x.ravel()
    if x.size != spec.dim:
        raise ShapeMismatchError(f"query dim {x.size} != spec dim {spec.dim}")

    x0 = sample_array(spec, n, rng)
    x1 = rng.normal_array((n, spec.dim))
    xt = (1.0 - t) * x0 + t * x1
    sq = np.sum((xt - x) ** 2, axis=1)
    w = np.exp(-0.5 * sq / bandwidth**2)
    wsum = float(np.sum(w))
    ess = wsum**2 / float(np.sum(w**2)) if wsum > 0.0 else 0.0
    if ess < 30.0:
        raise InsufficientSamplesError(
            f"effective sample size {ess:.1f} < 30 at x={x}, t={t}; "
            "increase n or the bandwidth"
        )
    y = x1 - x0
    value = (w @ y) / wsum
    resid = y - value
    stderr = np.sqrt((w**2) @ resid**2) / wsum
    return McVelocityEstimate(value=value, stderr=stderr, effective_samples=ess, n=n)


def sample_array(spec: GaussianSpec, n: int, rng: CounterRng) -> np.ndarray:
    """n iid draws as an (n, dim) array, via Cholesky transform."""
    if n < 1:
        raise InvalidConfigError(f"need n >= 1 samples, got {n}")
    z = rng.normal_array((int(n), spec.dim))
    if spec.is_diagonal:
        return spec.mean + z * np.sqrt(spec.cov)
    return spec.mean + z @ spec.scale_tril().T


def sample_gaussian(spec: GaussianSpec, n: int, rng: CounterRng) -> list[TensorState]:
    return [TensorState.from_array(row) for row in sample_array(spec, n, rng)]


def _sqrtm_spd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    vals, vecs = np.linalg.eigh(a)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def w2_gaussian(a: GaussianSpec, b: GaussianSpec) -> float:
    """Closed-form 2-Wasserstein distance between Gaussians.

    sqrt(||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2)).
    """
    if a.dim != b.dim:
        raise ShapeMismatchError(f"dimension mismatch {a.dim} vs {b.dim}")
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    if a.is_diagonal and b.is_diagonal:
        cov_term = float(np.sum((np.sqrt(a.cov) - np.sqrt(b.cov)) ** 2))
    else:
        sa, sb = a.cov_matrix(), b.cov_matrix()
        rb = _sqrtm_spd(sb)
        cross = _sqrtm_spd(rb @ sa @ rb)
        cov_term = float(np.trace(sa) + np.trace(sb) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(mean_term + cov_term, 0.0)))


def ot_map(src: GaussianSpec, tar: GaussianSpec) -> tuple[np.ndarray, np.ndarray]:
    """Affine optimal-transport map x -> A x + b between two Gaussians.

    A = S_s^{-1/2} (S_s^{1/2} S_t S_s^{1/2})^{1/2} S_s^{-1/2}; the map sends
    src exactly onto tar and is the per-sample reference for an ideal edit.
    """
    if src.dim != tar.dim:
        raise ShapeMismatchError(f"dimension mismatch {src.dim} vs {tar.dim}")
    if src.is_diagonal and tar.is_diagonal:
        a = np.diag(np.sqrt(tar.cov / src.cov))
    else:
        rs = _sqrtm_spd(src.cov_matrix())
        rs_inv = np.linalg.inv(rs)
        a = rs_inv @ _sqrtm_spd(rs @ tar.cov_matrix() @ rs) @ rs_inv
    b = tar.mean - a @ src.mean
    return a, b


class GaussianConditionalField:
    """Velocity field dispatching on the condition to a registered spec.

    Conditions are matched exactly (null flag plus vector bytes); unknown
    conditions raise. This is the oracle stand-in for a conditional model.
    """

    def __init__(self, condition_dim: int, state_dim: int):
        self.condition_dim = int(condition_dim)
        self.state_dim = int(state_dim)
        self._specs: dict[tuple, GaussianSpec] = {}

    @staticmethod
    def _key(condition: Condition) -> tuple:
        return (condition.is_null, condition.vector.tobytes())

    def register(self, condition: Condition, spec: GaussianSpec) -> "GaussianConditionalField":
        if condition.dim != self.condition_dim:
            raise ShapeMismatchError(
                f"condition dim {condition.dim} != field condition_dim {self.condition_dim}"
            )
        if spec.dim != self.state_dim:
            raise ShapeMismatchError(f"spec dim {spec.dim} != field state_dim {self.state_dim}")
        self._specs[self._key(condition)] = spec
        return self

    def spec_for(self, condition: Condition) -> GaussianSpec:
        try:
            return self._specs[self._key(condition)]
        except KeyError:
            raise InvalidConfigError(
                f"no spec registered for condition {condition.vector.tolist()}"
                f" (null={condition.is_null}); {len(self._specs)} registered"
            ) from None

    def velocity(self, x: np.ndarray, condition: Condition, t: float) -> np.ndarray:
        return marginal_velocity(self.spec_for(condition), x, t)


class AnalyticDualField:
    """Joint (video, audio) oracle built from two conditional fields.

    Mirrors a dual-stream backbone: one call returns both modality
    velocities; the toy coupling is that both streams share the prompt.
    """

    def __init__(self, video_field: GaussianConditionalField, audio_field: GaussianConditionalField):
        if video_field.condition_dim != audio_field.condition_dim:
            raise ShapeMismatchError("video and audio fields must share the condition dim")
        self.video_field = video_field
        self.audio_field = audio_field
        self.video_dim = video_field.state_dim
        self.audio_dim = audio_field.state_dim
        self.condition_dim = video_field.condition_dim

    def velocities(
        self, video: np.ndarray, audio: np.ndarray, condition: Condition, t: float
    ) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.video_field.velocity(video, condition, t),
            self.audio_field.velocity(audio, condition, t),
        )
