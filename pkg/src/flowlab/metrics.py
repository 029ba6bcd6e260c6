"""Quantitative probes: trajectory smoothness, truncation bias against a
dense-grid oracle, structure preservation and empirical moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import TensorState
from .errors import InvalidConfigError, ShapeMismatchError
from .gaussian import GaussianSpec, marginal_velocity
from .samplers import Trajectory


@dataclass(frozen=True)
class MetricReport:
    """One named scalar with optional per-step breakdown and enough config
    echo (seed, T, n_max, modes) to reproduce the run."""

    name: str
    value: float
    aux: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InvalidConfigError(f"metric {self.name} is not finite")


_STREAMS = {"source": "source", "target": "main", "edit": "main", "main": "main"}


def smoothness(traj: Trajectory, stream: str = "source") -> float:
    """Mean squared norm of second differences along one recorded stream,
    normalized by interior point count and dimension. Zero exactly when the
    points are collinear in the step index."""
    if stream not in _STREAMS:
        raise InvalidConfigError(f"unknown stream {stream!r}; use source or target/edit")
    pts = traj.source_stream() if _STREAMS[stream] == "source" else traj.main_stream()
    pts = pts.reshape(pts.shape[0], -1)
    if pts.shape[0] < 3:
        raise InvalidConfigError(f"need >= 3 recorded steps, got {pts.shape[0]}")
    second = pts[2:] - 2.0 * pts[1:-1] + pts[:-2]
    return float(np.sum(second**2)) / (second.shape[0] * pts.shape[1])


def truncation_bias(
    src_spec: GaussianSpec,
    tar_spec: GaussianSpec,
    x_src: TensorState,
    t_max: float,
    eps: TensorState,
    grid_steps: int = 100_000,
) -> TensorState:
    """Edit-sequence terminal offset caused by starting at t_max < 1.

    Integrates the velocity-difference ODE on a dense Euler grid twice with
    the same shared noise: once truncated (iterate initialized at the clean
    source at t_max) and once over the full horizon (iterate initialized at
    the noised source at t=1, the boundary-consistent reference). Both runs
    track the offset of the implied target from the noised-source path, so
    identical specs give a bias of exactly zero. Returned per coordinate.
    """
    t_max = float(t_max)
    if not 0.0 < t_max <= 1.0:
        raise InvalidConfigError(f"t_max={t_max} outside (0, 1]")
    if x_src.shape != eps.shape:
        raise ShapeMismatchError(f"shapes {x_src.shape} and {eps.shape} differ")
    src, noise = x_src.array, eps.array

    def offset_run(horizon: float) -> np.ndarray:
        # offset of the implied target from the noised-source interpolant;
        # zero at the start time in both runs (clean source at t_max for the
        # truncated run, noised source at t=1 for the reference)
        steps = max(int(round(grid_steps * horizon)), 1)
        times = np.linspace(0.0, horizon, steps + 1)
        d = np.zeros_like(src)
        for i in range(steps, 0, -1):
            t_i, t_prev = float(times[i]), float(times[i - 1])
            x_src_t = (1.0 - t_i) * src + t_i * noise
            dv = marginal_velocity(tar_spec, x_src_t + d, t_i) - marginal_velocity(
                src_spec, x_src_t, t_i
            )
            d = d + (t_prev - t_i) * dv
        return d

    return x_src.with_array(offset_run(t_max) - offset_run(1.0))


def structure_distance(x_src: TensorState, x_out: TensorState) -> float:
    """RMS per-coordinate deviation of the edit output from its source."""
    if x_src.shape != x_out.shape:
        raise ShapeMismatchError(f"shapes {x_src.shape} and {x_out.shape} differ")
    return float(np.sqrt(np.mean((x_out.data - x_src.data) ** 2)))


def empirical_moments(samples) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of a collection of states."""
    if isinstance(samples, np.ndarray):
        x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    else:
        x = np.stack([s.data if isinstance(s, TensorState) else np.ravel(s) for s in samples])
    if x.shape[0] < 2:
        raise InvalidConfigError(f"need >= 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return mean, cov
