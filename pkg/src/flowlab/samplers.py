"""Training-free generation and editing over velocity fields.

Four entry points:

* ``generate``       -- plain Euler integration of the flow from noise.
* ``flowedit``       -- edit-sequence baseline: the iterate starts at the
  clean source and accumulates target/source velocity differences.
* ``omniedit_sync``  -- target-sequence editor: the iterate starts at the
  noised source and is advanced together with the reconstructed source
  sequence; noise is re-estimated from the source velocity each step
  instead of redrawn (the ``random`` noise mode keeps redrawing, as the
  ablation arm).
* ``omniedit_av``    -- the dual-modality variant: video follows the
  target-sequence rule while paired audio streams are denoised alongside,
  with a pre-denoising phase when no source audio exists.

All samplers are single-threaded, own their RNG, and are bit-reproducible
from ``EditConfig.seed``. Distinct invocations may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .core import (
    Condition,
    DualVelocityField,
    TensorState,
    TimeSchedule,
    VelocityField,
    make_schedule,
)
from .errors import InvalidConfigError, NumericalError, ShapeMismatchError
from .rng import CounterRng

SEQUENCE_MODES = ("edit", "target")
NOISE_MODES = ("random", "estimated")


@dataclass(frozen=True)
class EditConfig:
    """Editing run parameters.

    ``n_max`` is the schedule index the edit starts from (t_max = n_max/T).
    ``sequence_mode`` and ``noise_mode`` are the two ablation switches.
    """

    T: int = 20
    n_max: int = 14
    sequence_mode: str = "target"
    noise_mode: str = "estimated"
    cfg_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise InvalidConfigError(f"T must be >= 2, got {self.T}")
        if not 1 <= self.n_max <= self.T:
            raise InvalidConfigError(f"n_max={self.n_max} outside 1..{self.T}")
        if self.sequence_mode not in SEQUENCE_MODES:
            raise InvalidConfigError(f"unknown sequence_mode {self.sequence_mode!r}")
        if self.noise_mode not in NOISE_MODES:
            raise InvalidConfigError(f"unknown noise_mode {self.noise_mode!r}")
        if self.cfg_scale < 0.0:
            raise InvalidConfigError(f"cfg_scale must be >= 0, got {self.cfg_scale}")

    @classmethod
    def from_skip(cls, T: int, skip: int, skip_is_index: bool = False, **kw) -> "EditConfig":
        """Build a config from a step budget and an initial-step count.

        By default ``skip`` steps are skipped from pure noise, so the edit
        starts at index T - skip (t_max below 1). Setting ``skip_is_index``
        selects the alternative reading n_max = skip.
        """
        n_max = int(skip) if skip_is_index else int(T) - int(skip)
        return cls(T=int(T), n_max=n_max, **kw)

    def schedule(self) -> TimeSchedule:
        return make_schedule(self.T, n_max=self.n_max)


def default_sync_config(**kw) -> EditConfig:
    """Single-modality editing defaults: 20 steps, 6 skipped from noise."""
    return EditConfig.from_skip(20, 6, **kw)


def default_av_config(**kw) -> EditConfig:
    """Dual-modality editing defaults: 40 steps, 12 skipped from noise."""
    return EditConfig.from_skip(40, 12, **kw)


@dataclass(frozen=True)
class StepRecord:
    """One velocity evaluation: states at t, the noise in use, velocities."""

    t: float
    x_src: np.ndarray | None
    x_main: np.ndarray | None
    eps: np.ndarray | None
    v_src: np.ndarray | None
    v_tar: np.ndarray | None


@dataclass
class Trajectory:
    steps: list[StepRecord] = dc_field(default_factory=list)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps])

    def source_stream(self) -> np.ndarray:
        if any(s.x_src is None for s in self.steps):
            raise InvalidConfigError("trajectory has no source stream")
        return np.stack([s.x_src for s in self.steps])

    def main_stream(self) -> np.ndarray:
        return np.stack([s.x_main for s in self.steps])


@dataclass(frozen=True)
class DualState:
    video: TensorState
    audio: TensorState

    def __post_init__(self):
        if self.video.modality != "video" or self.audio.modality != "audio":
            raise InvalidConfigError("dual state requires correctly tagged modalities")


@dataclass(frozen=True)
class AvStepRecord:
    t: float
    phase: str  # "pre" or "main"
    x_src: np.ndarray
    x_tar: np.ndarray
    a_src: np.ndarray
    a_tar: np.ndarray
    vv_src: np.ndarray
    vv_tar: np.ndarray
    av_src: np.ndarray
    av_tar: np.ndarray


@dataclass
class DualTrajectory:
    steps: list[AvStepRecord] = dc_field(default_factory=list)

    def audio_streams(self, phase: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        steps = [s for s in self.steps if phase is None or s.phase == phase]
        return np.stack([s.a_src for s in steps]), np.stack([s.a_tar for s in steps])

    def video_trajectory(self) -> Trajectory:
        return Trajectory(
            steps=[
                StepRecord(t=s.t, x_src=s.x_src, x_main=s.x_tar, eps=None,
                           v_src=s.vv_src, v_tar=s.vv_tar)
                for s in self.steps
                if s.phase == "main"
            ]
        )


def estimate_noise(x_src_t: TensorState, v_src: TensorState, t: float) -> TensorState:
    """Model-implied noise endpoint x + (1-t) * v of the straight path."""
    if x_src_t.shape != v_src.shape:
        raise ShapeMismatchError(f"shapes {x_src_t.shape} and {v_src.shape} differ")
    t = float(t)
    if not 0.0 <= t < 1.0:
        raise InvalidConfigError(f"t={t} outside [0, 1)")
    return x_src_t.with_array(x_src_t.data + (1.0 - t) * v_src.data)


def step_target(
    x_tar_i: TensorState,
    x_src_i: TensorState,
    x_src_prev: TensorState,
    v_tar: TensorState,
    v_src: TensorState,
    t_i: float,
    t_prev: float,
) -> TensorState:
    """One target-sequence step: advance by the velocity difference and the
    source increment, x_tar + (t_prev - t_i)(v_tar - v_src) + x_src_prev -
    x_src_i with t_prev < t_i."""
    states = (x_src_i, x_src_prev, v_tar, v_src)
    if any(s.shape != x_tar_i.shape for s in states):
        raise ShapeMismatchError("all step_target operands must share one shape")
    if not t_prev < t_i:
        raise InvalidConfigError(f"t_prev={t_prev} must be below t_i={t_i}")
    out = _step_target_arrays(
        x_tar_i.data, x_src_i.data, x_src_prev.data, v_tar.data, v_src.data, t_i, t_prev
    )
    return x_tar_i.with_array(out)


def _step_target_arrays(x_tar_i, x_src_i, x_src_prev, v_tar, v_src, t_i, t_prev):
    return x_tar_i + (t_prev - t_i) * (v_tar - v_src) + x_src_prev - x_src_i


def _checked_velocity(field: VelocityField, x: np.ndarray, c: Condition, t: float, step: int):
    v = field.velocity(x, c, t)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite velocity at step {step} (t={t:.6g})")
    return v


def _guided_velocity(field, x, c, t, cfg: EditConfig, step: int):
    """Target velocity with the guidance hook; scale 1.0 is a single
    conditional evaluation, matching the ungained reference path."""
    v_cond = _checked_velocity(field, x, c, t, step)
    if cfg.cfg_scale == 1.0:
        return v_cond
    v_uncond = _checked_velocity(field, x, Condition.null(c.dim), t, step)
    return v_uncond + cfg.cfg_scale * (v_cond - v_uncond)


def _resolve_rng(cfg: EditConfig, rng: CounterRng | None) -> CounterRng:
    return rng if rng is not None else CounterRng(cfg.seed)


def generate(
    field: VelocityField,
    x1: TensorState,
    c: Condition,
    schedule: TimeSchedule,
    record: bool = False,
):
    """Integrate dx = V(x, c, t) dt from t=1 down to t=0 with explicit Euler.

    Returns the t=0 state, or (state, Trajectory) when ``record`` is set.
    """
    if x1.shape[-1] != field.state_dim:
        raise ShapeMismatchError(f"state dim {x1.shape[-1]} != field dim {field.state_dim}")
    times = schedule.times
    x = x1.array.copy()
    traj = Trajectory()
    for i in range(schedule.T, 0, -1):
        t_i, t_prev = float(times[i]), float(times[i - 1])
        v = _checked_velocity(field, x, c, t_i, i)
        if record:
            traj.steps.append(
                StepRecord(t=t_i, x_src=None, x_main=x.copy(), eps=None, v_src=None, v_tar=v.copy())
            )
        x = x + (t_prev - t_i) * v
    out = x1.with_array(x)
    return (out, traj) if record else out


def flowedit(
    field: VelocityField,
    x_src: TensorState,
    c_src: Condition,
    c_tar: Condition,
    cfg: EditConfig,
    rng: CounterRng | None = None,
    record: bool = False,
):
    """Edit-sequence baseline.

    The iterate starts at the clean source and accumulates
    (t_prev - t_i)(V_tar - V_src), with the noisy source rebuilt each step
    from a fresh Gaussian (``random``) or from the running noise estimate
    (``estimated``). The implied target state is edit + noisy_src - src.
    """
    if cfg.sequence_mode != "edit":
        raise InvalidConfigError("flowedit requires sequence_mode='edit'")
    rng = _resolve_rng(cfg, rng)
    times = cfg.schedule().times
    src = x_src.array
    x_edit = src.copy()
    eps = None
    traj = Trajectory()
    for i in range(cfg.n_max, 0, -1):
        t_i, t_prev = float(times[i]), float(times[i - 1])
        if eps is None or cfg.noise_mode == "random":
            eps = rng.normal_array(src.shape)
        x_src_t = (1.0 - t_i) * src + t_i * eps
        x_tar_t = x_edit + x_src_t - src
        v_src = _checked_velocity(field, x_src_t, c_src, t_i, i)
        v_tar = _guided_velocity(field, x_tar_t, c_tar, t_i, cfg, i)
        if cfg.noise_mode == "estimated":
            eps = x_src_t + (1.0 - t_i) * v_src
        if record:
            traj.steps.append(
                StepRecord(t=t_i, x_src=x_src_t.copy(), x_main=x_tar_t.copy(),
                           eps=eps.copy(), v_src=v_src.copy(), v_tar=v_tar.copy())
            )
        x_edit = x_edit + (t_prev - t_i) * (v_tar - v_src)
    out = x_src.with_array(x_edit)
    return (out, traj) if record else out


def omniedit_sync(
    field: VelocityField,
    x_src: TensorState,
    c_src: Condition | None,
    c_tar: Condition,
    cfg: EditConfig,
    c_prompt: Condition | None = None,
    rng: CounterRng | None = None,
    record: bool = False,
):
    """Target-sequence editor for single-modality conditional editing.

    The target iterate is initialized at the noised source. When the source
    condition is missing, the initial noise is Gaussian and the source
    velocity is evaluated under the null condition; otherwise the noise is
    estimated from the model at t=0 and no random draws are consumed. With
    ``noise_mode='estimated'`` the noise is re-derived from the source
    velocity each step; ``'random'`` redraws it (ablation arm).
    """
    if c_tar is None:
        raise InvalidConfigError("target condition is required")
    if cfg.sequence_mode != "target":
        raise InvalidConfigError("omniedit_sync requires sequence_mode='target'")
    rng = _resolve_rng(cfg, rng)

    def combined(cond: Condition) -> Condition:
        return cond if c_prompt is None else cond.concat(c_prompt)

    src_cond = combined(c_src if c_src is not None else Condition.null(c_tar.dim))
    tar_cond = combined(c_tar)
    times = cfg.schedule().times
    src = x_src.array

    if c_src is None:
        eps = rng.normal_array(src.shape)
    else:
        eps = _checked_velocity(field, src, src_cond, 0.0, cfg.n_max) + src
    t_max = float(times[cfg.n_max])
    x_tar = (1.0 - t_max) * src + t_max * eps

    traj = Trajectory()
    for i in range(cfg.n_max, 0, -1):
        t_i, t_prev = float(times[i]), float(times[i - 1])
        if cfg.noise_mode == "random":
            eps = rng.normal_array(src.shape)
        x_src_t = (1.0 - t_i) * src + t_i * eps
        v_src = _checked_velocity(field, x_src_t, src_cond, t_i, i)
        v_tar = _guided_velocity(field, x_tar, tar_cond, t_i, cfg, i)
        if cfg.noise_mode == "estimated":
            eps = x_src_t + (1.0 - t_i) * v_src
        x_src_prev = (1.0 - t_prev) * src + t_prev * eps
        if record:
            traj.steps.append(
                StepRecord(t=t_i, x_src=x_src_t.copy(), x_main=x_tar.copy(),
                           eps=eps.copy(), v_src=v_src.copy(), v_tar=v_tar.copy())
            )
        x_tar = _step_target_arrays(x_tar, x_src_t, x_src_prev, v_tar, v_src, t_i, t_prev)
    out = x_src.with_array(x_tar)
    return (out, traj) if record else out


def _checked_dual(field2: DualVelocityField, video, audio, c: Condition, t: float, step: int):
    vv, av = field2.velocities(video, audio, c, t)
    if not (np.all(np.isfinite(vv)) and np.all(np.isfinite(av))):
        raise NumericalError(f"non-finite dual velocity at step {step} (t={t:.6g})")
    return vv, av


def _guided_dual(field2, video, audio, c, t, cfg: EditConfig, step: int):
    vv_c, av_c = _checked_dual(field2, video, audio, c, t, step)
    if cfg.cfg_scale == 1.0:
        return vv_c, av_c
    vv_u, av_u = _checked_dual(field2, video, audio, Condition.null(c.dim), t, step)
    s = cfg.cfg_scale
    return vv_u + s * (vv_c - vv_u), av_u + s * (av_c - av_u)


def omniedit_av(
    field2: DualVelocityField,
    x_src: TensorState,
    a_src: TensorState | None,
    c_src: Condition,
    c_tar: Condition,
    cfg: EditConfig,
    rng: CounterRng | None = None,
    record: bool = False,
):
    """Target-sequence editing of a coupled (video, audio) state pair.

    With source audio present, both modality noises are estimated from one
    joint t=0 evaluation and the audio pair follows the target-sequence rule
    next to the video. With source audio missing, both audio streams start
    from one shared Gaussian draw and are pre-denoised from t=1 down to
    t_max (fresh video noise each pre-step), then advanced by plain Euler
    while the video follows the target-sequence rule.
    """
    if c_src is None or c_tar is None:
        raise InvalidConfigError("source and target prompts are required")
    if cfg.sequence_mode != "target":
        raise InvalidConfigError("omniedit_av requires sequence_mode='target'")
    if cfg.noise_mode != "estimated":
        raise InvalidConfigError("the dual-modality editor implements estimated noise only")
    if x_src.shape[-1] != field2.video_dim:
        raise ShapeMismatchError(f"video dim {x_src.shape[-1]} != field {field2.video_dim}")
    if a_src is not None and a_src.shape[-1] != field2.audio_dim:
        raise ShapeMismatchError(f"audio dim {a_src.shape[-1]} != field {field2.audio_dim}")
    rng = _resolve_rng(cfg, rng)
    times = cfg.schedule().times
    t_max = float(times[cfg.n_max])
    src = x_src.array
    traj = DualTrajectory()

    if a_src is None:
        # Both audio streams start from the same realization and are
        # denoised down to t_max before the editing loop begins.
        eps_audio = rng.normal_array((*src.shape[:-1], field2.audio_dim))
        a_src_t = eps_audio.copy()
        a_tar_t = eps_audio.copy()
        eps_video = None
        for i in range(cfg.T, cfg.n_max, -1):
            t_i, t_prev = float(times[i]), float(times[i - 1])
            eps_video = rng.normal_array(src.shape)
            x_src_t = (1.0 - t_i) * src + t_i * eps_video
            x_tar_t = (1.0 - t_i) * src + t_i * eps_video
            vv_src, av_src = _checked_dual(field2, x_src_t, a_src_t, c_src, t_i, i)
            vv_tar, av_tar = _guided_dual(field2, x_tar_t, a_tar_t, c_tar, t_i, cfg, i)
            if record:
                traj.steps.append(AvStepRecord(
                    t=t_i, phase="pre", x_src=x_src_t.copy(), x_tar=x_tar_t.copy(),
                    a_src=a_src_t.copy(), a_tar=a_tar_t.copy(),
                    vv_src=vv_src.copy(), vv_tar=vv_tar.copy(),
                    av_src=av_src.copy(), av_tar=av_tar.copy(),
                ))
            a_src_t = a_src_t + (t_prev - t_i) * av_src
            a_tar_t = a_tar_t + (t_prev - t_i) * av_tar
        if eps_video is None:  # n_max == T: no pre-steps ran
            eps_video = rng.normal_array(src.shape)
        x_tar = (1.0 - t_max) * src + t_max * eps_video
    else:
        aud = a_src.array
        vv0, av0 = _checked_dual(field2, src, aud, c_src, 0.0, cfg.n_max)
        eps_video = vv0 + src
        eps_audio = av0 + aud
        a_src_t = (1.0 - t_max) * aud + t_max * eps_audio
        a_tar_t = (1.0 - t_max) * aud + t_max * eps_audio
        x_tar = (1.0 - t_max) * src + t_max * eps_video

    for i in range(cfg.n_max, 0, -1):
        t_i, t_prev = float(times[i]), float(times[i - 1])
        x_src_t = (1.0 - t_i) * src + t_i * eps_video
        vv_src, av_src = _checked_dual(field2, x_src_t, a_src_t, c_src, t_i, i)
        vv_tar, av_tar = _guided_dual(field2, x_tar, a_tar_t, c_tar, t_i, cfg, i)
        if record:
            traj.steps.append(AvStepRecord(
                t=t_i, phase="main", x_src=x_src_t.copy(), x_tar=x_tar.copy(),
                a_src=a_src_t.copy(), a_tar=a_tar_t.copy(),
                vv_src=vv_src.copy(), vv_tar=vv_tar.copy(),
                av_src=av_src.copy(), av_tar=av_tar.copy(),
            ))
        eps_audio = a_src_t + (1.0 - t_i) * av_src
        eps_video = x_src_t + (1.0 - t_i) * vv_src
        x_src_prev = (1.0 - t_prev) * src + t_prev * eps_video
        x_tar = _step_target_arrays(x_tar, x_src_t, x_src_prev, vv_tar, vv_src, t_i, t_prev)
        if a_src is None:
            a_src_t = a_src_t + (t_prev - t_i) * av_src
            a_tar_t = a_tar_t + (t_prev - t_i) * av_tar
        else:
            a_src_prev = (1.0 - t_prev) * a_src.array + t_prev * eps_audio
            a_tar_t = _step_target_arrays(a_tar_t, a_src_t, a_src_prev, av_tar, av_src, t_i, t_prev)
            a_src_t = a_src_prev

    out = DualState(
        video=TensorState(data=x_tar.ravel(), shape=x_src.shape, modality="video"),
        audio=TensorState(
            data=a_tar_t.ravel(),
            shape=a_src.shape if a_src is not None else (*x_src.shape[:-1], field2.audio_dim),
            modality="audio",
        ),
    )
    return (out, traj) if record else out
