"""Experiment orchestration: seed sweeps, the 2x2 ablation, oracle checks,
CSV/SVG emission and run manifests.

Determinism contract: identical resolved configuration produces
byte-identical CSV and SVG outputs; wall-clock timestamps live only in the
manifest. Seed sweeps run in seed order and each run derives its own
data/sampler streams from the sweep seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Condition, TensorState, make_schedule
from .errors import InvalidConfigError, NumericalError
from .gaussian import (
    AnalyticDualField,
    GaussianConditionalField,
    GaussianSpec,
    marginal_velocity,
    mc_conditional_velocity,
    ot_map,
    sample_array,
    w2_gaussian,
)
from .data import AvSynthParams, CoupledAvDataset, synth_av_dataset
from .metrics import MetricReport, empirical_moments, smoothness, structure_distance, truncation_bias
from .mlp import MlpDualField, MlpVelocityField, TrainConfig, TrainReport, load_model, mlp_init, train
from .rng import RNG_ALGORITHM, CounterRng, derive_seed
from .samplers import EditConfig, flowedit, generate, omniedit_av, omniedit_sync
from .svgplot import line_plot

SUMMARY_COLUMNS = (
    "experiment", "seq_mode", "noise_mode", "T", "n_max", "seed_count", "metric", "mean", "stderr",
)

ABLATION_CELLS = (
    ("edit", "random"),
    ("edit", "estimated"),
    ("target", "random"),
    ("target", "estimated"),
)


def _num(x: float) -> str:
    return format(float(x), ".12g")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment: the subcommand kind plus a flat parameter map.

    The canonical form (sorted ``key=value`` lines prefixed by the kind) is
    what gets hashed into the manifest, so semantically identical configs
    share a hash regardless of file formatting."""

    kind: str
    params: dict

    def __post_init__(self):
        if not self.params.get("seeds", 1):
            raise InvalidConfigError("seed list must be non-empty")

    def canonical(self) -> str:
        lines = [f"kind={self.kind}"]
        for key in sorted(self.params):
            value = self.params[key]
            if value is None:
                continue
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM
    outputs: list[str] = dc_field(default_factory=list)
    created_utc: str = ""

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        payload = {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "rng_algorithm": self.rng_algorithm,
            "outputs": self.outputs,
            "created_utc": self.created_utc
            or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def pair_field(
    src_spec: GaussianSpec, tar_spec: GaussianSpec
) -> tuple[GaussianConditionalField, Condition, Condition]:
    """Two-condition analytic field: one-hot source/target conditions, with
    the source spec standing in for the unconditional (null) distribution."""
    if src_spec.dim != tar_spec.dim:
        raise InvalidConfigError("source and target specs must share a dimension")
    c_src, c_tar = Condition.one_hot(0, 2), Condition.one_hot(1, 2)
    field = GaussianConditionalField(condition_dim=2, state_dim=src_spec.dim)
    field.register(c_src, src_spec).register(c_tar, tar_spec)
    field.register(Condition.null(2), src_spec)
    return field, c_src, c_tar


@dataclass
class EditRun:
    seed: int
    output: np.ndarray
    x_src: np.ndarray
    structure: float
    residual: np.ndarray
    smoothness_source: float
    trajectory: object


def run_edit_sweep(
    src_spec: GaussianSpec,
    tar_spec: GaussianSpec,
    seeds: list[int],
    edit_cfg: EditConfig,
    identity: bool = False,
) -> list[EditRun]:
    """Run one editing configuration over a seed list on the analytic pair.

    Per seed, the source sample and the sampler noise use independent
    derived streams so paired sweeps across modes stay matched. The
    residual is measured against the Gaussian optimal-transport map of the
    pair (the exact per-sample edit for Gaussian endpoints)."""
    field, c_src, c_tar = pair_field(src_spec, tar_spec)
    if identity:
        c_tar = c_src
    a_map, b_map = ot_map(src_spec, tar_spec)
    runs = []
    for seed in seeds:
        data_rng = CounterRng(derive_seed(seed, 1))
        x_src = TensorState.from_array(sample_array(src_spec, 1, data_rng)[0])
        cfg = EditConfig(
            T=edit_cfg.T, n_max=edit_cfg.n_max, sequence_mode=edit_cfg.sequence_mode,
            noise_mode=edit_cfg.noise_mode, cfg_scale=edit_cfg.cfg_scale,
            seed=derive_seed(seed, 2),
        )
        if cfg.sequence_mode == "edit":
            out, traj = flowedit(field, x_src, c_src, c_tar, cfg, record=True)
        else:
            out, traj = omniedit_sync(field, x_src, c_src, c_tar, cfg, record=True)
        ideal = x_src.array @ a_map.T + b_map if not identity else x_src.array
        runs.append(
            EditRun(
                seed=seed,
                output=out.array.copy(),
                x_src=x_src.array.copy(),
                structure=structure_distance(x_src, out),
                residual=out.array - ideal,
                smoothness_source=smoothness(traj, "source") if len(traj.steps) >= 3 else 0.0,
                trajectory=traj,
            )
        )
    return runs


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def sweep_reports(
    runs: list[EditRun], tar_spec: GaussianSpec, cfg: EditConfig, experiment: str
) -> list[MetricReport]:
    """Aggregate a sweep into the four benchmark metrics.

    ``bias_norm`` and the per-seed metrics are seed averages with standard
    errors; ``fitted_w2`` fits Gaussian moments to the pooled outputs and is
    reported without a standard error."""
    outputs = np.stack([r.output for r in runs])
    config_echo = {
        "experiment": experiment, "seq_mode": cfg.sequence_mode, "noise_mode": cfg.noise_mode,
        "T": cfg.T, "n_max": cfg.n_max, "seed_count": len(runs),
    }
    mean, cov = empirical_moments(outputs)
    fitted = GaussianSpec(mean=mean, cov=cov + 1e-12 * np.eye(mean.size))
    reports = [
        MetricReport("fitted_w2", w2_gaussian(fitted, tar_spec), config=config_echo)
    ]
    for name, values in (
        ("bias_norm", [float(np.linalg.norm(r.residual)) for r in runs]),
        ("smoothness", [r.smoothness_source for r in runs]),
        ("structure_distance", [r.structure for r in runs]),
    ):
        m, se = _mean_stderr(np.array(values))
        reports.append(MetricReport(name, m, aux={"stderr": se}, config=config_echo))
    return reports


def run_ablation(
    src_spec: GaussianSpec,
    tar_spec: GaussianSpec,
    seeds: list[int],
    T: int,
    n_max: int,
    cfg_scale: float = 1.0,
) -> list[MetricReport]:
    """The 2x2 sequence/noise ablation on matched seeds: 16 metric rows."""
    reports = []
    for seq_mode, noise_mode in ABLATION_CELLS:
        cfg = EditConfig(
            T=T, n_max=n_max, sequence_mode=seq_mode, noise_mode=noise_mode, cfg_scale=cfg_scale
        )
        runs = run_edit_sweep(src_spec, tar_spec, seeds, cfg)
        reports.extend(sweep_reports(runs, tar_spec, cfg, "ablation"))
    return reports


def run_oracle_check(
    dims: tuple[int, ...] = (1, 2), n: int = 200_000, seed: int = 0, tolerance_sigmas: float = 3.0
) -> tuple[list[dict], bool]:
    """Compare the closed-form marginal velocity against the Monte Carlo
    conditional-expectation estimate.

    1D probes a 5x5 (x, t) grid spanning +-1.5 marginal standard deviations;
    higher dims probe 10 derived-seed random points at milder noise levels
    (the product kernel starves at small t past one dimension). Returns
    per-probe rows and whether every coordinate agreed within
    ``tolerance_sigmas`` reported standard errors."""
    rows: list[dict] = []
    ok = True
    t_grid = (0.1, 0.3, 0.5, 0.7, 0.9)
    t_grid_nd = (0.3, 0.5, 0.7, 0.9)
    for dim in dims:
        spec = GaussianSpec.isotropic(0.5, 1.0, dim=dim) if dim > 1 else GaussianSpec.isotropic(0.5, 1.0)
        probe_rng = CounterRng(derive_seed(seed, 900 + dim))
        if dim == 1:
            probes = []
            for t in t_grid:
                s_t = (1.0 - t) ** 2 * float(spec.cov[0]) + t * t
                center = (1.0 - t) * spec.mean
                for offset in (-1.5, -0.75, 0.0, 0.75, 1.5):
                    probes.append((center + offset * np.sqrt(s_t), t))
        else:
            probes = []
            for k in range(10):
                t = t_grid_nd[k % len(t_grid_nd)]
                s_t = (1.0 - t) ** 2 * spec.cov + t * t
                x = (1.0 - t) * spec.mean + probe_rng.normal_array(dim) * np.sqrt(s_t)
                probes.append((x, t))
        for k, (x, t) in enumerate(probes):
            mc_rng = CounterRng(derive_seed(seed, 1000 * dim + k))
            est = mc_conditional_velocity(spec, x, t, n, mc_rng)
            closed = marginal_velocity(spec, np.asarray(x, dtype=float), t)
            z = np.abs(est.value - closed) / est.stderr
            agree = bool(np.all(z <= tolerance_sigmas))
            ok = ok and agree
            rows.append(
                {
                    "dim": dim, "t": t,
                    "x": " ".join(_num(v) for v in np.atleast_1d(x)),
                    "closed": " ".join(_num(v) for v in np.atleast_1d(closed)),
                    "mc": " ".join(_num(v) for v in est.value),
                    "stderr": " ".join(_num(v) for v in est.stderr),
                    "max_z": _num(float(np.max(z))),
                    "ess": _num(est.effective_samples),
                    "agree": int(agree),
                }
            )
    return rows, ok


def emit_report(
    reports: list[MetricReport], out_dir, plot: bool = False, plots: list[tuple[str, str]] | None = None
) -> list[str]:
    """Write ``summary.csv`` (fixed column order) plus any prepared SVGs.

    Returns the written file names, in write order."""
    if not reports:
        raise InvalidConfigError("no reports to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for rep in reports:
        cfg = rep.config
        writer.writerow(
            [
                cfg.get("experiment", ""), cfg.get("seq_mode", ""), cfg.get("noise_mode", ""),
                cfg.get("T", ""), cfg.get("n_max", ""), cfg.get("seed_count", ""),
                rep.name, _num(rep.value), _num(rep.aux.get("stderr", 0.0)),
            ]
        )
    (out_dir / "summary.csv").write_text(buf.getvalue())
    files.append("summary.csv")
    if plot and plots:
        for name, svg_text in plots:
            (out_dir / name).write_text(svg_text)
            files.append(name)
    return files


def write_per_seed_csv(runs: list[EditRun], cfg: EditConfig, out_dir, experiment: str) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = runs[0].output.size
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["experiment", "seq_mode", "noise_mode", "T", "n_max", "seed"]
        + [f"out_{j}" for j in range(dim)]
        + ["structure_distance", "residual_norm", "smoothness_source"]
    )
    for r in runs:
        writer.writerow(
            [experiment, cfg.sequence_mode, cfg.noise_mode, cfg.T, cfg.n_max, r.seed]
            + [_num(v) for v in r.output]
            + [_num(r.structure), _num(float(np.linalg.norm(r.residual))), _num(r.smoothness_source)]
        )
    (out_dir / "edits.csv").write_text(buf.getvalue())
    return "edits.csv"


def summarize_per_seed_csv(path) -> list[MetricReport]:
    """Rebuild summary metrics from a previously written edits.csv."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidConfigError(f"no rows in {path}")
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["experiment"], row["seq_mode"], row["noise_mode"], row["T"], row["n_max"])
        groups.setdefault(key, []).append(row)
    reports = []
    for key, grp in sorted(groups.items()):
        config_echo = {
            "experiment": key[0], "seq_mode": key[1], "noise_mode": key[2],
            "T": key[3], "n_max": key[4], "seed_count": len(grp),
        }
        for metric, column in (
            ("bias_norm", "residual_norm"),
            ("smoothness", "smoothness_source"),
            ("structure_distance", "structure_distance"),
        ):
            m, se = _mean_stderr(np.array([float(r[column]) for r in grp]))
            reports.append(MetricReport(metric, m, aux={"stderr": se}, config=config_echo))
    return reports


def trajectory_plot(runs: list[EditRun], cfg: EditConfig) -> str:
    """Coordinate-0 source and target/edit streams of the first run."""
    traj = runs[0].trajectory
    times = traj.times()
    return line_plot(
        [
            ("source stream", times, traj.source_stream()[:, 0]),
            ("target stream", times, traj.main_stream()[:, 0]),
            ],
        title=f"edit trajectories (seed {runs[0].seed}, {cfg.sequence_mode}/{cfg.noise_mode})",
        xlabel="t",
        ylabel="coordinate 0",
    )


def bias_curve_plot(src_spec: GaussianSpec, tar_spec: GaussianSpec, grid_steps: int = 20_000) -> str:
    """Dense-oracle truncation-bias norm as a function of t_max."""
    x_src = TensorState.from_array(np.zeros(src_spec.dim))
    eps = TensorState.from_array(np.zeros(src_spec.dim))
    t_values = np.linspace(0.1, 1.0, 10)
    norms = [
        float(np.linalg.norm(truncation_bias(src_spec, tar_spec, x_src, t, eps, grid_steps).data))
        for t in t_values
    ]
    return line_plot(
        [("oracle bias norm", t_values, np.array(norms))],
        title="truncation bias vs t_max (dense-grid oracle)",
        xlabel="t_max",
        ylabel="bias norm",
    )


def default_av_params() -> "AvSynthParams":
    """Two well-separated classes: 2D video, 1D linearly coupled audio."""
    return AvSynthParams(
        video_means=np.array([[-2.0, 0.0], [2.0, 0.0]]),
        audio_offsets=np.array([[-1.5], [1.5]]),
        coupling=np.array([[0.8, -0.3]]),
        video_scale=0.45,
        noise_scale=0.1,
    )


def train_av_model(
    params: "AvSynthParams",
    n_samples: int = 2048,
    widths: tuple[int, ...] = (48, 48),
    epochs: int = 160,
    batch_size: int = 96,
    learning_rate: float = 3e-3,
    seed: int = 0,
) -> tuple[MlpDualField, "TrainReport", "CoupledAvDataset"]:
    """Synthesize a coupled AV dataset and fit a joint velocity model on it."""
    dataset = synth_av_dataset(params, n_samples, seed=derive_seed(seed, 7))
    joint_dim = params.video_dim + params.audio_dim
    model = mlp_init([*widths, joint_dim], condition_dim=params.num_classes, seed=seed)
    report = train(
        model,
        dataset.joint_pairs(),
        TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed),
    )
    return MlpDualField(model, params.video_dim, params.audio_dim), report, dataset


@dataclass
class AvEditRun:
    seed: int
    video_out: np.ndarray
    audio_out: np.ndarray
    video_src: np.ndarray
    audio_src: np.ndarray
    target_sigmas: float


def run_avedit_sweep(
    field2,
    params: "AvSynthParams",
    seeds: list[int],
    edit_cfg: EditConfig,
    src_class: int = 0,
    tar_class: int = 1,
) -> list[AvEditRun]:
    """Class-swap edits on synthesized sources.

    ``target_sigmas`` is the video output's distance to the target-class
    mean in units of the within-class standard deviation."""
    runs = []
    tar_mean = params.video_means[tar_class]
    for seed in seeds:
        data_rng = CounterRng(derive_seed(seed, 1))
        v = params.video_means[src_class] + params.video_scale * data_rng.normal_array(
            params.video_dim
        )
        a = (
            params.coupling @ v
            + params.audio_offsets[src_class]
            + params.noise_scale * data_rng.normal_array(params.audio_dim)
        )
        cfg = EditConfig(
            T=edit_cfg.T, n_max=edit_cfg.n_max, sequence_mode=edit_cfg.sequence_mode,
            noise_mode=edit_cfg.noise_mode, cfg_scale=edit_cfg.cfg_scale,
            seed=derive_seed(seed, 2),
        )
        out = omniedit_av(
            field2,
            TensorState.from_array(v, modality="video"),
            TensorState.from_array(a, modality="audio"),
            Condition.one_hot(src_class, params.num_classes),
            Condition.one_hot(tar_class, params.num_classes),
            cfg,
        )
        dist = float(np.linalg.norm(out.video.data - tar_mean)) / params.video_scale
        runs.append(
            AvEditRun(
                seed=seed, video_out=out.video.data.copy(), audio_out=out.audio.data.copy(),
                video_src=v.copy(), audio_src=a.copy(), target_sigmas=dist,
            )
        )
    return runs


def write_avedit_csv(runs: list[AvEditRun], cfg: EditConfig, out_dir) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dv, da = runs[0].video_out.size, runs[0].audio_out.size
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["T", "n_max", "seed"]
        + [f"video_out_{j}" for j in range(dv)]
        + [f"audio_out_{j}" for j in range(da)]
        + ["target_sigmas"]
    )
    for r in runs:
        writer.writerow(
            [cfg.T, cfg.n_max, r.seed]
            + [_num(v) for v in r.video_out]
            + [_num(v) for v in r.audio_out]
            + [_num(r.target_sigmas)]
        )
    (out_dir / "avedits.csv").write_text(buf.getvalue())
    return "avedits.csv"


def run_generate_sweep(
    spec: GaussianSpec, n: int, T: int, seed: int
) -> tuple[np.ndarray, list[MetricReport]]:
    """Transport n standard-normal draws through the analytic field."""
    field, c_src, _ = pair_field(spec, spec)
    rng = CounterRng(derive_seed(seed, 3))
    noise = TensorState.from_array(rng.normal_array((n, spec.dim)))
    out = generate(field, noise, c_src, make_schedule(T))
    samples = out.array
    mean, cov = empirical_moments(samples)
    fitted = GaussianSpec(mean=mean, cov=cov + 1e-12 * np.eye(spec.dim))
    config_echo = {"experiment": "generate", "T": T, "seed_count": 1}
    reports = [
        MetricReport("fitted_w2", w2_gaussian(fitted, spec), config=config_echo),
        MetricReport(
            "mean_abs_error", float(np.max(np.abs(mean - spec.mean))), config=config_echo
        ),
        MetricReport(
            "cov_abs_error",
            float(np.max(np.abs(cov - spec.cov_matrix()))),
            config=config_echo,
        ),
    ]
    return samples, reports
