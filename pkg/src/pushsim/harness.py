"""Experiment driver: configs, Monte Carlo orchestration, aggregation, CSV.

A single experiment runs R paired trials: the decentralized optimizer over
the configured network and a centralized noisy-gradient baseline that shares
the dataset and the certified optimum but consumes its own seeded noise
stream. Per-run squared errors are persisted raw and reduced by the
batch/window/median pipeline; every published number is recomputable from
the raw files alone.

Aggregation shape: runs are grouped into batches; within a batch the curves
are averaged pointwise; each batch curve is then averaged over
non-overlapping 100-slot windows; the published value per window is the
median across batches with a 1-standard-deviation band.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PushsimError
from .faultnet import FaultBounds
from .graph import Topology, build_cycle, build_random_strongly_connected
from .objectives import (NoiseModel, SvmObjective, box_noise_model,
                         dump_svm_dataset, generate_quadratic,
                         generate_svm_dataset, save_optimum,
                         solve_reference_optimum)
from .optimizer import StepSizeLedger, run_gradient_push
from .rng import Role, stream

AGGREGATION_WINDOW = 100
RAW_NAME = "run_{:04d}.csv"
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# Configuration.

def _take(mapping: dict, context: str, required: dict, optional: dict):
    """Strict field extraction: missing required or unknown keys are errors."""
    if not isinstance(mapping, dict):
        raise ConfigurationError(f"{context}: expected an object")
    unknown = set(mapping) - set(required) - set(optional)
    if unknown:
        raise ConfigurationError(
            f"{context}: unknown keys {sorted(unknown)}")
    out = {}
    for key, kind in required.items():
        if key not in mapping:
            raise ConfigurationError(f"{context}: missing key '{key}'")
        out[key] = _coerce(mapping[key], kind, f"{context}.{key}")
    for key, (kind, default) in optional.items():
        out[key] = _coerce(mapping[key], kind, f"{context}.{key}") \
            if key in mapping else default
    return out


def _coerce(value, kind, context: str):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{context}: expected a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{context}: expected an integer")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{context}: expected true/false")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{context}: expected a string")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise ConfigurationError(f"{context}: expected an object")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{context}: expected a list")
        return value
    raise ConfigurationError(f"{context}: unsupported schema type")


@dataclass(frozen=True)
class TopologySpec:
    kind: str                 # "cycle" | "random"
    n: int
    bidirectional: bool = True
    edge_prob: float = 0.5

    def build(self, master_seed: int) -> Topology:
        if self.n == 1:
            return Topology.singleton()
        if self.kind == "cycle":
            return build_cycle(self.n, self.bidirectional)
        rng = stream(master_seed, 0, Role.TOPOLOGY, 0)
        return build_random_strongly_connected(self.n, self.edge_prob, rng)

    def as_dict(self) -> dict:
        if self.kind == "cycle":
            return {"kind": "cycle", "n": self.n,
                    "bidirectional": self.bidirectional}
        return {"kind": "random", "n": self.n, "edge_prob": self.edge_prob}

    @staticmethod
    def from_mapping(obj: dict) -> "TopologySpec":
        head = _take(obj, "topology", {"kind": str, "n": int}, {
            "bidirectional": (bool, True), "edge_prob": (float, 0.5)})
        if head["kind"] not in ("cycle", "random"):
            raise ConfigurationError(
                f"topology.kind: got '{head['kind']}', want cycle or random")
        if head["kind"] == "cycle" and "edge_prob" in obj:
            raise ConfigurationError("topology: edge_prob is for kind=random")
        if head["kind"] == "random" and "bidirectional" in obj:
            raise ConfigurationError(
                "topology: bidirectional is for kind=cycle")
        if head["n"] < 1:
            raise ConfigurationError("topology.n: must be >= 1")
        return TopologySpec(head["kind"], head["n"], head["bidirectional"],
                            head["edge_prob"])


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str                 # "quadratic" | "svm"
    dim: int = 2
    points_per_node: int = 50
    cost_scale: float = 500.0

    def as_dict(self) -> dict:
        if self.kind == "quadratic":
            return {"kind": "quadratic", "dim": self.dim}
        return {"kind": "svm", "points_per_node": self.points_per_node,
                "cost_scale": self.cost_scale}

    @staticmethod
    def from_mapping(obj: dict) -> "ObjectiveSpec":
        head = _take(obj, "objective", {"kind": str}, {
            "dim": (int, 2), "points_per_node": (int, 50),
            "cost_scale": (float, 500.0)})
        if head["kind"] not in ("quadratic", "svm"):
            raise ConfigurationError(
                f"objective.kind: got '{head['kind']}', want quadratic/svm")
        if head["kind"] == "quadratic" and (
                "points_per_node" in obj or "cost_scale" in obj):
            raise ConfigurationError("objective: svm keys on quadratic spec")
        if head["kind"] == "svm" and "dim" in obj:
            raise ConfigurationError(
                "objective: svm decision dimension is fixed by the dataset")
        return ObjectiveSpec(head["kind"], head["dim"],
                             head["points_per_node"], head["cost_scale"])


@dataclass(frozen=True)
class RatioSpec:
    sizes: tuple
    checkpoints: tuple

    @staticmethod
    def from_mapping(obj: dict) -> "RatioSpec":
        head = _take(obj, "ratio", {"sizes": list, "checkpoints": list}, {})
        sizes = tuple(int(v) for v in head["sizes"])
        checkpoints = tuple(int(v) for v in head["checkpoints"])
        if not sizes or any(v < 1 for v in sizes):
            raise ConfigurationError("ratio.sizes: positive sizes required")
        if not checkpoints or any(v < AGGREGATION_WINDOW
                                  for v in checkpoints):
            raise ConfigurationError(
                f"ratio.checkpoints: each must be >= {AGGREGATION_WINDOW}")
        return RatioSpec(sizes, checkpoints)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    topology: TopologySpec
    faults: FaultBounds
    objective: ObjectiveSpec
    noise_width: float
    horizon: int
    runs: int = 100
    batch_size: int = 10
    master_seed: int = 0
    step_offset: int = 0
    outdir: str | None = None
    ratio: RatioSpec | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError("horizon: must be >= 1")
        if self.runs < 1:
            raise ConfigurationError("runs: must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size: must be >= 1")
        if self.noise_width <= 0:
            raise ConfigurationError("noise_width: must be positive")
        if self.step_offset < 0:
            raise ConfigurationError("step_offset: must be >= 0")

    @staticmethod
    def from_mapping(obj: dict) -> "ExperimentConfig":
        head = _take(obj, "config", {
            "topology": dict, "faults": dict, "objective": dict,
            "noise_width": float, "horizon": int,
        }, {
            "name": (str, ""), "runs": (int, 100), "batch_size": (int, 10),
            "master_seed": (int, 0), "step_offset": (int, 0),
            "outdir": (str, None), "ratio": (dict, None),
        })
        faults = _take(head["faults"], "faults", {
            "max_wake_gap": int, "max_consecutive_losses": int,
            "max_transmission_delay": int,
        }, {"wake_prob": (float, 1.0), "loss_prob": (float, 0.0)})
        return ExperimentConfig(
            name=head["name"],
            topology=TopologySpec.from_mapping(head["topology"]),
            faults=FaultBounds(**faults),
            objective=ObjectiveSpec.from_mapping(head["objective"]),
            noise_width=head["noise_width"],
            horizon=head["horizon"],
            runs=head["runs"],
            batch_size=head["batch_size"],
            master_seed=head["master_seed"],
            step_offset=head["step_offset"],
            outdir=head["outdir"],
            ratio=RatioSpec.from_mapping(head["ratio"])
            if head["ratio"] is not None else None,
        )

    @staticmethod
    def from_file(path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return ExperimentConfig.from_mapping(obj)

    def as_dict(self) -> dict:
        out = {
            "name": self.name,
            "topology": self.topology.as_dict(),
            "faults": {
                "max_wake_gap": self.faults.max_wake_gap,
                "max_consecutive_losses": self.faults.max_consecutive_losses,
                "max_transmission_delay":
                    self.faults.max_transmission_delay,
                "wake_prob": self.faults.wake_prob,
                "loss_prob": self.faults.loss_prob,
            },
            "objective": self.objective.as_dict(),
            "noise_width": self.noise_width,
            "horizon": self.horizon,
            "runs": self.runs,
            "batch_size": self.batch_size,
            "master_seed": self.master_seed,
            "step_offset": self.step_offset,
        }
        if self.outdir is not None:
            out["outdir"] = self.outdir
        if self.ratio is not None:
            out["ratio"] = {"sizes": list(self.ratio.sizes),
                            "checkpoints": list(self.ratio.checkpoints)}
        return out


# ---------------------------------------------------------------------------
# Problem construction shared by decentralized and centralized sides.

@dataclass
class ProblemInstance:
    topology: Topology
    objective: object
    noise: NoiseModel
    baseline_noise: NoiseModel
    z_star: np.ndarray
    dataset: tuple | None      # (features, labels) for svm


def build_problem(config: ExperimentConfig) -> ProblemInstance:
    topo = config.topology.build(config.master_seed)
    n = topo.n
    dataset = None
    if config.objective.kind == "quadratic":
        objective = generate_quadratic(n, config.objective.dim,
                                       config.master_seed)
        z_star = objective.optimum()
    else:
        features, labels = generate_svm_dataset(
            n, config.master_seed,
            points_per_node=config.objective.points_per_node)
        objective = SvmObjective(
            features, labels,
            penalty_numerator=config.objective.cost_scale)
        cert = solve_reference_optimum(objective)
        z_star = cert.z_star
        dataset = (features, labels)
    dim = objective.dim
    noise = box_noise_model(config.noise_width, dim)
    # one full-gradient evaluation aggregates n local samples, so the
    # centralized half-width scales with sqrt(n) to carry their summed
    # variance
    baseline = box_noise_model(config.noise_width, dim,
                               scale=float(np.sqrt(n)))
    return ProblemInstance(topo, objective, noise, baseline, z_star, dataset)


def centralized_baseline(problem: ProblemInstance, horizon: int,
                         master_seed: int, runs: range, update_gap: int,
                         step_offset: int) -> np.ndarray:
    """Noisy full-gradient descent stepping once per update_gap slots.

    Step size at update slot k is update_gap / (mu_total * (k + offset));
    the iterate holds between updates. Returns squared distance to the
    optimum on the full slot grid, shape (len(runs), horizon+1).
    """
    obj, z_star = problem.objective, problem.z_star
    dim = obj.dim
    mu = obj.mu_total
    update_slots = np.arange(update_gap, horizon + 1, update_gap)
    B = len(runs)
    e_c = np.empty((B, horizon + 1))
    x = np.ones((B, dim))
    e_c[:, 0] = np.sum((x - z_star) ** 2, axis=1)
    draws = np.empty((B, len(update_slots), dim))
    for b, run in enumerate(runs):
        g = stream(master_seed, run, Role.BASELINE_NOISE, 0)
        draws[b] = g.random((len(update_slots), dim))
    prev = 0
    for j, k in enumerate(update_slots):
        eps = problem.baseline_noise.from_uniforms(draws[:, j, :])
        grad = obj.batch_total_gradient(x) + eps
        alpha = update_gap / (mu * (k + step_offset))
        x = x - alpha * grad
        err = np.sum((x - z_star) ** 2, axis=1)
        e_c[:, prev + 1:k] = e_c[:, prev][:, None]
        e_c[:, k] = err
        prev = k
    e_c[:, prev + 1:] = e_c[:, prev][:, None]
    return e_c


# ---------------------------------------------------------------------------
# Aggregation pipeline (pure functions of the raw series).

def batch_window_means(raw: np.ndarray, batch_size: int,
                       window: int = AGGREGATION_WINDOW):
    """Stage 1+2 of the pipeline.

    raw is (R, K+1) with slot 0 first. Runs are grouped into consecutive
    batches (last batch may be short), averaged pointwise, then averaged over
    non-overlapping windows covering slots [1, W*window]. Returns
    (k_grid (W,), means (n_batches, W)) with k_grid at right window edges.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ConfigurationError("raw series must be (runs, slots)")
    R, K1 = raw.shape
    W = (K1 - 1) // window
    if W < 1:
        raise ConfigurationError(
            f"horizon {K1 - 1} shorter than one window ({window})")
    starts = range(0, R, batch_size)
    batch_means = np.stack([raw[s:s + batch_size].mean(axis=0)
                            for s in starts])
    trimmed = batch_means[:, 1:1 + W * window]
    means = trimmed.reshape(batch_means.shape[0], W, window).mean(axis=2)
    k_grid = (np.arange(W) + 1) * window
    return k_grid, means


def aggregate_series(raw: np.ndarray, batch_size: int,
                     window: int = AGGREGATION_WINDOW):
    """Median across batches with a 1-std band (ddof=1; zero for one batch).

    Returns (k_grid, median, std).
    """
    k_grid, means = batch_window_means(raw, batch_size, window)
    med = np.median(means, axis=0)
    std = means.std(axis=0, ddof=1) if means.shape[0] > 1 \
        else np.zeros(means.shape[1])
    return k_grid, med, std


@dataclass
class MetricSeries:
    k: np.ndarray
    e_dist: np.ndarray
    e_dist_std: np.ndarray
    e_c: np.ndarray
    e_c_std: np.ndarray
    k_e_dist: np.ndarray
    k_e_c: np.ndarray


def reduce_metrics(e_dist_raw: np.ndarray, e_c_raw: np.ndarray,
                   batch_size: int,
                   window: int = AGGREGATION_WINDOW) -> MetricSeries:
    slots = np.arange(e_dist_raw.shape[1], dtype=float)
    k, d_med, d_std = aggregate_series(e_dist_raw, batch_size, window)
    _, c_med, c_std = aggregate_series(e_c_raw, batch_size, window)
    _, kd_med, _ = aggregate_series(e_dist_raw * slots, batch_size, window)
    _, kc_med, _ = aggregate_series(e_c_raw * slots, batch_size, window)
    return MetricSeries(k, d_med, d_std, c_med, c_std, kd_med, kc_med)


# ---------------------------------------------------------------------------
# File emission.

def _write_raw(path: Path, e_dist: np.ndarray, e_c: np.ndarray) -> None:
    lines = ["k,E_dist,E_c"]
    for k in range(e_dist.shape[0]):
        lines.append(f"{k},{e_dist[k]:.17g},{e_c[k]:.17g}")
    path.write_text("\n".join(lines) + "\n")


def read_raw(path: Path) -> tuple[np.ndarray, np.ndarray]:
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return body[:, 1], body[:, 2]


def _write_errors(path: Path, series: MetricSeries) -> None:
    lines = ["k,E_dist,E_c,E_dist_std,E_c_std"]
    for i, k in enumerate(series.k):
        lines.append(f"{int(k)},{series.e_dist[i]:.17g},"
                     f"{series.e_c[i]:.17g},{series.e_dist_std[i]:.17g},"
                     f"{series.e_c_std[i]:.17g}")
    path.write_text("\n".join(lines) + "\n")


def _write_k_errors(path: Path, series: MetricSeries) -> None:
    lines = ["k,k_E_dist,k_E_c"]
    for i, k in enumerate(series.k):
        lines.append(f"{int(k)},{series.k_e_dist[i]:.17g},"
                     f"{series.k_e_c[i]:.17g}")
    path.write_text("\n".join(lines) + "\n")


def write_line_plot(path: Path, curves: dict, title: str) -> None:
    """Single-file SVG, log-log axes. curves: name -> (x, y) arrays."""
    width, height, pad = 640, 420, 54
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in
                         curves.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in
                         curves.values()])
    good = (xs > 0) & np.isfinite(xs)
    lo_x, hi_x = np.log10(xs[good].min()), np.log10(xs[good].max())
    pos = ys[(ys > 0) & np.isfinite(ys)]
    lo_y = np.log10(pos.min()) if pos.size else -1.0
    hi_y = np.log10(pos.max()) if pos.size else 1.0
    if hi_x <= lo_x:
        hi_x = lo_x + 1.0
    if hi_y <= lo_y:
        hi_y = lo_y + 1.0

    def sx(v):
        return pad + (np.log10(v) - lo_x) / (hi_x - lo_x) * (width - 2 * pad)

    def sy(v):
        return height - pad - (np.log10(v) - lo_y) / (hi_y - lo_y) \
            * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}">',
             f'<text x="{width / 2}" y="20" text-anchor="middle" '
             f'font-size="14">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
             f'height="{height - 2 * pad}" fill="none" stroke="#333"/>']
    for dec in range(int(np.ceil(lo_x)), int(np.floor(hi_x)) + 1):
        x = sx(10.0 ** dec)
        parts.append(f'<line x1="{x:.1f}" y1="{pad}" x2="{x:.1f}" '
                     f'y2="{height - pad}" stroke="#ddd"/>')
        parts.append(f'<text x="{x:.1f}" y="{height - pad + 16}" '
                     f'text-anchor="middle" font-size="11">1e{dec}</text>')
    for dec in range(int(np.ceil(lo_y)), int(np.floor(hi_y)) + 1):
        y = sy(10.0 ** dec)
        parts.append(f'<line x1="{pad}" y1="{y:.1f}" x2="{width - pad}" '
                     f'y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{pad - 6}" y="{y + 4:.1f}" '
                     f'text-anchor="end" font-size="11">1e{dec}</text>')
    for c, (name, (x, y)) in enumerate(curves.items()):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}"
                       for a, b in zip(x[keep], y[keep]))
        color = colors[c % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - pad - 4}" '
                     f'y="{pad + 16 + 14 * c}" text-anchor="end" '
                     f'font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Experiment orchestration.

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outdir: Path
    series: MetricSeries
    e_dist_raw: np.ndarray
    e_c_raw: np.ndarray
    z_star: np.ndarray
    mu_total: float


def run_experiment(config: ExperimentConfig, outdir: str | Path,
                   persist_raw: bool = True,
                   plot: bool = False) -> ExperimentResult:
    """Execute R paired runs and write the full artifact set.

    Artifacts: manifest.json (config echo + status), per-run raw CSVs
    (optional), errors.csv, k_errors.csv, dataset/optimum files for svm,
    optional errors.svg. On failure the manifest records the failing run
    index for replay before the error propagates.
    """
    from . import __version__

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config)
    manifest = {
        "version": __version__,
        "status": "running",
        "config": config.as_dict(),
    }
    _write_manifest(outdir, manifest)
    if problem.dataset is not None:
        dump_svm_dataset(problem.dataset[0], problem.dataset[1],
                         outdir / "dataset.csv")
        cert = solve_reference_optimum(problem.objective)
        save_optimum(cert, outdir / "optimum.csv")

    ledger = StepSizeLedger(numerator=problem.topology.n,
                            mu=problem.objective.mu_total,
                            horizon=config.horizon, k0=config.step_offset)
    runs = range(config.runs)
    try:
        result = run_gradient_push(
            problem.topology, config.faults, problem.objective,
            problem.noise, ledger, config.horizon, config.master_seed,
            runs=tuple(runs), z_star=problem.z_star)
    except PushsimError as exc:
        manifest["status"] = "failed"
        manifest["error"] = str(exc)
        manifest["failing_run"] = getattr(exc, "run", None)
        _write_manifest(outdir, manifest)
        raise
    e_dist_raw = result.e_dist
    e_c_raw = centralized_baseline(problem, config.horizon,
                                   config.master_seed, runs,
                                   config.faults.max_wake_gap,
                                   config.step_offset)

    raw_files = []
    if persist_raw:
        for r in runs:
            name = RAW_NAME.format(r)
            _write_raw(outdir / name, e_dist_raw[r], e_c_raw[r])
            raw_files.append(name)
    series = reduce_metrics(e_dist_raw, e_c_raw, config.batch_size)
    _write_errors(outdir / "errors.csv", series)
    _write_k_errors(outdir / "k_errors.csv", series)
    if plot:
        write_line_plot(outdir / "errors.svg", {
            "E_dist": (series.k, series.e_dist),
            "E_c": (series.k, series.e_c),
        }, config.name or "experiment")
    manifest["status"] = "complete"
    manifest["raw_files"] = raw_files
    manifest["z_star"] = [float(v) for v in problem.z_star]
    manifest["mu_total"] = float(problem.objective.mu_total)
    _write_manifest(outdir, manifest)
    return ExperimentResult(config, outdir, series, e_dist_raw, e_c_raw,
                            problem.z_star, problem.objective.mu_total)


def _write_manifest(outdir: Path, manifest: dict) -> None:
    (outdir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def replay(outdir: str | Path, target: str | Path | None = None) -> bool:
    """Re-run a recorded experiment and byte-compare the raw CSVs.

    Reads manifest.json from outdir, re-executes into target (default
    outdir/replay), and returns True when every persisted raw file matches
    byte for byte.
    """
    outdir = Path(outdir)
    manifest_path = outdir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ConfigurationError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    config = ExperimentConfig.from_mapping(manifest["config"])
    raw_files = manifest.get("raw_files", [])
    if not raw_files:
        raise ConfigurationError(
            f"{manifest_path}: no persisted raw files to replay against")
    target = Path(target) if target is not None else outdir / "replay"
    run_experiment(config, target, persist_raw=True)
    for name in raw_files:
        if (outdir / name).read_bytes() != (target / name).read_bytes():
            return False
    return True


# ---------------------------------------------------------------------------
# Error-ratio study over network sizes.

@dataclass
class RatioRow:
    n: int
    k: int
    ratio: float
    ratio_std: float


def ratio_study(template: ExperimentConfig, sizes, checkpoints,
                outdir: str | Path | None = None) -> list[RatioRow]:
    """Centralized-to-decentralized error ratio across network sizes.

    For each size the template is rebuilt on a bidirectional cycle; ratios
    are computed per batch at each checkpoint's aggregation window and
    published as the median with a 1-std band across batches.
    """
    if template.topology.kind != "cycle" or not template.topology.bidirectional:
        raise ConfigurationError(
            "ratio study runs on bidirectional cycles only")
    rows = []
    for n in sizes:
        config = replace(template, topology=replace(template.topology, n=n),
                         ratio=None)
        problem = build_problem(config)
        ledger = StepSizeLedger(numerator=n,
                                mu=problem.objective.mu_total,
                                horizon=config.horizon,
                                k0=config.step_offset)
        runs = tuple(range(config.runs))
        result = run_gradient_push(
            problem.topology, config.faults, problem.objective,
            problem.noise, ledger, config.horizon, config.master_seed,
            runs=runs, z_star=problem.z_star)
        e_c = centralized_baseline(problem, config.horizon,
                                   config.master_seed, range(config.runs),
                                   config.faults.max_wake_gap,
                                   config.step_offset)
        k_grid, d_means = batch_window_means(result.e_dist,
                                             config.batch_size)
        _, c_means = batch_window_means(e_c, config.batch_size)
        for k in checkpoints:
            if k % AGGREGATION_WINDOW != 0:
                raise ConfigurationError(
                    f"checkpoint {k} not on the {AGGREGATION_WINDOW}-slot "
                    "aggregation grid")
            idx = k // AGGREGATION_WINDOW - 1
            if idx >= k_grid.size:
                raise ConfigurationError(
                    f"checkpoint {k} beyond horizon {config.horizon}")
            per_batch = c_means[:, idx] / d_means[:, idx]
            std = per_batch.std(ddof=1) if per_batch.size > 1 else 0.0
            rows.append(RatioRow(n, k, float(np.median(per_batch)),
                                 float(std)))
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        lines = ["n,k,ratio,ratio_std"]
        for row in rows:
            lines.append(f"{row.n},{row.k},{row.ratio:.17g},"
                         f"{row.ratio_std:.17g}")
        (outdir / "ratio.csv").write_text("\n".join(lines) + "\n")
    return rows
