"""Seeded experiment driver: instance generation, solver runs, analysis,
and deterministic serialization of series files and summaries.

Instance generation draws every number from one SplitMix64 stream (see
prng.py for the update rule) in a fixed order, so identical (seed, config)
pairs reproduce identical instances bit for bit:

  1. parameters of every frozen layer, in layer order; per layer the
     weight matrix row-major, then the bias vector,
  2. the training samples, per sample the input entries then the targets,
  3. the initial point, row-major (each row of the trained weight matrix
     followed by its bias entry).

When a layer other than the first is trained, the layers below it are
sampled as part of step 1 and folded into the data: the training inputs
are pushed through them, and the instance becomes first-layer training of
the tail network. Solver restart perturbations draw from a child stream
spawned after step 3.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .errors import (
    Degenerate,
    InvalidConfig,
    MonotonicityViolation,
    NoExponentialPhase,
    NumericalStall,
    TooShort,
    UnboundedEdge,
)
from .network import Architecture, LayerParams, TrainingSet, relu
from .oracle import OracleInstance, Tolerances, make_oracle
from .prng import SplitMix64
from .solver import SolverLimits, Trajectory, minimize

PAPER_WIDTHS = (4, 5, 4, 3, 2, 1)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one reproducible run; defaults follow the
    reference protocol (widths (4,5,4,3,2,1), 500 samples, parameters on
    [-1,1], data on [-3,3], start on [-20,20])."""

    seed: int = 0
    widths: tuple[int, ...] = PAPER_WIDTHS
    samples: int = 500
    theta_range: tuple[float, float] = (-1.0, 1.0)
    data_range: tuple[float, float] = (-3.0, 3.0)
    init_range: tuple[float, float] = (-20.0, 20.0)
    layer: int = 1
    max_iterations: int = 20_000
    act_tol: float = 1e-8
    desc_tol: float = 1e-9
    mean_window: int = 40
    fit_window: int = 50
    r2_threshold: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        for name in ("theta_range", "data_range", "init_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if len(self.widths) < 3 or any(w < 1 for w in self.widths):
            raise InvalidConfig(f"bad widths {self.widths}")
        if not (1 <= self.layer <= len(self.widths) - 2):
            raise InvalidConfig(f"layer {self.layer} not a hidden-layer index")
        if self.samples < 1:
            raise InvalidConfig("need at least one sample")
        for name in ("theta_range", "data_range", "init_range"):
            a, b = getattr(self, name)
            if not a < b:
                raise InvalidConfig(f"{name} must satisfy a < b")
        if self.max_iterations < 1 or self.mean_window < 1 or self.fit_window < 3:
            raise InvalidConfig("bad iteration or window settings")
        if not (0.0 < self.r2_threshold <= 1.0):
            raise InvalidConfig("r2_threshold must lie in (0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def solver_limits(self) -> SolverLimits:
        return SolverLimits(
            max_iterations=self.max_iterations,
            desc_tol=self.desc_tol,
            act_tol=self.act_tol,
        )


@dataclass
class RunArtifacts:
    """Where one run wrote its files and what it concluded."""

    fingerprint: str
    out_dir: Path | None
    summary: dict
    status: str
    trajectory: Trajectory | None = field(default=None, repr=False)


def _sample_layer(rng: SplitMix64, n_out: int, n_in: int, rng_range) -> LayerParams:
    w = rng.uniform_block(n_out * n_in, *rng_range).reshape(n_out, n_in)
    b = rng.uniform_block(n_out, *rng_range)
    return LayerParams(w, b)


def generate_instance(
    config: ExperimentConfig,
) -> tuple[OracleInstance, np.ndarray, SplitMix64]:
    """Deterministic (oracle, initial point, solver rng) for a config."""
    config.validate()
    rng = SplitMix64(config.seed)
    widths = config.widths
    depth = len(widths) - 2

    layers: dict[int, LayerParams] = {}
    for l in range(1, depth + 2):
        if l == config.layer:
            continue
        layers[l] = _sample_layer(rng, widths[l], widths[l - 1], config.theta_range)

    n = config.samples
    flat = rng.uniform_block(n * (widths[0] + widths[-1]), *config.data_range)
    per = flat.reshape(n, widths[0] + widths[-1])
    inputs = per[:, : widths[0]].copy()
    targets = per[:, widths[0] :].copy()

    k = config.layer
    dim = widths[k] * (widths[k - 1] + 1)
    p0 = rng.uniform_block(dim, *config.init_range)

    # Fold frozen layers below the trained one into the predictors.
    x = inputs
    for l in range(1, k):
        layer = layers[l]
        x = relu(x @ layer.weight.T + layer.bias)
    arch = Architecture(widths[k - 1 :])
    fixed = tuple(layers[l] for l in range(k + 1, depth + 2))
    oracle = make_oracle(
        arch, fixed, TrainingSet(x, targets), Tolerances(act=config.act_tol)
    )
    return oracle, p0, rng.spawn()


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _write_series(
    out: Path, traj: Trajectory, mean_window: int, with_points: bool = True
) -> None:
    t = np.arange(len(traj))
    _write_csv(out / "loss.csv", "iteration,loss", zip(t, traj.losses))
    steps = traj.step_lengths[1:]
    _write_csv(out / "step_length.csv", "iteration,step_length", zip(t[1:], steps))
    mean = analysis.running_mean(steps, mean_window)
    _write_csv(
        out / "step_length_mean40.csv", "iteration,step_length_mean40", zip(t[1:], mean)
    )
    if with_points:
        dist = np.linalg.norm(traj.points - traj.points[-1][None, :], axis=1)
        _write_csv(out / "dist_to_final.csv", "iteration,dist_to_final", zip(t, dist))
    phase = np.where(t < traj.phase1_len, 1, 2)
    _write_csv(
        out / "trajectory.csv",
        "iteration,loss,step_length,active_count,phase",
        zip(t, traj.losses, traj.step_lengths, traj.active_counts, phase),
    )
    if with_points:
        dcols = ",".join(f"p{j}" for j in range(traj.points.shape[1]))
        _write_csv(
            out / "points.csv",
            "iteration," + dcols,
            ([ti] + list(row) for ti, row in zip(t, traj.points)),
        )


def summarize(
    traj: Trajectory, status: str, fit_window: int, r2_threshold: float
) -> dict:
    """Summary of one trajectory: final loss, phase boundaries, and the
    pre-convergence floor estimate made at the exponential-phase midpoint."""
    losses = traj.losses
    summary = {
        "final_loss": float(losses[-1]),
        "iterations": len(traj) - 1,
        "phase1_len": traj.phase1_len,
        "monotone": bool(np.all(np.diff(losses) <= 1e-10 * (1.0 + losses[:-1]))),
        "exp_phase_start": None,
        "exp_phase_end": None,
        "floor_estimate": None,
        "floor_estimate_error": None,
        "decay_ratio": None,
        "r2": None,
        "status": status,
    }
    try:
        seg = analysis.segment_phases(traj, fit_window, r2_threshold)
        summary["exp_phase_start"] = seg.exp_start
        summary["exp_phase_end"] = seg.exp_end
        mid = (seg.exp_start + seg.exp_end) // 2
        window = min(mid + 1 - traj.phase1_len, 4 * fit_window)
        est = analysis.estimate_loss_floor(traj.losses[: mid + 1], window=window)
    except (NoExponentialPhase, TooShort):
        est = None
        if len(traj.phase2_losses) >= 3:
            window = min(len(traj.phase2_losses), 2 * fit_window)
            est = analysis.estimate_loss_floor(traj.losses, window=window)
    if est is not None:
        final = float(traj.losses[-1])
        summary["floor_estimate"] = est.floor
        summary["floor_estimate_error"] = abs(est.floor - final) / max(final, 1e-300)
        summary["decay_ratio"] = est.ratio
        summary["r2"] = est.r2
    return summary


def run(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunArtifacts:
    """Generate the instance, minimize, analyze, and serialize everything."""
    oracle, p0, solver_rng = generate_instance(config)
    status = "converged"
    try:
        _, traj = minimize(oracle, p0, config.solver_limits(), solver_rng)
        status = traj.reason
    except (Degenerate, MonotonicityViolation, NumericalStall, UnboundedEdge) as e:
        label = "degenerate" if isinstance(e, Degenerate) else "failed"
        art = RunArtifacts(
            fingerprint=config.fingerprint(),
            out_dir=Path(out_dir) if out_dir else None,
            summary={"status": f"{label}: {e}"},
            status=label,
        )
        if out_dir:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "summary.json").write_text(
                json.dumps(art.summary, sort_keys=True, indent=1) + "\n"
            )
        return art

    summary = summarize(traj, status, config.fit_window, config.r2_threshold)
    summary["fingerprint"] = config.fingerprint()
    out = None
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.to_json() + "\n")
        _write_series(out, traj, config.mean_window)
        (out / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=1) + "\n"
        )
    return RunArtifacts(
        fingerprint=config.fingerprint(),
        out_dir=out,
        summary=summary,
        status=status,
        trajectory=traj,
    )


def sweep(
    config: ExperimentConfig, seeds, out_dir: str | Path | None = None
) -> dict:
    """Run every seed independently and aggregate the summaries."""
    seeds = list(seeds)
    if not seeds:
        raise InvalidConfig("sweep needs at least one seed")
    rows = []
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        sub = Path(out_dir) / f"seed_{seed}" if out_dir else None
        art = run(cfg, sub)
        row = dict(art.summary)
        row["seed"] = int(seed)
        rows.append(row)

    def rate(flag) -> float:
        return sum(1 for r in rows if flag(r)) / len(rows)

    errors = sorted(
        r["floor_estimate_error"]
        for r in rows
        if r.get("floor_estimate_error") is not None
    )

    def quantile(q: float):
        if not errors:
            return None
        pos = q * (len(errors) - 1)
        lo = int(pos)
        hi = min(lo + 1, len(errors) - 1)
        return errors[lo] + (errors[hi] - errors[lo]) * (pos - lo)

    aggregate = {
        "seeds": [int(s) for s in seeds],
        "runs": rows,
        "monotone_rate": rate(lambda r: bool(r.get("monotone"))),
        "converged_rate": rate(lambda r: r.get("status") == "converged"),
        "exp_phase_rate": rate(lambda r: r.get("exp_phase_start") is not None),
        "floor_error_median": quantile(0.5),
        "floor_error_p90": quantile(0.9),
    }
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(
            json.dumps(aggregate, sort_keys=True, indent=1) + "\n"
        )
    return aggregate


def load_trajectory_csv(
    traj_path: str | Path, points_path: str | Path | None = None
) -> Trajectory:
    """Rebuild a Trajectory from trajectory.csv (plus points.csv when
    available; without it the iterate coordinates are zero placeholders and
    distance-to-final cannot be recomputed)."""
    rows = Path(traj_path).read_text().strip().splitlines()
    header = rows[0].split(",")
    expect = ["iteration", "loss", "step_length", "active_count", "phase"]
    if header != expect:
        raise InvalidConfig(f"unexpected trajectory header {header}")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    losses = data[:, 1]
    steps = data[:, 2]
    counts = data[:, 3].astype(int)
    phase1_len = int(np.sum(data[:, 4] == 1))
    points = np.zeros((len(losses), 1))
    if points_path and Path(points_path).exists():
        prow = Path(points_path).read_text().strip().splitlines()
        pdata = np.array([[float(v) for v in r.split(",")] for r in prow[1:]])
        points = pdata[:, 1:]
    return Trajectory(
        points=points,
        losses=losses,
        active_counts=counts,
        step_lengths=steps,
        phase1_len=phase1_len,
        reason="loaded",
    )


def analyze_files(
    traj_path: str | Path,
    out_dir: str | Path,
    mean_window: int = 40,
    fit_window: int = 50,
    r2_threshold: float = 0.9,
) -> dict:
    """Re-analyze a stored trajectory file and rewrite the series files."""
    traj_path = Path(traj_path)
    points_path = traj_path.with_name("points.csv")
    traj = load_trajectory_csv(traj_path, points_path)
    have_points = points_path.exists()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_series(out, traj, mean_window, with_points=have_points)
    summary = summarize(traj, "analyzed", fit_window, r2_threshold)
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n"
    )
    return summary
