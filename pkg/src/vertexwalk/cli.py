"""Command-line driver: run / sweep / analyze / verify."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import bruteforce
from .errors import Degenerate, Degenerate2D
from .experiment import ExperimentConfig, analyze_files, generate_instance, run, sweep
from .solver import minimize


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, help="JSON file with config fields")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--widths", type=str, help="comma-separated layer widths")
    p.add_argument("--samples", type=int, help="number of training samples")
    p.add_argument("--max-iter", type=int, dest="max_iter", help="iteration cap")
    p.add_argument("--layer", type=int, help="1-based index of the trained layer")
    p.add_argument("--mean-window", type=int, dest="mean_window", default=None,
                   help="running-mean window (default 40)")
    p.add_argument("--fit-window", type=int, dest="fit_window", default=None,
                   help="phase-fit window (default 50)")


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.widths is not None:
        updates["widths"] = tuple(_int_list(args.widths))
    if args.samples is not None:
        updates["samples"] = args.samples
    if args.max_iter is not None:
        updates["max_iterations"] = args.max_iter
    if args.layer is not None:
        updates["layer"] = args.layer
    if args.mean_window is not None:
        updates["mean_window"] = args.mean_window
    if args.fit_window is not None:
        updates["fit_window"] = args.fit_window
    return replace(cfg, **updates) if updates else cfg


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    art = run(cfg, args.out)
    print(json.dumps(art.summary, sort_keys=True, indent=1))
    return 0 if art.status in ("converged", "max_iterations") else 1


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    agg = sweep(cfg, _int_list(args.seeds), args.out)
    view = {k: v for k, v in agg.items() if k != "runs"}
    print(json.dumps(view, sort_keys=True, indent=1))
    return 0


def _cmd_analyze(args) -> int:
    summary = analyze_files(
        args.traj,
        args.out,
        mean_window=args.mean_window or 40,
        fit_window=args.fit_window or 50,
    )
    print(json.dumps(summary, sort_keys=True, indent=1))
    return 0


def _cmd_verify(args) -> int:
    """Cross-check solver runs against brute-force oracles on 2-parameter
    toys; prints one line per check."""
    seeds = _int_list(args.seeds)
    failures = 0
    for seed in seeds:
        for n in (3, 5):
            cfg = ExperimentConfig(
                seed=seed, widths=(1, 1, 1), samples=n, max_iterations=2000
            )
            label = f"seed={seed} N={n}"
            try:
                oracle, p0, solver_rng = generate_instance(cfg)
                theta, traj = minimize(oracle, p0, cfg.solver_limits(), solver_rng)
            except Degenerate as e:
                print(f"SKIP  {label}: degenerate run ({e})")
                continue
            phase2 = traj.points[traj.phase1_len :]
            lo = np.minimum(phase2.min(axis=0), p0) - 1.0
            hi = np.maximum(phase2.max(axis=0), p0) + 1.0
            try:
                walk = bruteforce.arrangement_walk_2d(oracle, p0, box=(lo, hi))
            except Degenerate2D as e:
                print(f"SKIP  {label}: degenerate arrangement ({e})")
                continue
            ok = True
            if len(walk.vertices) == 0:
                ok = False
            else:
                dists = np.linalg.norm(
                    walk.vertices[None, :, :] - phase2[:, None, :], axis=2
                ).min(axis=1)
                scale = 1.0 + np.linalg.norm(phase2, axis=1)
                ok = bool(np.all(dists <= 1e-6 * scale))
                final_gap = float(
                    np.min(np.linalg.norm(walk.vertices - theta[None, :], axis=1))
                )
                ok = ok and final_gap <= 1e-6 * (1.0 + float(np.linalg.norm(theta)))
            state = "PASS" if ok else "FAIL"
            failures += not ok
            print(
                f"{state}  {label}: {len(phase2)} walk vertices vs "
                f"{len(walk.vertices)} brute-force vertices"
            )
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vertexwalk",
        description="Vertex-walking minimization of the first-layer L1 loss "
        "of a ReLU network, with trajectory analytics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single seeded run")
    _add_config_flags(p_run)
    p_run.add_argument("--out", type=str, default=None, help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="independent runs over a seed list")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--seeds", type=str, required=True, help="e.g. 0,1,2")
    p_sweep.add_argument("--out", type=str, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_an = sub.add_parser("analyze", help="re-analyze a stored trajectory CSV")
    p_an.add_argument("--traj", type=str, required=True, help="trajectory.csv path")
    p_an.add_argument("--out", type=str, required=True)
    p_an.add_argument("--mean-window", type=int, dest="mean_window", default=None)
    p_an.add_argument("--fit-window", type=int, dest="fit_window", default=None)
    p_an.set_defaults(func=_cmd_analyze)

    p_ver = sub.add_parser(
        "verify", help="brute-force cross-checks on 2-parameter toy instances"
    )
    p_ver.add_argument("--seeds", type=str, default="0,1,2")
    p_ver.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
