"""Acceptance gate: every criterion runs at the reference configuration
(widths (4,5,4,3,2,1), 500 samples, stated parameter/data/start ranges)
or on the 2-parameter toys, at the stated tolerances, and prints one
PASS/FAIL line."""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from vertexwalk import oracle as orc
from vertexwalk.analysis import (
    _linear_fit,
    distance_to_final,
    estimate_loss_floor,
    running_mean,
    segment_phases,
    step_distances,
)
from vertexwalk.bruteforce import arrangement_walk_2d, fd_gradient, line_scan, local_min_check
from vertexwalk.errors import NoCrossing, NoExponentialPhase, TooShort
from vertexwalk.experiment import ExperimentConfig, generate_instance, run
from vertexwalk.prng import SplitMix64
from vertexwalk.solver import minimize

PAPER_SEEDS = list(range(20))
TOY_SEEDS = list(range(5))


def _solve_paper_seed(seed: int):
    cfg = ExperimentConfig(seed=seed)
    oracle, p0, solver_rng = generate_instance(cfg)
    theta, traj = minimize(oracle, p0, cfg.solver_limits(), solver_rng)
    return seed, traj


@pytest.fixture(scope="session")
def paper_runs():
    """Trajectories of 20 independent seeds at the reference scale."""
    workers = min(len(PAPER_SEEDS), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = dict(pool.map(_solve_paper_seed, PAPER_SEEDS))
    return results


def _report(num: int, ok: bool, text: str) -> None:
    print(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {text}")


class TestCriterion1Monotonicity:
    def test_loss_non_increasing_on_every_seed(self, paper_runs):
        bad = []
        for seed, traj in paper_runs.items():
            l = traj.losses
            if not np.all(np.diff(l) <= 1e-10 * (1.0 + l[:-1])):
                bad.append(seed)
        _report(1, not bad, f"loss non-increasing on {len(paper_runs)} seeds")
        assert not bad, f"non-monotone seeds: {bad}"

    def test_every_run_terminates_converged(self, paper_runs):
        # Finite termination well before the iteration cap on generic
        # instances backs the other criteria (they inspect final points).
        reasons = {seed: t.reason for seed, t in paper_runs.items()}
        assert all(r == "converged" for r in reasons.values()), reasons


class TestCriterion2Phase1Structure:
    def test_vertex_after_exactly_25_additions(self, paper_runs):
        bad = []
        for seed, traj in paper_runs.items():
            counts = traj.active_counts
            prefix_ok = traj.phase1_len == 25 and np.array_equal(
                counts[:26], np.arange(26)
            )
            phase2_ok = np.all(counts[25:] == 25)
            if not (prefix_ok and phase2_ok):
                bad.append(seed)
        _report(2, not bad, "25 constraint additions, then 25 active at every vertex")
        assert not bad, f"bad phase-1 structure: {bad}"


class TestCriterion3LocalMinimality:
    def test_every_converged_point_is_a_sampled_local_min(self, paper_runs):
        bad = []
        for seed, traj in paper_runs.items():
            cfg = ExperimentConfig(seed=seed)
            oracle, _, _ = generate_instance(cfg)
            theta = traj.final
            radius = 1e-4 * (1.0 + float(np.linalg.norm(theta)))
            ok, worst = local_min_check(
                oracle, theta, radius=radius, directions=200, seed=0xACC3 + seed
            )
            if not ok:
                bad.append((seed, worst))
        _report(3, not bad, "200-direction local-minimality at every final point")
        assert not bad, f"descent direction found at minima: {bad}"


class TestCriterion4OracleEquivalence:
    def test_toy_walks_match_brute_force(self):
        bad = []
        for seed in TOY_SEEDS:
            for n in (3, 5):
                cfg = ExperimentConfig(
                    seed=seed, widths=(1, 1, 1), samples=n, max_iterations=2000
                )
                oracle, p0, solver_rng = generate_instance(cfg)
                theta, traj = minimize(oracle, p0, cfg.solver_limits(), solver_rng)
                phase2 = traj.points[traj.phase1_len :]
                lo = np.minimum(phase2.min(axis=0), p0) - 1.0
                hi = np.maximum(phase2.max(axis=0), p0) + 1.0
                walk = arrangement_walk_2d(oracle, p0, box=(lo, hi))
                if len(walk.vertices) == 0:
                    bad.append((seed, n, "no brute vertices"))
                    continue
                scale = 1.0 + np.linalg.norm(phase2, axis=1)
                gaps = np.linalg.norm(
                    walk.vertices[None, :, :] - phase2[:, None, :], axis=2
                ).min(axis=1)
                if not np.all(gaps <= 1e-6 * scale):
                    bad.append((seed, n, "vertex mismatch"))
                    continue
                final_idx = int(
                    np.argmin(np.linalg.norm(walk.vertices - theta[None, :], axis=1))
                )
                final_gap = float(np.linalg.norm(walk.vertices[final_idx] - theta))
                if final_gap > 1e-6 * (1.0 + float(np.linalg.norm(theta))):
                    bad.append((seed, n, "final not a brute vertex"))
                    continue
                neighbors = walk.adjacency[final_idx]
                if any(
                    walk.values[j] < walk.values[final_idx] - 1e-9 for j in neighbors
                ):
                    bad.append((seed, n, "final not a brute local minimum"))
        _report(4, not bad, "10 toy instances match the brute-force arrangement")
        assert not bad, f"brute-force mismatches: {bad}"


class TestCriterion5GradientCorrectness:
    def test_affine_gradients_and_first_crossings(self):
        from conftest import build_instance, interior_point, slope_change_across

        bad = []
        for seed, widths, n in [
            (71, (2, 3, 2, 1), 12),
            (72, (3, 4, 2), 10),
            (73, (2, 2, 2, 2, 1), 8),
        ]:
            o, _ = build_instance(seed, widths, n)
            rng = SplitMix64(1000 + seed)
            for _ in range(50):
                p = interior_point(o, rng, min_clear=1e-2)
                g = orc.affine_piece(o, orc.region_signature(o, p)).gradient
                fd = fd_gradient(o, p, h=1e-5 * (1.0 + float(np.linalg.norm(p))))
                if np.linalg.norm(fd - g) > 1e-6 * np.linalg.norm(g):
                    bad.append((seed, "gradient"))
                    break
            checked = 0
            attempts = 0
            while checked < 5 and attempts < 80:
                attempts += 1
                p = interior_point(o, rng, min_clear=1e-3)
                d = rng.unit_vector(o.dim)
                sig = orc.region_signature(o, p)
                try:
                    t_star, _ = orc.ratio_test(o, p, d, sig, [])
                except NoCrossing:
                    continue
                if t_star > 5.0:
                    continue
                # The scan sees a crossing only when the loss slope
                # changes there; crossings of surfaces with a dead
                # downstream path leave the loss unkinked and carry no
                # comparison content.
                change = slope_change_across(o, p, d, t_star)
                if change is None or abs(change) < 1e-4:
                    continue
                res = line_scan(o, p, d, t_max=1.5 * t_star)
                if res.kinks.size == 0 or abs(res.kinks[0] - t_star) > 1e-6 * (
                    1.0 + t_star
                ):
                    bad.append((seed, "first crossing"))
                    break
                checked += 1
            if checked < 5:
                bad.append((seed, "too few crossing checks"))
        _report(5, not bad, "analytic gradients and crossings match brute force")
        assert not bad, f"gradient/crossing failures: {bad}"


class TestCriterion6FloorEstimator:
    def test_exact_and_noisy_series(self):
        t = np.arange(60)
        exact_ok = True
        for a, b, rho in [(5.0, 3.0, 0.8), (0.5, 10.0, 0.95), (40.0, 0.7, 0.5)]:
            est = estimate_loss_floor(a + b * rho**t, window=40)
            if abs(est.floor - a) > 1e-10 * a:
                exact_ok = False
        noisy_ok = True
        tt = np.arange(30)
        clean = 2.0 + 0.9**tt
        for seed in range(10):
            rng = SplitMix64(600 + seed)
            series = clean * (1.0 + rng.uniform_block(30, -1e-4, 1e-4))
            est = estimate_loss_floor(series, window=30)
            if abs(est.floor - 2.0) > 0.01:
                noisy_ok = False
        ok = exact_ok and noisy_ok
        _report(6, ok, "floor extrapolation exact on clean, <=1% on noisy series")
        assert exact_ok, "floor estimator inexact on noiseless geometric series"
        assert noisy_ok, "floor estimator error above 1% on noisy series"


class TestCriterion7TwoPhaseReproduction:
    def test_majority_of_seeds_show_the_two_phase_shape(self, paper_runs):
        passes = 0
        lines = []
        for seed in PAPER_SEEDS[:10]:
            traj = paper_runs[seed]
            try:
                seg = segment_phases(traj, fit_window=50, r2_threshold=0.9)
            except (NoExponentialPhase, TooShort):
                lines.append(f"  seed {seed}: no exponential phase")
                continue
            s, e = seg.exp_start, seg.exp_end
            length = e - s + 1
            excess = traj.losses[s : e + 1] - seg.floor
            usable = excess > 0
            slope, _, r2 = _linear_fit(
                np.arange(s, e + 1, dtype=float)[usable], np.log(excess[usable])
            )
            sd = step_distances(traj).raw
            rm = running_mean(sd, 40)[s:e]
            rm_slope, _, _ = _linear_fit(
                np.arange(rm.size, dtype=float), np.log(np.maximum(rm, 1e-300))
            )
            dist = distance_to_final(traj).raw[s : e + 1]
            pos = dist > 0
            d_slope, _, _ = _linear_fit(
                np.arange(dist.size, dtype=float)[pos], np.log(dist[pos])
            )
            mid = (s + e) // 2
            window = min(mid + 1 - traj.phase1_len, 200)
            est = estimate_loss_floor(traj.losses[: mid + 1], window=window)
            err = abs(est.floor - traj.losses[-1]) / traj.losses[-1]
            good = length >= 30 and r2 >= 0.85 and slope < 0 and rm_slope < 0 and d_slope < 0
            passes += good
            lines.append(
                f"  seed {seed}: phase [{s},{e}] r2={r2:.3f} "
                f"step-trend={rm_slope:+.1e} dist-trend={d_slope:+.1e} "
                f"floor-err@mid={err:.3f} {'ok' if good else 'not counted'}"
            )
        ok = passes >= 6
        _report(7, ok, f"two-phase shape on {passes}/10 seeds (need >= 6)")
        for line in lines:
            print(line)
        assert ok, f"two-phase reproduction on only {passes}/10 seeds"


class TestCriterion8Reproducibility:
    def test_byte_identical_artifacts(self, tmp_path):
        cfg = ExperimentConfig(seed=2, widths=(1, 1, 1), samples=5)
        run(cfg, tmp_path / "a")
        run(cfg, tmp_path / "b")
        files_a = sorted(f.name for f in (tmp_path / "a").iterdir())
        files_b = sorted(f.name for f in (tmp_path / "b").iterdir())
        same = files_a == files_b and all(
            (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in files_a
        )
        _report(8, same, "identical (seed, config) gives byte-identical artifacts")
        assert same
