#!/usr/bin/env python3
"""Run one seeded vertex walk at the reference configuration
((4,5,4,3,2,1), 500 samples) and print the trajectory summary.

Writes the full artifact set (trajectory, series CSVs, summary.json) when
--out is given. Expect a few thousand pivots and O(10 s) of runtime.
"""

import argparse
import json

from vertexwalk.experiment import ExperimentConfig, run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", type=str, default=None, help="artifact directory")
    ap.add_argument("--max-iter", type=int, default=20_000)
    args = ap.parse_args()

    cfg = ExperimentConfig(seed=args.seed, max_iterations=args.max_iter)
    art = run(cfg, args.out)
    print(json.dumps(art.summary, sort_keys=True, indent=1))

    traj = art.trajectory
    if traj is not None:
        s = art.summary
        print(f"\niterates: {len(traj)} (vertex reached after {traj.phase1_len})")
        print(f"loss: {traj.losses[0]:.3f} -> {traj.losses[-1]:.6f}")
        if s["exp_phase_start"] is not None:
            print(
                f"exponential decay phase: iterations "
                f"[{s['exp_phase_start']}, {s['exp_phase_end']}]"
            )
            print(
                f"pre-convergence floor estimate at the phase midpoint: "
                f"{s['floor_estimate']:.6f} "
                f"(relative error {s['floor_estimate_error']:.4f})"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
