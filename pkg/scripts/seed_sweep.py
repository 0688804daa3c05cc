#!/usr/bin/env python3
"""Sweep independent seeds at the reference configuration and aggregate
convergence, phase-detection, and floor-estimate statistics."""

import argparse
import json

from vertexwalk.experiment import ExperimentConfig, sweep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=str, default="0,1,2,3,4")
    ap.add_argument("--out", type=str, default=None)
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--max-iter", type=int, default=20_000)
    args = ap.parse_args()

    cfg = ExperimentConfig(samples=args.samples, max_iterations=args.max_iter)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    agg = sweep(cfg, seeds, args.out)
    view = {k: v for k, v in agg.items() if k != "runs"}
    print(json.dumps(view, sort_keys=True, indent=1))
    for row in agg["runs"]:
        err = row.get("floor_estimate_error")
        err_txt = f"{err:.4f}" if err is not None else "n/a"
        print(
            f"seed {row['seed']}: status={row['status']} "
            f"final={row.get('final_loss', float('nan')):.3f} "
            f"iters={row.get('iterations', 0)} floor-err={err_txt}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
