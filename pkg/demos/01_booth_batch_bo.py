"""Batch Bayesian optimisation with a constant liar on the Booth function.

Runs three seeds with 5 points per batch and 148 evaluations each, then
prints the best normalized value after every round.  The minimum of
normalized Booth is about -3.

    python3 demos/01_booth_batch_bo.py
"""

import numpy as np

from bssrl import bench
from bssrl.baseline import BaselineConfig, run_batch_bo


def main(seeds=(0, 1, 2)):
    cfg = BaselineConfig(batch_size=5, num_batches=29, initial_points=3)
    target = bench.make_benchmark("booth").normalize_output(0.0)
    for seed in seeds:
        obj = bench.make_benchmark("booth")
        trace = run_batch_bo(obj, cfg, np.random.default_rng(seed))
        hit = next((int(e) for e, b in zip(trace.evals, trace.best_observed) if b <= target + 0.1), None)
        print(f"seed {seed}: best {trace.best_observed[-1]:.5f} after {obj.evaluations} evals, within 0.1 after {hit}")


if __name__ == "__main__":
    main()
