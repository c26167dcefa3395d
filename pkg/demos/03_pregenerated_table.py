"""Optimise over a fixed table of pre-computed results.

A table of 600 Booth evaluations stands in for a set of simulations run
in advance.  Every proposed point is snapped to the nearest row that has
not been served yet, so each row is used at most once.

    python3 demos/03_pregenerated_table.py
"""

import tempfile
from pathlib import Path

import numpy as np

from bssrl import bench
from bssrl.baseline import BaselineConfig, run_batch_bo


def make_table(path, rows=600, seed=1010):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-10, 10, (rows, 2))
    y = np.array([bench.booth(x) for x in X])
    bench.write_pregen_dataset(bench.GridDataset(X, y), path)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "booth_table.csv"
        make_table(path)
        table = bench.load_pregen_dataset(path)
        print(f"{len(table.outputs)} rows, best raw value {table.outputs.min():.4f}")

        obj = bench.DatasetObjective(table)
        trace = run_batch_bo(obj, BaselineConfig(batch_size=5, num_batches=29), np.random.default_rng(0))
        best = obj.normalize_output(table.outputs.min())
        hit = next((int(e) for e, b in zip(trace.evals, trace.best_observed) if b <= best), None)
        print(f"served {obj.evaluations} distinct rows, best row reached after {hit} evals")


if __name__ == "__main__":
    main()
