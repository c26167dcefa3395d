"""Train a batch policy on shifted Ackley functions and deploy it on Booth.

The defaults are kept small so the demo finishes in about a minute; pass
``--episodes 200`` for the full-length training run.

    python3 demos/02_train_and_deploy.py --episodes 20
"""

import argparse

import numpy as np

from bssrl import bench, gp
from bssrl.env import EnvConfig
from bssrl.trainer import FunctionClassSpec, TrainConfig, deploy_policy, train_policy


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=10)
    args = ap.parse_args(argv)

    n = args.batch_size
    train_env = EnvConfig(batch_size=n, num_batches=150 // n, fit=gp.FitConfig(restarts=1))
    tc = TrainConfig(episodes_per_function=args.episodes, env=train_env, seed=0)

    def progress(row):
        print(f"episode {row.episode_index:4d}  return {row.episode_return:8.4f}  best {row.final_best_observed:8.4f}")

    result = train_policy(FunctionClassSpec(), tc, progress=progress)
    names = tuple(result.training_functions)

    # the reset batch counts against the budget, so m = 150 / n - 1
    deploy_env = EnvConfig(batch_size=n, num_batches=150 // n - 1)
    for seed in range(3):
        obj = bench.make_benchmark("booth")
        trace = deploy_policy(result.net, obj, deploy_env, np.random.default_rng(seed), exclude=names)
        print(f"booth seed {seed}: best {trace.best_observed[-1]:.5f} after {obj.evaluations} evals")


if __name__ == "__main__":
    main()
