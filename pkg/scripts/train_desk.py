"""Train a policy at desk scale (or the reduced directional scale) for one reward.

    python3 scripts/train_desk.py --scale reduced --reward global_imp_clipped --out runs/reduced_clipped
"""
import argparse
import logging
from dataclasses import replace

from pop.ppo import TrainConfig, train

SCALES = {
    # the stated desk configuration
    "desk": TrainConfig(batch_functions=64, iterations=2000, features=256, T=40, c=10, seed=0),
    # same hyperparameters, 4x fewer functions per batch and 300 iterations
    "reduced": TrainConfig(batch_functions=16, iterations=300, features=256, T=40, c=10, seed=0,
                           checkpoint_every=50),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", choices=sorted(SCALES), default="reduced")
    ap.add_argument("--reward", default="global_imp_clipped")
    ap.add_argument("--iterations", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = replace(SCALES[args.scale], reward=args.reward, seed=args.seed)
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    summary = train(cfg, args.out, progress=True)
    print(summary["final_checkpoint"])


if __name__ == "__main__":
    main()
