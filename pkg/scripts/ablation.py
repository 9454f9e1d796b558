"""Held-out AR of the full model against plain attention without the alignment loss.

Fixed 20-train / 10-test split of one synthetic set, three seeds per arm.

    python scripts/ablation.py --steps 2000
"""

import argparse
import dataclasses
import json

import numpy as np

from grounding.config import TrainConfig
from grounding.dataio import SyntheticConfig, generate_synthetic
from grounding.trainer import evaluate, train

ARMS = {
    "lpa+sal": lambda cfg: cfg,
    "lpa": lambda cfg: dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, sal=0.0)),
    "plain+sal": lambda cfg: dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, locality_bias=False)),
    "plain": lambda cfg: dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, locality_bias=False),
                                             loss=dataclasses.replace(cfg.loss, sal=0.0)),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--arms", nargs="+", default=list(ARMS), choices=list(ARMS))
    args = ap.parse_args()

    data = generate_synthetic(0, SyntheticConfig(image_size=64, n_samples=30))
    train_set, test_set = data[:20], data[20:]
    results = {}
    for arm in args.arms:
        scores = []
        for seed in args.seeds:
            cfg = ARMS[arm](TrainConfig(seed=seed, steps=args.steps, log_every=0))
            scores.append(evaluate(test_set, train(train_set, cfg).model)["all"])
        results[arm] = {"mean": float(np.mean(scores)), "per_seed": scores}
        print(arm, json.dumps(results[arm]))
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
