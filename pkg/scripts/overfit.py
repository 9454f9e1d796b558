"""Train on 20 synthetic 64x64 samples until training AR reaches 0.9, then save the run.

    python scripts/overfit.py --out runs/overfit
"""

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

from grounding.config import TrainConfig
from grounding.dataio import SyntheticConfig, generate_synthetic, save_dataset
from grounding.trainer import evaluate, train, write_trace


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/overfit")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=0.9)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    data = generate_synthetic(args.seed, SyntheticConfig(image_size=64, n_samples=20))
    save_dataset(data, out / "data")
    cfg = dataclasses.replace(TrainConfig(), stop_at_ar=args.target)
    t0 = time.perf_counter()
    result = train(data, cfg)
    elapsed = time.perf_counter() - t0
    result.model.save(out / "checkpoint.bin")
    write_trace(result.trace, out / "trace.csv")
    metrics = evaluate(data, result.model)
    metrics.update(steps=result.steps, seconds=round(elapsed, 1),
                   loss_first=result.trace[0]["total"], loss_last=result.trace[-1]["total"])
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    print(json.dumps(metrics, indent=2))


if __name__ == "__main__":
    main()
