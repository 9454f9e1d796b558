"""Best IoU the dense head can reach on each ground-truth mask of a dataset.

The head's mask is sigmoid(bilinear_4x(logits)) up-sampled 4x again, where the
logits are a free (H/16, W/16) grid. Fitting that grid directly to each mask
gives an upper bound on per-phrase IoU, and their mean bounds training AR.

    python scripts/representable_iou.py --seed 0 --samples 20
"""

import argparse
from collections import defaultdict

import numpy as np

from grounding.dataio import SyntheticConfig, generate_synthetic
from grounding.head import binarize
from grounding.losses import bce_loss, dice_loss
from grounding.metrics import iou
from grounding.numeric import Parameter, ops
from grounding.trainer import Adam


def best_iou(mask: np.ndarray, steps: int = 1500, lr: float = 0.3) -> float:
    h, w = mask.shape
    logits = Parameter(np.zeros((h // 16, w // 16, 1)), name="logits")
    opt = Adam([logits])
    gt = mask[None].astype(np.float64)
    for _ in range(steps):
        opt.zero_grad()
        probs = ops.upsample_bilinear(ops.sigmoid(ops.upsample_bilinear(logits, 4)), 4)
        probs = ops.transpose(probs, (2, 0, 1))
        loss = bce_loss(probs, gt) + dice_loss(probs, gt)
        loss.backward()
        opt.step(lr)
    return iou(binarize(probs.data[0], 0.5), mask)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--steps", type=int, default=1500)
    args = ap.parse_args()

    data = generate_synthetic(args.seed, SyntheticConfig(image_size=args.size, n_samples=args.samples))
    by_word = defaultdict(list)
    for sample in data:
        for phrase in sample.phrases:
            by_word[sample.tokens[phrase.span[1] - 1]].append(best_iou(phrase.mask, args.steps))
    everything = [v for vs in by_word.values() for v in vs]
    print(f"mean representable IoU over {len(everything)} phrases: {np.mean(everything):.3f}")
    for word, values in sorted(by_word.items()):
        print(f"  {word:<12} {np.mean(values):.3f}  (n={len(values)})")


if __name__ == "__main__":
    main()
