#!/usr/bin/env python3
"""Overfit the model on a tiny synthetic dataset and report train-set
metrics. Useful for smoke-testing the full training + inference path on
a CPU-only machine.
"""

import argparse
import sys
import time
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from make_synthetic_pair import synthetic_pair  # noqa: E402

from gdbnet.metrics import evaluate_pair  # noqa: E402
from gdbnet.networks import (CoarseNetConfig, GdbModel,  # noqa: E402
                             RefineNetConfig)
from gdbnet.pipeline import (DocumentPair, TrainConfig,  # noqa: E402
                             binarize_document, train_end_to_end)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--patch", type=int, default=128)
    ap.add_argument("--batch-size", type=int, default=2)
    ap.add_argument("--base-width", type=int, default=12)
    ap.add_argument("--n-res", type=int, default=2)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--docs", type=int, default=2)
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args()

    pairs = []
    for i in range(args.docs):
        img, gt = synthetic_pair(args.seed + i, args.size)
        pairs.append(DocumentPair(original=img, gt=gt, stem=f"doc{i:02d}"))

    torch.manual_seed(args.seed)  # initialization draws from the global RNG
    model = GdbModel(CoarseNetConfig(base_width=args.base_width, n_res=args.n_res),
                     RefineNetConfig(base_width=args.base_width))
    cfg = TrainConfig(patch=args.patch, steps=args.steps,
                      batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    t0 = time.time()
    model, rows = train_end_to_end(pairs, cfg, model=model)
    print(f"train {time.time() - t0:.1f} s")
    print(rows[1])
    print(rows[-1])

    for label, kw in (("tiled", dict(patch=args.patch, stride=args.patch // 2)),
                      ("whole", dict(patch=args.size, stride=args.size))):
        for pair in pairs:
            pred = binarize_document(pair.original, model, **kw)
            rep = evaluate_pair(pred, pair.gt)
            print(f"{label} {pair.stem} FM {rep.fm:.2f} PSNR {rep.psnr:.2f} "
                  f"DRD {rep.drd:.3f}")


if __name__ == "__main__":
    main()
