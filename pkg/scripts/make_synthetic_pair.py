#!/usr/bin/env python3
"""Generate a small synthetic degraded-document dataset.

Each document is a light page with dark bar strokes as "text" plus
softer bleed-through rectangles and additive noise; the ground truth
marks only the true strokes. Output layout matches ingest_dataset:
<out>/originals/*.png and <out>/gt/*.png.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gdbnet.imagecore import BinaryMap, RasterImage, save_image  # noqa: E402


def synthetic_pair(seed: int, size: int = 256):
    rng = np.random.default_rng(seed)
    page = np.full((size, size), 0.92, dtype=np.float32)
    gt = np.zeros((size, size), dtype=np.uint8)

    for _ in range(14):  # text strokes
        y = rng.integers(8, size - 24)
        x = rng.integers(8, size - 80)
        h = rng.integers(4, 9)
        w = rng.integers(30, 70)
        page[y:y + h, x:x + w] -= 0.72
        gt[y:y + h, x:x + w] = 1

    for _ in range(8):  # bleed-through, fainter and not in the ground truth
        y = rng.integers(0, size - 40)
        x = rng.integers(0, size - 40)
        h = rng.integers(10, 30)
        w = rng.integers(10, 30)
        region = page[y:y + h, x:x + w]
        region[gt[y:y + h, x:x + w] == 0] -= 0.25

    page += rng.normal(0.0, 0.04, page.shape).astype(np.float32)
    page = np.clip(page, 0.0, 1.0)
    return RasterImage(np.repeat(page[None], 3, axis=0)), BinaryMap(gt)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--count", type=int, default=2)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    (args.out / "originals").mkdir(parents=True, exist_ok=True)
    (args.out / "gt").mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        img, gt = synthetic_pair(args.seed + i, args.size)
        stem = f"doc{i:02d}"
        save_image(img, args.out / "originals" / f"{stem}.png")
        save_image(gt, args.out / "gt" / f"{stem}.png")
        print(f"wrote {stem} ({args.size}x{args.size})")


if __name__ == "__main__":
    main()
