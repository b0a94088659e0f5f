"""DIBCO-style evaluation metrics: FM, pseudo-FM, PSNR, and DRD.

Text (value 1) is the positive class throughout. The prediction/ground
truth roles are not interchangeable.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .imagecore import BinaryMap, load_binary_map

__all__ = [
    "ConfusionCounts",
    "MetricReport",
    "confusion",
    "fmeasure",
    "psnr",
    "drd",
    "drd_weight_matrix",
    "thin_zhang_suen",
    "pseudo_fmeasure",
    "evaluate_pair",
    "dataset_report",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class MetricReport:
    fm: float
    p_fm: float
    psnr: float  # math.inf when pred == gt
    drd: float


def _check_dims(pred: BinaryMap, gt: BinaryMap):
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"dimension mismatch: pred {pred.data.shape} vs gt {gt.data.shape}")


def confusion(pred: BinaryMap, gt: BinaryMap) -> ConfusionCounts:
    _check_dims(pred, gt)
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    return ConfusionCounts(
        tp=int((p & g).sum()),
        fp=int((p & ~g).sum()),
        fn=int((~p & g).sum()),
        tn=int((~p & ~g).sum()),
    )


def fmeasure(counts: ConfusionCounts) -> float:
    if counts.tp + counts.fn == 0 and counts.tp + counts.fp == 0:
        # Both images agree there is no text at all.
        return 100.0
    if counts.tp == 0:
        return 0.0
    precision = counts.tp / (counts.tp + counts.fp)
    recall = counts.tp / (counts.tp + counts.fn)
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def psnr(pred: BinaryMap, gt: BinaryMap) -> float:
    _check_dims(pred, gt)
    diff = int((pred.data != gt.data).sum())
    if diff == 0:
        return math.inf
    mse = diff / pred.data.size
    return 10.0 * math.log10(1.0 / mse)


def drd_weight_matrix() -> np.ndarray:
    """5x5 normalized reciprocal-distance weights; zero at the center."""
    idx = np.arange(-2, 3, dtype=np.float64)
    dy, dx = np.meshgrid(idx, idx, indexing="ij")
    dist = np.hypot(dx, dy)
    w = np.zeros((5, 5))
    nz = dist > 0
    w[nz] = 1.0 / dist[nz]
    return w / w.sum()


_DRD_W = drd_weight_matrix()


def _nubn(gt: np.ndarray) -> int:
    """Count of non-uniform complete 8x8 blocks in the ground truth."""
    h, w = gt.shape
    count = 0
    for y in range(0, h - h % 8, 8):
        for x in range(0, w - w % 8, 8):
            block = gt[y:y + 8, x:x + 8]
            if 0 < block.sum() < 64:
                count += 1
    return count


def drd(pred: BinaryMap, gt: BinaryMap) -> float:
    """Distance reciprocal distortion; 0 iff pred equals gt."""
    _check_dims(pred, gt)
    p = pred.data.astype(np.float64)
    g = gt.data.astype(np.float64)
    flipped = pred.data != gt.data
    if not flipped.any():
        return 0.0
    h, w = g.shape
    total = np.zeros((h, w))
    # Accumulate W(u,v) * |GT(y+u, x+v) - pred(y, x)|; out-of-bounds GT
    # cells contribute nothing and the weights are not renormalized.
    for u in range(-2, 3):
        for v in range(-2, 3):
            wgt = _DRD_W[u + 2, v + 2]
            if wgt == 0.0:
                continue
            ys = slice(max(0, -u), min(h, h - u))
            xs = slice(max(0, -v), min(w, w - v))
            gys = slice(max(0, u), min(h, h + u))
            gxs = slice(max(0, v), min(w, w + v))
            total[ys, xs] += wgt * np.abs(g[gys, gxs] - p[ys, xs])
    distortion = total[flipped].sum()
    nubn = max(_nubn(gt.data), 1)
    return float(distortion / nubn)


def thin_zhang_suen(gt: BinaryMap) -> BinaryMap:
    """Two-subiteration thinning to a 1-pixel-wide skeleton."""
    img = gt.data.astype(np.uint8)
    if img.sum() == 0:
        return BinaryMap(img)
    padded = np.pad(img, 1)

    def neighbors(a):
        # P2..P9 clockwise from north, per the classical labeling.
        return [
            a[:-2, 1:-1], a[:-2, 2:], a[1:-1, 2:], a[2:, 2:],
            a[2:, 1:-1], a[2:, :-2], a[1:-1, :-2], a[:-2, :-2],
        ]

    changed = True
    while changed:
        changed = False
        for phase in (0, 1):
            nb = neighbors(padded)
            b = sum(n.astype(np.int32) for n in nb)
            ring = nb + [nb[0]]
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int32)
                    for i in range(8))
            p2, p4, p6, p8 = nb[0], nb[2], nb[4], nb[6]
            if phase == 0:
                cond = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            remove = (
                (padded[1:-1, 1:-1] == 1)
                & (b >= 2) & (b <= 6) & (a == 1) & cond
            )
            if remove.any():
                padded[1:-1, 1:-1][remove] = 0
                changed = True
    return BinaryMap(padded[1:-1, 1:-1])


def pseudo_fmeasure(pred: BinaryMap, gt: BinaryMap) -> float:
    """F-measure with recall computed against the skeletonized ground truth."""
    _check_dims(pred, gt)
    skel = thin_zhang_suen(gt).data.astype(bool)
    counts = confusion(pred, gt)
    if not skel.any():
        return fmeasure(counts)
    p_recall = float((pred.data.astype(bool) & skel).sum()) / float(skel.sum())
    if counts.tp + counts.fp == 0:
        precision = 0.0
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    if precision + p_recall == 0:
        return 0.0
    return 100.0 * 2.0 * precision * p_recall / (precision + p_recall)


def evaluate_pair(pred: BinaryMap, gt: BinaryMap) -> MetricReport:
    counts = confusion(pred, gt)
    return MetricReport(
        fm=fmeasure(counts),
        p_fm=pseudo_fmeasure(pred, gt),
        psnr=psnr(pred, gt),
        drd=drd(pred, gt),
    )


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def dataset_report(pred_dir, gt_dir, csv_path=None):
    """Per-image metrics plus arithmetic means over matching stems.

    Returns (rows, mean_report) where rows is a list of (stem, MetricReport).
    Infinite PSNR values are excluded from the PSNR mean; a footer records
    how many were excluded and which pairs were skipped for size mismatch.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gt_files = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.is_file()}
    rows = []
    skipped = []
    for pred_path in sorted(pred_dir.iterdir()):
        if not pred_path.is_file() or pred_path.stem not in gt_files:
            continue
        pred = load_binary_map(pred_path)
        gt = load_binary_map(gt_files[pred_path.stem])
        if pred.data.shape != gt.data.shape:
            print(f"warning: size mismatch for {pred_path.stem}, skipped", file=sys.stderr)
            skipped.append(pred_path.stem)
            continue
        rows.append((pred_path.stem, evaluate_pair(pred, gt)))
    if not rows:
        raise DatasetError(f"no matching prediction/ground-truth pairs under {pred_dir}")

    finite_psnr = [r.psnr for _, r in rows if not math.isinf(r.psnr)]
    inf_count = len(rows) - len(finite_psnr)
    mean = MetricReport(
        fm=sum(r.fm for _, r in rows) / len(rows),
        p_fm=sum(r.p_fm for _, r in rows) / len(rows),
        psnr=sum(finite_psnr) / len(finite_psnr) if finite_psnr else math.inf,
        drd=sum(r.drd for _, r in rows) / len(rows),
    )
    if csv_path is not None:
        lines = ["stem,fm,pfm,psnr,drd"]
        for stem, r in rows:
            lines.append(f"{stem},{_fmt(r.fm)},{_fmt(r.p_fm)},{_fmt(r.psnr)},{_fmt(r.drd)}")
        lines.append(f"MEAN,{_fmt(mean.fm)},{_fmt(mean.p_fm)},{_fmt(mean.psnr)},{_fmt(mean.drd)}")
        if inf_count:
            lines.append(f"# {inf_count} infinite PSNR value(s) excluded from the mean")
        if skipped:
            lines.append(f"# skipped (size mismatch): {' '.join(skipped)}")
        Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows, mean
