"""Dataset ingestion, input construction, training loop, and tiled
inference with stitching.

Input construction per patch: the priori mask is global Otsu computed on
the full document grayscale and then cropped (per-patch Otsu hallucinates
text on blank regions); the priori edge is Sobel of the patch grayscale.
The multi-scale path runs the coarse net once on a 256x256 resize of the
whole document and is cached across patches at inference.
"""

from __future__ import annotations

import math
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .classical import binarize_otsu, sobel_edge
from .errors import DatasetError, NumericalError
from .imagecore import (BinaryMap, RasterImage, crop, load_binary_map,
                        load_image, pad_reflect, resize_bilinear, to_grayscale)
from .losses import (LossWeights, SupervisionPack, adversarial_composition,
                     bce_loss, dice_loss, hinge_d, l1_loss,
                     total_generator_loss)
from .networks import GdbModel
from .tensorops import Adam

GLOBAL_SIZE = 256

__all__ = [
    "DocumentPair",
    "SampleBundle",
    "GlobalBundle",
    "PatchGrid",
    "TrainConfig",
    "ingest_dataset",
    "make_inputs",
    "make_global",
    "multiscale_global_mask",
    "train_end_to_end",
    "binarize_document",
    "iterate_once",
    "compute_grid",
    "stitch_patches",
]


@dataclass
class DocumentPair:
    original: RasterImage  # 3-channel
    gt: BinaryMap
    stem: str
    _full_otsu: BinaryMap | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.original.channels == 1:
            self.original = RasterImage(np.repeat(self.original.data, 3, axis=0))
        if (self.original.width, self.original.height) != (self.gt.width, self.gt.height):
            raise ValueError(f"{self.stem}: original and ground truth dims differ")

    def full_otsu(self) -> BinaryMap:
        if self._full_otsu is None:
            self._full_otsu = binarize_otsu(to_grayscale(self.original))
        return self._full_otsu


@dataclass
class SampleBundle:
    i_p: RasterImage
    i_m: BinaryMap
    i_e: RasterImage
    i_grey: RasterImage
    t_m: BinaryMap
    t_e: RasterImage
    origin: tuple


@dataclass
class GlobalBundle:
    i_f: RasterImage
    i_fm: BinaryMap
    i_fe: RasterImage
    t_f_r: BinaryMap | None


@dataclass
class PatchGrid:
    patch: int
    stride: int
    origins: list
    padded_dims: tuple  # (width, height)


@dataclass
class TrainConfig:
    patch: int = 256
    steps: int = 1000
    batch_size: int = 4
    d_steps_per_g: int = 1
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    use_multiscale: bool = True
    flip_stop_gradient: bool = False

    def __post_init__(self):
        if self.patch % 16:
            raise ValueError("patch size must be divisible by 16")


def ingest_dataset(root) -> list:
    """Pair originals/ and gt/ files by stem; skips are warned and recorded
    in <root>/ingest_manifest.csv."""
    root = Path(root)
    orig_dir, gt_dir = root / "originals", root / "gt"
    if not orig_dir.is_dir() or not gt_dir.is_dir():
        raise DatasetError(f"{root} must contain originals/ and gt/ subdirectories")
    gt_files = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.is_file()}
    pairs, manifest = [], ["stem,status"]
    for path in sorted(orig_dir.iterdir()):
        if not path.is_file():
            continue
        if path.stem not in gt_files:
            print(f"warning: {path.stem} has no ground truth, skipped", file=sys.stderr)
            manifest.append(f"{path.stem},missing_gt")
            continue
        original = load_image(path)
        gt = load_binary_map(gt_files[path.stem])
        if (original.width, original.height) != (gt.width, gt.height):
            print(f"warning: {path.stem} dimension mismatch, skipped", file=sys.stderr)
            manifest.append(f"{path.stem},dim_mismatch")
            continue
        manifest.append(f"{path.stem},ok")
        pairs.append(DocumentPair(original=original, gt=gt, stem=path.stem))
    for stem in sorted(set(gt_files) - {p.stem for p in pairs}):
        manifest.append(f"{stem},missing_original")
    (root / "ingest_manifest.csv").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    if not pairs:
        raise DatasetError(f"no usable document pairs under {root}")
    return pairs


def make_inputs(doc: DocumentPair, origin, patch: int) -> SampleBundle:
    x, y = origin
    i_p = crop(doc.original, x, y, patch, patch)
    i_grey = to_grayscale(i_p)
    i_m = crop(doc.full_otsu(), x, y, patch, patch)
    i_e = sobel_edge(i_grey)
    t_m = crop(doc.gt, x, y, patch, patch)
    t_e = sobel_edge(RasterImage(t_m.data.astype(np.float32)[None]))
    return SampleBundle(i_p=i_p, i_m=i_m, i_e=i_e, i_grey=i_grey,
                        t_m=t_m, t_e=t_e, origin=(x, y))


def make_global(doc: DocumentPair) -> GlobalBundle:
    i_f = resize_bilinear(doc.original, GLOBAL_SIZE, GLOBAL_SIZE)
    grey = to_grayscale(i_f)
    gt_real = RasterImage(doc.gt.data.astype(np.float32)[None])
    t_resized = resize_bilinear(gt_real, GLOBAL_SIZE, GLOBAL_SIZE)
    return GlobalBundle(
        i_f=i_f,
        i_fm=binarize_otsu(grey),
        i_fe=sobel_edge(grey),
        t_f_r=BinaryMap((t_resized.data[0] >= 0.5).astype(np.uint8)),
    )


def _t(img, dtype=torch.float32) -> torch.Tensor:
    """(1, C, H, W) tensor from a RasterImage or BinaryMap."""
    if isinstance(img, BinaryMap):
        return torch.from_numpy(img.data.astype(np.float32))[None, None]
    return torch.from_numpy(img.data)[None]


def _global_inputs(bundle: GlobalBundle):
    return _t(bundle.i_f), _t(bundle.i_fm), _t(bundle.i_fe)


def multiscale_global_mask(doc: DocumentPair, origin, patch: int, model,
                           cache: dict | None = None) -> torch.Tensor:
    """Global-branch mask resized back to document scale and cropped at
    the patch coordinates. ``cache`` maps doc stem to the full-size map
    so the global pass runs once per document."""
    key = doc.stem
    if cache is not None and key in cache:
        full = cache[key]
    else:
        bundle = make_global(doc)
        o_fm, _ = model.coarse(*_global_inputs(bundle))
        full = F.interpolate(o_fm, size=(doc.original.height, doc.original.width),
                             mode="bilinear", align_corners=False)
        if cache is not None:
            cache[key] = full
    x, y = origin
    return full[:, :, y:y + patch, x:x + patch]


def compute_grid(width: int, height: int, patch: int, stride: int) -> PatchGrid:
    """Tiling that covers every pixel of the padded image."""
    if stride > patch or stride < 1:
        raise ValueError("stride must satisfy 1 <= stride <= patch")

    def axis(n):
        if n <= patch:
            return patch, [0]
        steps = math.ceil((n - patch) / stride)
        return patch + steps * stride, [i * stride for i in range(steps + 1)]

    pw, xs = axis(width)
    ph, ys = axis(height)
    origins = [(x, y) for y in ys for x in xs]
    return PatchGrid(patch=patch, stride=stride, origins=origins, padded_dims=(pw, ph))


def stitch_patches(patches, origins, padded_dims, patch: int) -> np.ndarray:
    """Average overlapping patch maps into one (H, W) array."""
    pw, ph = padded_dims
    acc = np.zeros((ph, pw), dtype=np.float64)
    cnt = np.zeros((ph, pw), dtype=np.float64)
    for p, (x, y) in zip(patches, origins):
        acc[y:y + patch, x:x + patch] += p
        cnt[y:y + patch, x:x + patch] += 1.0
    if (cnt == 0).any():
        raise ValueError("tiling does not cover the padded image")
    return acc / cnt


def _check_finite(step, **values):
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NumericalError(f"non-finite loss at step {step}: {bad}")


def train_end_to_end(pairs, cfg: TrainConfig, model: GdbModel | None = None,
                     log_path=None, start_step: int = 0,
                     weights: LossWeights = LossWeights()):
    """Adversarial training loop; returns (model, log_rows).

    Each step samples one document, draws ``batch_size`` patch bundles
    plus the document's global bundle, updates both discriminators, then
    updates the generator on the composite loss. Deterministic for a
    fixed seed.
    """
    if not pairs:
        raise DatasetError("training requires at least one document pair")
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    if model is None:
        model = GdbModel()
    model.train()
    gen = model.generator
    opt_g = Adam(gen.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_dc = Adam(model.d_coarse.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_dr = Adam(model.d_refine.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    log_rows = ["step,dice,bce,l1,adv,d_c,d_r,total"]

    def forward_generator(tensors, gbundle_t, doc):
        i_p, i_m, i_e, i_grey, t_m, t_e = tensors
        o_m_c, o_e_c = gen.coarse(i_p, i_m, i_e)
        g_if, g_ifm, g_ife = gbundle_t
        o_fm, _ = gen.coarse(g_if, g_ifm, g_ife)
        o_fm_full = F.interpolate(o_fm, size=(doc.original.height, doc.original.width),
                                  mode="bilinear", align_corners=False)
        if cfg.use_multiscale:
            o_gm = torch.cat([
                o_fm_full[:, :, y:y + cfg.patch, x:x + cfg.patch]
                for (x, y) in origins], dim=0)
        else:
            o_gm = o_m_c
        o_m_r = gen.refine(i_grey, o_m_c, o_e_c, o_gm)
        return o_m_c, o_e_c, o_fm, o_fm_full, o_m_r

    for step in range(start_step + 1, start_step + cfg.steps + 1):
        doc = pairs[rng.randrange(len(pairs))]
        w, h = doc.original.width, doc.original.height
        if w < cfg.patch or h < cfg.patch:
            raise DatasetError(f"{doc.stem}: document smaller than the training patch")
        origins = [(rng.randint(0, w - cfg.patch), rng.randint(0, h - cfg.patch))
                   for _ in range(cfg.batch_size)]
        bundles = [make_inputs(doc, o, cfg.patch) for o in origins]
        i_p = torch.cat([_t(b.i_p) for b in bundles])
        i_m = torch.cat([_t(b.i_m) for b in bundles])
        i_e = torch.cat([_t(b.i_e) for b in bundles])
        i_grey = torch.cat([_t(b.i_grey) for b in bundles])
        t_m = torch.cat([_t(b.t_m) for b in bundles])
        t_e = torch.cat([_t(b.t_e) for b in bundles])
        tensors = (i_p, i_m, i_e, i_grey, t_m, t_e)
        gbundle = make_global(doc)
        gbundle_t = _global_inputs(gbundle)
        t_f_r = _t(gbundle.t_f_r)
        t_f = _t(doc.gt)

        # Discriminator updates on detached generator outputs.
        d_c_val = d_r_val = 0.0
        for _ in range(cfg.d_steps_per_g):
            with torch.no_grad():
                o_m_c, _, o_fm, _, o_m_r = forward_generator(tensors, gbundle_t, doc)
            loss_dc = (
                hinge_d(model.d_coarse(i_p, t_m), model.d_coarse(i_p, o_m_c))
                + hinge_d(model.d_coarse(gbundle_t[0], t_f_r),
                                 model.d_coarse(gbundle_t[0], o_fm)))
            opt_dc.zero_grad()
            loss_dc.backward()
            opt_dc.step()
            loss_dr = hinge_d(model.d_refine(i_p, t_m), model.d_refine(i_p, o_m_r))
            opt_dr.zero_grad()
            loss_dr.backward()
            opt_dr.step()
            d_c_val, d_r_val = loss_dc.item(), loss_dr.item()

        # Generator update against the post-update discriminators.
        o_m_c, o_e_c, o_fm, o_fm_full, o_m_r = forward_generator(tensors, gbundle_t, doc)
        pack = SupervisionPack(outputs=(o_m_c, o_e_c, o_fm_full, o_m_r),
                               targets=(t_m, t_e, t_f, t_m))
        adv = adversarial_composition(
            local_fake=model.d_coarse(i_p, o_m_c),
            global_fake=model.d_coarse(gbundle_t[0], o_fm),
            refined_fake=model.d_refine(i_p, o_m_r),
            local_real=model.d_coarse(i_p, t_m),
            global_real=model.d_coarse(gbundle_t[0], t_f_r),
            refined_real=model.d_refine(i_p, t_m),
        )
        total = total_generator_loss(pack, weights, adv.adv, cfg.flip_stop_gradient)
        opt_g.zero_grad()
        opt_dc.zero_grad()
        opt_dr.zero_grad()
        total.backward()
        opt_g.step()

        with torch.no_grad():
            dice_v = dice_loss(pack, weights, cfg.flip_stop_gradient).item()
            bce_v = bce_loss(pack, weights).item()
            l1_v = l1_loss(pack, weights).item()
        adv_v, total_v = adv.adv.item(), total.item()
        _check_finite(step, dice=dice_v, bce=bce_v, l1=l1_v, adv=adv_v,
                      d_c=d_c_val, d_r=d_r_val, total=total_v)
        log_rows.append(f"{step},{dice_v:.6f},{bce_v:.6f},{l1_v:.6f},"
                        f"{adv_v:.6f},{d_c_val:.6f},{d_r_val:.6f},{total_v:.6f}")

    if log_path is not None:
        Path(log_path).write_text("\n".join(log_rows) + "\n", encoding="utf-8")
    return model, log_rows



@dataclass
class DocumentRun:
    """Full-document maps from one inference pass, at input dimensions."""

    prob: np.ndarray         # refined mask probabilities
    coarse_mask: np.ndarray
    coarse_edge: np.ndarray


def _pad_to_grid(image: RasterImage, grid: PatchGrid) -> RasterImage:
    pw, ph = grid.padded_dims
    return pad_reflect(image, 0, pw - image.width, 0, ph - image.height)


def run_document(image: RasterImage, model, use_multiscale: bool = True,
                 prior_mask: np.ndarray | None = None,
                 prior_edge: np.ndarray | None = None,
                 patch: int = 256, stride: int = 128) -> DocumentRun:
    """Tiled inference over one document; returns stitched maps.

    ``prior_mask``/``prior_edge`` (full-size, unpadded) replace the
    Otsu/Sobel priors when given, implementing the iterative operation.
    """
    gen = model.generator if isinstance(model, GdbModel) else model
    gen.eval()
    if image.channels == 1:
        image = RasterImage(np.repeat(image.data, 3, axis=0))
    w0, h0 = image.width, image.height
    eff_patch = min(patch, 16 * (min(w0, h0) // 16))
    if eff_patch < 16:
        raise ValueError("document must be at least 16x16")
    eff_stride = min(stride, eff_patch)
    grid = compute_grid(w0, h0, eff_patch, eff_stride)
    padded = _pad_to_grid(image, grid)
    pw, ph = grid.padded_dims

    grey_full = to_grayscale(padded)
    if prior_mask is not None:
        mask_full = np.pad(prior_mask.astype(np.float32),
                           ((0, ph - h0), (0, pw - w0)), mode="reflect")
    else:
        mask_full = binarize_otsu(grey_full).data.astype(np.float32)
    if prior_edge is not None:
        edge_full = np.pad(prior_edge.astype(np.float32),
                           ((0, ph - h0), (0, pw - w0)), mode="reflect")
    else:
        edge_full = None  # per-patch Sobel of the grayscale

    with torch.no_grad():
        o_gm_full = None
        if use_multiscale:
            i_f = resize_bilinear(padded, GLOBAL_SIZE, GLOBAL_SIZE)
            g_grey = to_grayscale(i_f)
            o_fm, _ = gen.coarse(_t(i_f), _t(binarize_otsu(g_grey)), _t(sobel_edge(g_grey)))
            o_gm_full = F.interpolate(o_fm, size=(ph, pw), mode="bilinear",
                                      align_corners=False)

        probs, masks, edges = [], [], []
        for (x, y) in grid.origins:
            i_p = crop(padded, x, y, eff_patch, eff_patch)
            i_grey = to_grayscale(i_p)
            i_m = torch.from_numpy(
                mask_full[y:y + eff_patch, x:x + eff_patch])[None, None]
            if edge_full is not None:
                i_e = torch.from_numpy(
                    edge_full[y:y + eff_patch, x:x + eff_patch])[None, None]
            else:
                i_e = _t(sobel_edge(i_grey))
            o_m_c, o_e_c = gen.coarse(_t(i_p), i_m, i_e)
            if use_multiscale:
                o_gm = o_gm_full[:, :, y:y + eff_patch, x:x + eff_patch]
            else:
                o_gm = o_m_c
            o_m_r = gen.refine(_t(i_grey), o_m_c, o_e_c, o_gm)
            probs.append(o_m_r[0, 0].numpy())
            masks.append(o_m_c[0, 0].numpy())
            edges.append(o_e_c[0, 0].numpy())

    def stitch(patch_list):
        full = stitch_patches(patch_list, grid.origins, grid.padded_dims, eff_patch)
        return full[:h0, :w0]

    return DocumentRun(prob=stitch(probs), coarse_mask=stitch(masks),
                       coarse_edge=stitch(edges))


def binarize_document(image: RasterImage, model, use_multiscale: bool = True,
                      iterations: int = 0, patch: int = 256,
                      stride: int = 128) -> BinaryMap:
    """End-to-end binarization with optional iterative refinement rounds."""
    run = run_document(image, model, use_multiscale, patch=patch, stride=stride)
    for _ in range(iterations):
        run = run_document(
            image, model, use_multiscale,
            prior_mask=(run.coarse_mask >= 0.5).astype(np.float32),
            prior_edge=run.coarse_edge,
            patch=patch, stride=stride)
    return BinaryMap((run.prob >= 0.5).astype(np.uint8))


def iterate_once(image: RasterImage, prev: DocumentRun, model,
                 use_multiscale: bool = True, patch: int = 256,
                 stride: int = 128) -> DocumentRun:
    """One iterative-operation round: coarse outputs replace the priors."""
    return run_document(
        image, model, use_multiscale,
        prior_mask=(prev.coarse_mask >= 0.5).astype(np.float32),
        prior_edge=prev.coarse_edge,
        patch=patch, stride=stride)
