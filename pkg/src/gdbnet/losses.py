"""Training objective: dice, binary cross-entropy, L1, and hinge
adversarial losses, composed with fixed balancing weights.

The four supervised output/target pairs are, in order: coarse mask,
coarse edge, resized global mask, refined mask. The dice loss flips a
sample's prediction and target when the target patch is pure background,
so an empty patch does not contribute a degenerate loss of 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

__all__ = [
    "LossWeights",
    "SupervisionPack",
    "AdversarialLosses",
    "dice_loss",
    "bce_loss",
    "l1_loss",
    "hinge_g",
    "hinge_d",
    "adversarial_composition",
    "total_generator_loss",
]

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 1.0
    lambda_b: float = 1.0
    lambda_l1: float = 10.0
    lambda_a: float = 0.1
    lambda_i: tuple = (1.0, 1.0, 1.0, 2.0)

    def __post_init__(self):
        if len(self.lambda_i) != 4:
            raise ValueError("lambda_i must have exactly 4 entries")
        if min(self.lambda_d, self.lambda_b, self.lambda_l1, self.lambda_a,
               *self.lambda_i) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class SupervisionPack:
    """Paired outputs in (0,1) and binary targets for the four terms."""

    outputs: tuple   # (o_mask_c, o_edge_c, o_global_full, o_mask_r)
    targets: tuple   # (t_mask,   t_edge,   t_full,        t_mask)

    def __post_init__(self):
        if len(self.outputs) != 4 or len(self.targets) != 4:
            raise ValueError("pack must hold exactly 4 output/target pairs")
        for o, t in zip(self.outputs, self.targets):
            if o.shape != t.shape:
                raise ValueError(f"output/target shape mismatch: {tuple(o.shape)} "
                                 f"vs {tuple(t.shape)}")


def dice_loss(pack: SupervisionPack, weights: LossWeights = LossWeights(),
              flip_stop_gradient: bool = False) -> torch.Tensor:
    """Weighted sum of per-term dice losses with the pure-background flip.

    Dice is computed per batch sample and averaged; a sample whose target
    contains no text has both its prediction and target flipped first.
    With ``flip_stop_gradient`` the flipped prediction is detached.
    """
    total = None
    for lam, o, t in zip(weights.lambda_i, pack.outputs, pack.targets):
        b = o.shape[0]
        o_flat = o.reshape(b, -1)
        t_flat = t.reshape(b, -1)
        pure_bg = (t_flat.sum(dim=1) == 0).unsqueeze(1)
        o_used = torch.where(pure_bg, 1.0 - o_flat, o_flat)
        if flip_stop_gradient:
            o_used = torch.where(pure_bg, o_used.detach(), o_used)
        t_used = torch.where(pure_bg, 1.0 - t_flat, t_flat)
        inter = (o_used * t_used).sum(dim=1)
        denom = (o_used ** 2).sum(dim=1) + (t_used ** 2).sum(dim=1)
        term = (1.0 - 2.0 * inter / denom.clamp_min(1e-12)).mean()
        total = lam * term if total is None else total + lam * term
    return total


def bce_loss(pack: SupervisionPack, weights: LossWeights = LossWeights()) -> torch.Tensor:
    """Per-pixel binary cross-entropy, weighted per term."""
    total = None
    for lam, o, t in zip(weights.lambda_i, pack.outputs, pack.targets):
        o_c = o.clamp(BCE_EPS, 1.0 - BCE_EPS)
        term = -(t * o_c.log() + (1.0 - t) * (1.0 - o_c).log()).mean()
        total = lam * term if total is None else total + lam * term
    return total


def l1_loss(pack: SupervisionPack, weights: LossWeights = LossWeights()) -> torch.Tensor:
    """Per-pixel-normalized L1 distance, weighted per term."""
    total = None
    for lam, o, t in zip(weights.lambda_i, pack.outputs, pack.targets):
        term = (o - t).abs().mean()
        total = lam * term if total is None else total + lam * term
    return total


def hinge_g(scores: torch.Tensor) -> torch.Tensor:
    """Generator hinge loss on a raw score map."""
    return -scores.mean()


def hinge_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Discriminator hinge loss over real and fake score maps."""
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


@dataclass
class AdversarialLosses:
    g_c: torch.Tensor
    g_r: torch.Tensor
    adv: torch.Tensor
    d_c: torch.Tensor
    d_r: torch.Tensor


def adversarial_composition(local_fake, global_fake, refined_fake,
                            local_real, global_real, refined_real) -> AdversarialLosses:
    """Compose the six score maps into generator and discriminator losses.

    The coarse generator term sums the local and global hinge losses, the
    refined term is weighted twice in the total adversarial loss.
    """
    for name, s in (("local_fake", local_fake), ("global_fake", global_fake),
                    ("refined_fake", refined_fake), ("local_real", local_real),
                    ("global_real", global_real), ("refined_real", refined_real)):
        if s is None:
            raise ValueError(f"missing score map {name!r}")
    g_c = hinge_g(local_fake) + hinge_g(global_fake)
    g_r = hinge_g(refined_fake)
    return AdversarialLosses(
        g_c=g_c,
        g_r=g_r,
        adv=g_c + 2.0 * g_r,
        d_c=hinge_d(local_real, local_fake) + hinge_d(global_real, global_fake),
        d_r=hinge_d(refined_real, refined_fake),
    )


def total_generator_loss(pack: SupervisionPack, weights: LossWeights,
                         adv: torch.Tensor, flip_stop_gradient: bool = False) -> torch.Tensor:
    return (weights.lambda_d * dice_loss(pack, weights, flip_stop_gradient)
            + weights.lambda_b * bce_loss(pack, weights)
            + weights.lambda_l1 * l1_loss(pack, weights)
            + weights.lambda_a * adv)
