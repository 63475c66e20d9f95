"""Losses and metrics: divergence map/loss, soft Dice, cross entropy, entropy, DSC.

All loss functions operate on torch tensors and are differentiable, so they can
be used both inside adaptation loops and in finite-difference gradient tests.
The DSC metric operates on integer label maps (numpy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import torch

from .errors import ShapeError, ValidationError

PROB_FLOOR = 1e-7
DICE_SMOOTH = 1e-5
SIMPLEX_TOL = 1e-4


@dataclass
class LossValue:
    """Scalar loss (live tensor, safe to backward) plus named sub-terms for reporting."""

    value: torch.Tensor
    components: dict[str, float] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value.detach())


class DscResult(NamedTuple):
    od: float
    oc: float
    mean: float


def _require_simplex(probs: torch.Tensor, name: str = "probs") -> None:
    if not torch.isfinite(probs).all():
        raise ValidationError(f"{name} contains non-finite values")
    if probs.min() < -SIMPLEX_TOL:
        raise ValidationError(f"{name} has negative entries")
    sums = probs.sum(dim=-3)
    if (sums - 1.0).abs().max() > SIMPLEX_TOL:
        raise ValidationError(f"{name} does not sum to 1 over the class axis")


def _require_one_hot(target: torch.Tensor) -> None:
    if not torch.isfinite(target).all():
        raise ValidationError("target contains non-finite values")
    bad = ((target != 0) & (target != 1)).any()
    if bad or (target.sum(dim=-3) != 1).any():
        raise ValidationError("target is not one-hot over the class axis")


def divergence_map(preds: torch.Tensor) -> torch.Tensor:
    """Per-pixel prediction divergence across N probability maps.

    ``preds`` is (N, K, H, W); each item is a per-pixel probability simplex.
    Returns an (H, W) map: the mean over items of the L2 distance (across the
    K class channels) between each prediction and the per-pixel mean
    prediction. Both the mean and the outer average divide by the item count N.
    """
    if preds.dim() != 4:
        raise ShapeError(f"expected (N, K, H, W) predictions, got shape {tuple(preds.shape)}")
    n = preds.shape[0]
    if n < 2:
        raise ValidationError("divergence undefined for fewer than 2 predictions")
    _require_simplex(preds, "preds")
    mean = preds.mean(dim=0, keepdim=True)
    sq = (preds - mean).square().sum(dim=1)  # (N, H, W)
    # sqrt is non-differentiable at exactly 0; the tiny floor keeps autograd
    # finite when all predictions agree.
    dist = torch.sqrt(sq.clamp_min(1e-24))
    return dist.mean(dim=0)


def divergence_loss(mdiv: torch.Tensor) -> LossValue:
    """Spatial mean of a divergence map."""
    if mdiv.numel() == 0:
        raise ValidationError("empty divergence map")
    value = mdiv.mean()
    return LossValue(value, {"divergence": float(value.detach())})


def soft_dice_loss(
    probs: torch.Tensor,
    target: torch.Tensor,
    weight: torch.Tensor | None = None,
) -> LossValue:
    """Soft Dice loss over foreground classes, optionally pixel-weighted.

    ``probs`` and one-hot ``target`` are (K, H, W) or (B, K, H, W); ``weight``
    is a nonnegative (H, W) (or (B, H, W)) map applied inside the intersection
    and the sums. Loss = 1 - mean over foreground classes (k >= 1) of the
    smoothed Dice term; batched inputs average the per-item loss.
    """
    probs, target, weight = _as_batched(probs, target, weight)
    _require_simplex(probs)
    _require_one_hot(target)
    if weight is None:
        w = torch.ones_like(probs[:, :1])
    else:
        if (weight < 0).any():
            raise ValidationError("weight map must be nonnegative")
        w = weight.unsqueeze(1)
    fg_p = probs[:, 1:]
    fg_t = target[:, 1:]
    inter = (w * fg_p * fg_t).sum(dim=(-2, -1))
    denom = (w * fg_p).sum(dim=(-2, -1)) + (w * fg_t).sum(dim=(-2, -1))
    dice = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)  # (B, K-1)
    value = (1.0 - dice.mean(dim=1)).mean()
    return LossValue(value, {"dice": float(value.detach())})


def cross_entropy_loss(
    probs: torch.Tensor,
    target: torch.Tensor,
    weight: torch.Tensor | None = None,
) -> LossValue:
    """Pixelwise cross entropy -log p(true class), weight-normalized mean."""
    probs, target, weight = _as_batched(probs, target, weight)
    _require_simplex(probs)
    _require_one_hot(target)
    p_true = (probs.clamp(PROB_FLOOR, 1.0) * target).sum(dim=1)  # (B, H, W)
    nll = -torch.log(p_true)
    if weight is None:
        value = nll.mean()
    else:
        if (weight < 0).any():
            raise ValidationError("weight map must be nonnegative")
        wsum = weight.sum()
        if wsum == 0:
            raise ValidationError("weight map sums to zero")
        value = (weight * nll).sum() / wsum
    return LossValue(value, {"cross_entropy": float(value.detach())})


def entropy_map(probs: torch.Tensor) -> torch.Tensor:
    """Per-pixel Shannon entropy -sum_k p_k log p_k, shape (H, W) (or (B, H, W))."""
    _require_simplex(probs)
    return -(probs * torch.log(probs.clamp_min(PROB_FLOOR))).sum(dim=-3)


def prediction_entropy(probs: torch.Tensor) -> LossValue:
    """Spatial mean Shannon entropy of a per-pixel class distribution."""
    value = entropy_map(probs).mean()
    return LossValue(value, {"entropy": float(value.detach())})


def feedback_loss(
    y_hat: torch.Tensor,
    y_tilde: torch.Tensor,
    target: torch.Tensor,
    weight_map: torch.Tensor | None = None,
    *,
    allow_unweighted: bool = False,
) -> LossValue:
    """Supervised correction loss for both heads, amplified by 1 + weight map.

    ``y_hat`` (main head) and ``y_tilde`` (preference head) are (K, H, W)
    probability maps, ``target`` the corrected one-hot mask. ``weight_map`` is
    the per-pixel divergence (or entropy) map; the effective pixel weight is
    ``1 + weight_map``. Sum of Dice + CE for each head, components reported
    separately.
    """
    if weight_map is None:
        if not allow_unweighted:
            raise ValidationError("weight_map missing; pass allow_unweighted=True for plain Eq-style sum")
        w = None
    else:
        if weight_map.shape != y_hat.shape[-2:]:
            raise ShapeError(f"weight map shape {tuple(weight_map.shape)} does not match spatial {tuple(y_hat.shape[-2:])}")
        w = 1.0 + weight_map
    terms = {
        "dice_pref": soft_dice_loss(y_tilde, target, w).value,
        "ce_pref": cross_entropy_loss(y_tilde, target, w).value,
        "dice_main": soft_dice_loss(y_hat, target, w).value,
        "ce_main": cross_entropy_loss(y_hat, target, w).value,
    }
    value = terms["dice_pref"] + terms["ce_pref"] + terms["dice_main"] + terms["ce_main"]
    return LossValue(value, {k: float(v.detach()) for k, v in terms.items()})


def binary_dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|); defined as 1.0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def dsc(pred_mask: np.ndarray, gt_mask: np.ndarray) -> DscResult:
    """Disc/cup DSC for 3-label maps: OD = (label >= 1), OC = (label == 2)."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    od = binary_dice(pred_mask >= 1, gt_mask >= 1)
    oc = binary_dice(pred_mask == 2, gt_mask == 2)
    return DscResult(od, oc, (od + oc) / 2.0)


def one_hot_mask(mask: np.ndarray | torch.Tensor, num_classes: int) -> torch.Tensor:
    """Label map (H, W) -> one-hot float tensor (K, H, W)."""
    t = torch.as_tensor(np.array(mask, copy=True), dtype=torch.long)
    if t.dim() != 2:
        raise ShapeError(f"expected (H, W) label map, got {tuple(t.shape)}")
    if t.min() < 0 or t.max() >= num_classes:
        raise ValidationError(f"labels outside [0, {num_classes})")
    return torch.nn.functional.one_hot(t, num_classes).permute(2, 0, 1).float()


def argmax_mask(probs: torch.Tensor) -> np.ndarray:
    """Probability map (K, H, W) -> uint8 label map (H, W)."""
    if probs.dim() != 3:
        raise ShapeError(f"expected (K, H, W) probabilities, got {tuple(probs.shape)}")
    return probs.argmax(dim=0).numpy().astype(np.uint8)


def _as_batched(
    probs: torch.Tensor,
    target: torch.Tensor,
    weight: torch.Tensor | None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    if probs.shape != target.shape:
        raise ShapeError(f"probs shape {tuple(probs.shape)} != target shape {tuple(target.shape)}")
    if probs.dim() == 3:
        probs, target = probs.unsqueeze(0), target.unsqueeze(0)
        if weight is not None:
            if weight.shape != probs.shape[-2:]:
                raise ShapeError(f"weight shape {tuple(weight.shape)} does not match spatial dims")
            weight = weight.unsqueeze(0)
    elif probs.dim() != 4:
        raise ShapeError(f"expected (K, H, W) or (B, K, H, W), got {tuple(probs.shape)}")
    elif weight is not None and weight.shape != probs.shape[:1] + probs.shape[-2:]:
        raise ShapeError("batched weight must be (B, H, W)")
    return probs, target, weight
