"""Post-inference adaptation: learn an annotator's preference from corrections.

After the main network has predicted a test image, a reviewer corrects the
mask (or approves one). A small preference head — two stacked 3x3
convolutions reading the decoder's final feature map concatenated with the
main prediction — learns to reproduce such corrections, while the backbone
itself receives the same supervision at a much smaller learning rate so the
source knowledge is not washed out. Regions where the style-augmented copies
of the image disagree get extra weight: disagreement is where correction
carries the most information.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import SegNetwork, _he_fill
from .errors import ConfigError, ShapeError, ValidationError
from .objectives import (
    argmax_mask,
    divergence_map,
    dsc,
    entropy_map,
    feedback_loss,
    one_hot_mask,
)
from .pre_adapt import _batch_to_input
from .rle import encode_mask
from .styleaug import AugmentationRanges, make_test_batch

WEIGHT_MODES = ("mdiv", "entropy", "none")
SELECTION_POLICIES = ("oracle_dsc", "main_head", "human")


class PreferenceHead(nn.Module):
    """Two stacked 3x3 convolutions mapping (features ++ prediction) to logits."""

    def __init__(self, feature_channels: int, num_classes: int, hidden: int = 16):
        super().__init__()
        if feature_channels < 1 or num_classes < 2 or hidden < 1:
            raise ConfigError("preference head needs >=1 feature channel, >=2 classes, >=1 hidden")
        self.feature_channels = feature_channels
        self.num_classes = num_classes
        self.conv1 = nn.Conv2d(feature_channels + num_classes, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, num_classes, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(torch.relu(self.conv1(x)))


def init_head(
    feature_channels: int, num_classes: int, seed: int = 0, hidden: int = 16
) -> PreferenceHead:
    """Build a preference head with seeded He-normal weights and zero biases."""
    head = PreferenceHead(feature_channels, num_classes, hidden)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in (head.conv1, head.conv2):
            _he_fill(conv.weight, gen)
            conv.bias.zero_()
    return head


def head_forward(head: PreferenceHead, f_seg: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    """Preference-head probabilities for one item: softmax(head([f_seg; y_hat]))."""
    if f_seg.ndim != 3 or y_hat.ndim != 3:
        raise ShapeError("head_forward wants unbatched (C, H, W) and (K, H, W) inputs")
    if f_seg.shape[1:] != y_hat.shape[1:]:
        raise ShapeError(f"spatial mismatch: features {f_seg.shape} vs prediction {y_hat.shape}")
    if f_seg.shape[0] != head.feature_channels or y_hat.shape[0] != head.num_classes:
        raise ShapeError(
            f"head expects {head.feature_channels}+{head.num_classes} channels, "
            f"got {f_seg.shape[0]}+{y_hat.shape[0]}"
        )
    logits = head(torch.cat([f_seg, y_hat], dim=0).unsqueeze(0))[0]
    return torch.softmax(logits, dim=0)


@dataclass
class PostAdaptConfig:
    """Knobs for the feedback stage."""

    steps: int = 20
    lr_head: float = 0.01
    lr_backbone: float = 0.001   # must stay below lr_head (anti-forgetting)
    # Plain SGD: with momentum m the effective step size grows ~1/(1-m), and
    # on a 20-step single-sample fit anything near 0.99 overshoots so hard the
    # model leaves each feedback round worse on the *next* sample.
    momentum: float = 0.0
    weight_mode: str = "mdiv"    # "mdiv" | "entropy" | "none"
    b: int = 6                   # augmented copies for batch statistics
    stats_mix: float = 1.0
    fresh_batch_per_step: bool = True
    ranges: AugmentationRanges = field(default_factory=AugmentationRanges)

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr_head <= 0 or self.lr_backbone < 0:
            raise ConfigError("lr_head must be positive and lr_backbone non-negative")
        if self.lr_backbone >= self.lr_head:
            raise ConfigError(
                f"backbone lr ({self.lr_backbone}) must stay below head lr "
                f"({self.lr_head}); the backbone only fine-tunes"
            )
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.b < 1:
            raise ConfigError(f"need at least one augmented copy, got b={self.b}")
        if not 0.0 <= self.stats_mix <= 1.0:
            raise ConfigError(f"stats_mix must lie in [0, 1], got {self.stats_mix}")


@dataclass
class FeedbackRecord:
    """One feedback round-trip, serializable for reports and the service."""

    sample_id: str
    presented: dict[str, dict]   # head tag -> run-length mask as shown to the reviewer
    corrected: dict              # run-length mask the reviewer returned
    chosen_head: str
    loss_trace: list[dict[str, float]]
    duration_s: float
    failed: bool = False

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "presented": self.presented,
            "corrected": self.corrected,
            "chosen_head": self.chosen_head,
            "loss_trace": self.loss_trace,
            "duration_s": self.duration_s,
            "failed": self.failed,
        }


def select_mask(
    main: np.ndarray,
    pref: np.ndarray | None,
    policy: str = "oracle_dsc",
    reference: np.ndarray | None = None,
) -> tuple[np.ndarray, str]:
    """Pick which head's mask goes in front of the reviewer.

    "main_head" always shows the main prediction; "oracle_dsc" compares both
    masks against `reference` and shows the better one (ties go to the main
    head); "human" cannot be resolved here — the reviewer chooses
    interactively, so asking the library to do it is a configuration error.
    """
    if policy not in SELECTION_POLICIES:
        raise ConfigError(f"policy must be one of {SELECTION_POLICIES}, got {policy!r}")
    if policy == "human":
        raise ConfigError("the 'human' policy is resolved by the reviewer, not the library")
    if policy == "main_head" or pref is None:
        return main, "main"
    if reference is None:
        raise ConfigError("oracle_dsc selection needs a reference mask")
    if dsc(pref, reference).mean > dsc(main, reference).mean:
        return pref, "pref"
    return main, "main"


def select_presented(
    y_hat: torch.Tensor,
    y_tilde: torch.Tensor,
    policy: str = "oracle_dsc",
    reference: np.ndarray | None = None,
) -> tuple[np.ndarray, str]:
    """`select_mask` over the two heads' probability maps."""
    return select_mask(argmax_mask(y_hat), argmax_mask(y_tilde), policy, reference)


def post_inference_adapt(
    net: SegNetwork,
    head: PreferenceHead,
    image: np.ndarray,
    corrected_mask: np.ndarray,
    cfg: PostAdaptConfig,
    rng: np.random.Generator,
    *,
    sample_id: str = "",
    presented: dict[str, dict] | None = None,
    chosen_head: str = "main",
) -> tuple[SegNetwork, PreferenceHead, FeedbackRecord]:
    """Fold one corrected mask back into the model.

    `image` is the raw [0, 1] test image, `corrected_mask` the reviewer's
    (H, W) label map. Each step re-augments the image, runs the batch under
    batch statistics, and supervises both the preference head's and the main
    head's item-0 predictions with the corrected mask, weighted per pixel by
    1 + disagreement (or 1 + entropy, or unweighted, per `weight_mode`).
    The weight map is computed once, from the first forward pass — it anchors
    where the freshly adapted model was unstable at correction time; tracking
    the live model instead would let the map decay into augmentation noise as
    the fit progresses. Head and backbone share one backward pass but step at
    their own learning rates. A non-finite loss aborts the stage: both
    modules are restored to their pre-stage state and the record comes back
    marked failed.
    """
    started = time.perf_counter()
    if corrected_mask.shape != image.shape[1:]:
        raise ShapeError(
            f"corrected mask {corrected_mask.shape} does not match image plane {image.shape[1:]}"
        )
    k = net.arch.num_classes
    if head.num_classes != k or head.feature_channels != net.feature_channels:
        raise ConfigError("preference head geometry does not match the network")
    target = one_hot_mask(corrected_mask, k)

    net_snapshot = copy.deepcopy(net.state_dict())
    head_snapshot = copy.deepcopy(head.state_dict())
    net.set_bn_mode("batch", update_running=False, stats_mix=cfg.stats_mix)
    optimizer = torch.optim.SGD(
        [
            {"params": list(head.parameters()), "lr": cfg.lr_head},
            {"params": list(net.parameters()), "lr": cfg.lr_backbone},
        ],
        lr=cfg.lr_head,
        momentum=cfg.momentum,
    )

    trace: list[dict[str, float]] = []
    failed = False
    weight: torch.Tensor | None = None
    batch = make_test_batch(image, cfg.b, rng, cfg.ranges)
    for step in range(cfg.steps):
        if cfg.fresh_batch_per_step and step > 0:
            batch = make_test_batch(image, cfg.b, rng, cfg.ranges)
        out = net(_batch_to_input(batch))
        y_hat = out.probs[0]
        y_tilde = head_forward(head, out.f_seg[0], y_hat)
        if step == 0 and cfg.weight_mode == "mdiv":
            weight = divergence_map(out.probs).detach()
        elif step == 0 and cfg.weight_mode == "entropy":
            weight = entropy_map(y_hat).detach()
        loss = feedback_loss(
            y_hat, y_tilde, target, weight, allow_unweighted=cfg.weight_mode == "none"
        )
        if not torch.isfinite(loss.value):
            net.load_state_dict(net_snapshot)
            head.load_state_dict(head_snapshot)
            failed = True
            break
        optimizer.zero_grad()
        loss.value.backward()
        optimizer.step()
        trace.append(dict(loss.components, total=float(loss.value.detach())))

    record = FeedbackRecord(
        sample_id=sample_id,
        presented=presented or {},
        corrected=encode_mask(corrected_mask),
        chosen_head=chosen_head,
        loss_trace=trace,
        duration_s=time.perf_counter() - started,
        failed=failed,
    )
    return net, head, record


def head_checkpoint_extra(head: PreferenceHead) -> dict:
    """Geometry needed to rebuild a head from saved arrays."""
    return {
        "feature_channels": head.feature_channels,
        "num_classes": head.num_classes,
        "hidden": head.conv1.out_channels,
    }


def validate_correction(mask: np.ndarray, num_classes: int = 3) -> np.ndarray:
    """Check a reviewer-supplied mask: right labels, cup nested inside disc."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"expected (H, W) label map, got shape {mask.shape}")
    if mask.dtype.kind not in "iu":
        raise ValidationError(f"labels must be integers, got dtype {mask.dtype}")
    bad = set(np.unique(mask)) - set(range(num_classes))
    if bad:
        raise ValidationError(f"labels {sorted(bad)} out of range 0..{num_classes - 1}")
    return mask.astype(np.uint8)
