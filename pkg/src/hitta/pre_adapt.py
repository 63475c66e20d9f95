"""Pre-inference adaptation: align normalization affines to one test image.

Before the model predicts anything, the single test image is expanded into a
small batch of style-augmented copies (the original always rides along as
item 0). Running the batch through the network with batch-statistics
normalization already absorbs first-order intensity shift; on top of that,
the normalization scale/shift parameters are nudged for a few gradient steps
to shrink the disagreement between the copies' predictions. Only those
affine parameters move — convolution weights and the stored source
statistics stay untouched, so the model can always be restored.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import ForwardOutput, SegNetwork
from .datagen import normalize
from .errors import ConfigError, NumericError
from .objectives import divergence_map, prediction_entropy
from .styleaug import AugBatch, AugmentationRanges, make_test_batch

OBJECTIVES = ("divergence", "entropy")


@dataclass
class PreAdaptConfig:
    """Knobs for the pre-inference stage."""

    b: int = 6                  # augmented copies per batch (batch size is b + 1)
    steps: int = 20             # gradient steps on the normalization affines
    lr: float = 0.01
    momentum: float = 0.99
    fresh_batch_per_step: bool = True   # redraw augmentations each step
    stats_mix: float = 1.0      # 1.0 = pure test-batch statistics
    objective: str = "divergence"       # "entropy" gives the entropy-only variant
    ranges: AugmentationRanges = field(default_factory=AugmentationRanges)

    def __post_init__(self) -> None:
        if self.b < 1:
            raise ConfigError(f"need at least one augmented copy, got b={self.b}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr < 0 or self.momentum < 0 or self.momentum >= 1:
            raise ConfigError("lr must be >= 0 and momentum in [0, 1)")
        if not 0.0 <= self.stats_mix <= 1.0:
            raise ConfigError(f"stats_mix must lie in [0, 1], got {self.stats_mix}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass
class PreAdaptResult:
    """What the stage hands to inference and the ledgering around it.

    ``logits``/``probs``/``f_seg`` are the adapted network's outputs for the
    *original* image (batch item 0), detached. ``mdiv`` is the per-pixel
    disagreement map from the same final forward pass; ``loss_trace`` has one
    entry per optimization step; ``bn_delta`` summarizes how far the affines
    moved from their source values.
    """

    logits: torch.Tensor        # (K, H, W)
    probs: torch.Tensor         # (K, H, W)
    f_seg: torch.Tensor         # (C, H, W)
    mdiv: torch.Tensor          # (H, W)
    loss_trace: list[float]
    bn_delta: dict[str, float]


def _batch_to_input(batch: AugBatch) -> torch.Tensor:
    """Stack an augmented batch into a normalized float32 network input."""
    items = np.stack([normalize(item) for item in batch.items])
    return torch.from_numpy(items)


def reestimate_bn(net: SegNetwork, batch: AugBatch, stats_mix: float = 1.0) -> SegNetwork:
    """Switch the network to batch statistics computed from `batch`.

    Purely a mode flip plus validation: statistics are recomputed on every
    forward pass, the stored source statistics are never overwritten, and
    `stats_mix` blends batch statistics toward the stored ones (1.0 means
    ignore the stored ones entirely).
    """
    if batch.items.shape[0] < 2:
        raise ConfigError("batch statistics need at least 2 items")
    net.set_bn_mode("batch", update_running=False, stats_mix=stats_mix)
    return net


def _affine_snapshot(net: SegNetwork) -> dict[str, torch.Tensor]:
    return {name: p.detach().clone() for name, p in net.named_parameters() if "bn" in name}


def _objective(probs: torch.Tensor, objective: str) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (scalar loss, detached disagreement map) for one forward pass."""
    mdiv = divergence_map(probs)
    if objective == "divergence":
        loss = mdiv.mean()
    else:
        loss = prediction_entropy(probs).value
    return loss, mdiv.detach()


def pre_inference_adapt(
    net: SegNetwork,
    image: np.ndarray,
    cfg: PreAdaptConfig,
    rng: np.random.Generator,
) -> tuple[SegNetwork, PreAdaptResult]:
    """Adapt normalization affines on one raw [0, 1] image, then predict it.

    The network is mutated in place (affines only) and also returned. The
    final prediction comes from a fresh no-grad forward pass after the last
    step, so `probs` and `mdiv` reflect the adapted state. If a step produces
    a non-finite loss the affines are restored to their values before that
    step and NumericError is raised.
    """
    net.set_bn_mode("batch", update_running=False, stats_mix=cfg.stats_mix)

    affines = net.bn_affine_parameters()
    start = _affine_snapshot(net)
    frozen = [p for n, p in net.named_parameters() if "bn" not in n]
    for p in frozen:
        p.requires_grad_(False)
    optimizer = torch.optim.SGD(affines, lr=cfg.lr, momentum=cfg.momentum)

    batch = make_test_batch(image, cfg.b, rng, cfg.ranges)
    trace: list[float] = []
    try:
        for step in range(cfg.steps):
            if cfg.fresh_batch_per_step and step > 0:
                batch = make_test_batch(image, cfg.b, rng, cfg.ranges)
            before = _affine_snapshot(net)
            out = net(_batch_to_input(batch))
            loss, _ = _objective(out.probs, cfg.objective)
            if not torch.isfinite(loss):
                with torch.no_grad():
                    for name, p in net.named_parameters():
                        if name in before:
                            p.copy_(before[name])
                raise NumericError(f"non-finite adaptation loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            trace.append(float(loss.detach()))

        if cfg.fresh_batch_per_step and cfg.steps > 0:
            batch = make_test_batch(image, cfg.b, rng, cfg.ranges)
        with torch.no_grad():
            out = net(_batch_to_input(batch))
            _, mdiv = _objective(out.probs, cfg.objective)
    finally:
        for p in frozen:
            p.requires_grad_(True)

    end = _affine_snapshot(net)
    gamma_sq = sum(float((end[n] - start[n]).square().sum()) for n in end if n.endswith("gamma"))
    beta_sq = sum(float((end[n] - start[n]).square().sum()) for n in end if n.endswith("beta"))
    result = PreAdaptResult(
        logits=out.logits[0].detach().clone(),
        probs=out.probs[0].detach().clone(),
        f_seg=out.f_seg[0].detach().clone(),
        mdiv=mdiv,
        loss_trace=trace,
        bn_delta={"gamma_l2": gamma_sq**0.5, "beta_l2": beta_sq**0.5},
    )
    return net, result


def restore_affines(net: SegNetwork, snapshot: dict[str, torch.Tensor]) -> None:
    """Copy a snapshot from `_affine_snapshot`-shaped dicts back into the net."""
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name in snapshot:
                p.copy_(snapshot[name])


def snapshot_state(net: SegNetwork) -> dict[str, torch.Tensor]:
    """Full deep copy of parameters and buffers, for stage-level rollback."""
    return copy.deepcopy(net.state_dict())


def restore_state(net: SegNetwork, snapshot: dict[str, torch.Tensor]) -> None:
    net.load_state_dict(snapshot)
