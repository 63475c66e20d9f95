"""Structure-preserving style augmentations and test-batch assembly.

Images are float32 channel-first arrays (3, H, W) with values in [0, 1].
Only appearance is modified; geometry (and therefore any associated mask)
is untouched by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ValidationError

AUG_KINDS = ("gaussian_noise", "gaussian_blur", "brightness", "contrast", "gamma")

# Blur sigma below this is applied as an exact identity copy.
BLUR_IDENTITY_EPS = 1e-6


@dataclass(frozen=True)
class AugmentationSpec:
    """One augmentation draw: a kind plus its scalar parameter."""

    kind: str
    param: float


@dataclass(frozen=True)
class AugmentationRanges:
    """Sampling ranges for each augmentation kind.

    The identity parameter of every kind must be valid: noise sigma 0,
    factor/exponent 1; blur accepts sigma 0 as an exact identity even though
    random draws start at the lower sampling bound.
    """

    noise_sigma: tuple[float, float] = (0.0, 0.1)
    blur_sigma: tuple[float, float] = (0.5, 2.0)
    brightness: tuple[float, float] = (0.7, 1.3)
    contrast: tuple[float, float] = (0.65, 1.5)
    gamma: tuple[float, float] = (0.7, 1.5)

    def __post_init__(self):
        for name, (lo, hi) in self.as_dict().items():
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi < lo:
                raise ConfigError(f"invalid range for {name}: ({lo}, {hi})")

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {
            "gaussian_noise": self.noise_sigma,
            "gaussian_blur": self.blur_sigma,
            "brightness": self.brightness,
            "contrast": self.contrast,
            "gamma": self.gamma,
        }

    def validation_bounds(self, kind: str) -> tuple[float, float]:
        lo, hi = self.as_dict()[kind]
        if kind in ("gaussian_noise", "gaussian_blur"):
            lo = 0.0  # identity (sigma 0) is always admissible
        return lo, hi


@dataclass(frozen=True)
class AugBatch:
    """Stack of B+1 images: item 0 is the unmodified input, 1..B its styled copies."""

    items: np.ndarray  # (B+1, 3, H, W) float32 in [0, 1]
    specs: tuple[AugmentationSpec, ...]


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValidationError(f"expected (3, H, W) image, got shape {img.shape}")
    if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
        raise ValidationError("image values must lie in [0, 1]")
    return img


def apply_style(
    img: np.ndarray,
    spec: AugmentationSpec,
    rng: np.random.Generator | None = None,
    ranges: AugmentationRanges | None = None,
) -> np.ndarray:
    """Apply one style augmentation; output clipped back to [0, 1]."""
    img = _check_image(img)
    ranges = ranges or AugmentationRanges()
    if spec.kind not in AUG_KINDS:
        raise ConfigError(f"unknown augmentation kind {spec.kind!r}")
    lo, hi = ranges.validation_bounds(spec.kind)
    if not (lo <= spec.param <= hi):
        raise ConfigError(f"{spec.kind} parameter {spec.param} outside [{lo}, {hi}]")

    if spec.kind == "gaussian_noise":
        if spec.param == 0.0:
            return img.copy()
        if rng is None:
            raise ConfigError("gaussian_noise requires an rng")
        out = img + rng.normal(0.0, spec.param, size=img.shape).astype(np.float32)
    elif spec.kind == "gaussian_blur":
        if spec.param <= BLUR_IDENTITY_EPS:
            return img.copy()
        radius = math.ceil(3.0 * spec.param)
        out = np.stack(
            [
                ndimage.gaussian_filter(c, sigma=spec.param, mode="reflect", radius=radius)
                for c in img
            ]
        )
    elif spec.kind == "brightness":
        out = img * spec.param
    elif spec.kind == "contrast":
        m = img.mean()
        out = (img - m) * spec.param + m
    else:  # gamma
        out = np.power(img, spec.param)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def draw_spec(rng: np.random.Generator, ranges: AugmentationRanges | None = None) -> AugmentationSpec:
    """Draw a uniformly random kind with a uniformly random parameter."""
    ranges = ranges or AugmentationRanges()
    kind = AUG_KINDS[int(rng.integers(len(AUG_KINDS)))]
    lo, hi = ranges.as_dict()[kind]
    return AugmentationSpec(kind, float(rng.uniform(lo, hi)))


def make_test_batch(
    img: np.ndarray,
    b: int,
    rng: np.random.Generator,
    ranges: AugmentationRanges | None = None,
) -> AugBatch:
    """Stack the test image with ``b`` style-augmented copies (item 0 unmodified)."""
    if b < 1:
        raise ConfigError("need at least one augmented copy (divergence is undefined otherwise)")
    img = _check_image(img)
    specs = []
    items = [img.copy()]
    for _ in range(b):
        spec = draw_spec(rng, ranges)
        specs.append(spec)
        items.append(apply_style(img, spec, rng, ranges))
    return AugBatch(np.stack(items), tuple(specs))
