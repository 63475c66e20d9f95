"""Simulated annotator: per-rater preference transforms and correction policies.

Masks are (H, W) uint8 label maps: 0 background, 1 disc rim, 2 cup. The label
encoding makes cup-inside-disc structural (disc = label >= 1, cup = label == 2),
so every transform re-derives the two binary structures, adjusts them, clips
the cup into the disc, and reassembles the labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DegenerateMaskError, ValidationError

MAX_PREFERENCE_RADIUS = 6  # px at the 128x128 desk scale


@dataclass(frozen=True)
class PreferenceProfile:
    """Systematic boundary-placement style of one rater.

    Positive radii dilate the structure, negative erode it; smoothing applies
    morphological closing then opening with the given radius.
    """

    rater: str
    od_radius: int = 0
    oc_radius: int = 0
    boundary_smoothing: int = 0

    def __post_init__(self):
        for r in (self.od_radius, self.oc_radius):
            if abs(r) > MAX_PREFERENCE_RADIUS:
                raise ConfigError(f"preference radius {r} exceeds ±{MAX_PREFERENCE_RADIUS}")
        if self.boundary_smoothing < 0 or self.boundary_smoothing > MAX_PREFERENCE_RADIUS:
            raise ConfigError("boundary_smoothing must be in [0, 6]")


@dataclass(frozen=True)
class CorrectionPolicy:
    """How the simulated clinician turns a prediction into the corrected mask."""

    mode: str = "full_replace"  # or "threshold_replace"
    disagreement_threshold: float = 0.0

    def __post_init__(self):
        if self.mode not in ("full_replace", "threshold_replace"):
            raise ConfigError(f"unknown correction mode {self.mode!r}")
        if not 0.0 <= self.disagreement_threshold <= 1.0:
            raise ConfigError("disagreement_threshold must be in [0, 1]")


def disk_footprint(radius: int) -> np.ndarray:
    """Boolean disk of the given radius (center included)."""
    if radius < 0:
        raise ConfigError("radius must be nonnegative")
    r = int(radius)
    yy, xx = np.ogrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def validate_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"expected 2-D label map, got shape {mask.shape}")
    if not np.isin(mask, (0, 1, 2)).all():
        raise ValidationError("label map must contain only {0, 1, 2}")
    return mask.astype(np.uint8)


def assemble_mask(od: np.ndarray, oc: np.ndarray) -> np.ndarray:
    """Compose a label map from binary disc/cup masks, clipping cup into disc."""
    od = od.astype(bool)
    oc = oc.astype(bool) & od
    out = od.astype(np.uint8)
    out[oc] = 2
    return out


def _shift(structure: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return structure.copy()
    fp = disk_footprint(abs(radius))
    if radius > 0:
        return ndimage.binary_dilation(structure, structure=fp)
    return ndimage.binary_erosion(structure, structure=fp)


def _smooth(structure: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return structure
    fp = disk_footprint(radius)
    closed = ndimage.binary_closing(structure, structure=fp)
    return ndimage.binary_opening(closed, structure=fp)


def apply_preference(base_mask: np.ndarray, profile: PreferenceProfile) -> np.ndarray:
    """Deterministically restyle a mask's boundaries per the rater profile."""
    mask = validate_mask(base_mask)
    od = _smooth(_shift(mask >= 1, profile.od_radius), profile.boundary_smoothing)
    oc = _smooth(_shift(mask == 2, profile.oc_radius), profile.boundary_smoothing)
    if not od.any():
        raise DegenerateMaskError(f"profile {profile.rater}: disc annihilated by erosion")
    return assemble_mask(od, oc)


def correct(
    pred_mask: np.ndarray,
    preferred_gt: np.ndarray,
    policy: CorrectionPolicy = CorrectionPolicy(),
) -> np.ndarray:
    """Produce the clinician-corrected mask from a prediction.

    full_replace returns the preferred ground truth unchanged. threshold_replace
    replaces a structure (disc or cup) only when its disagreement fraction
    |pred XOR gt| / |pred OR gt| exceeds the threshold, keeping the predicted
    structure otherwise.
    """
    pred = validate_mask(pred_mask)
    gt = validate_mask(preferred_gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if policy.mode == "full_replace":
        return gt.copy()
    structures = []
    for pred_s, gt_s in (((pred >= 1), (gt >= 1)), ((pred == 2), (gt == 2))):
        union = int(np.logical_or(pred_s, gt_s).sum())
        frac = int(np.logical_xor(pred_s, gt_s).sum()) / max(union, 1)
        structures.append(gt_s if frac > policy.disagreement_threshold else pred_s)
    return assemble_mask(*structures)
