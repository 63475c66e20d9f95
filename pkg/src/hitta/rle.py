"""Lossless run-length codec for label masks (the wire format).

A mask is encoded row-major as ``{"h": H, "w": W, "runs": [label, count,
label, count, ...]}``: scan the (H, W) label map left-to-right, top-to-bottom,
and emit a (label, count) pair for every maximal run of equal labels. Counts
are positive and sum to H*W; labels are small nonnegative ints. Decoding
reverses this exactly, so encode/decode round-trips pixel-identically.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def encode_mask(mask: np.ndarray) -> dict:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValidationError(f"expected non-empty (H, W) label map, got shape {mask.shape}")
    if mask.dtype.kind not in "iu" or (mask.size and (mask.min() < 0 or mask.max() > 255)):
        raise ValidationError("labels must be integers in [0, 255]")
    flat = mask.ravel()
    runs: list[int] = []
    if flat.size:
        boundaries = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [flat.size]])
        for s, e in zip(starts, ends):
            runs.extend((int(flat[s]), int(e - s)))
    return {"h": int(mask.shape[0]), "w": int(mask.shape[1]), "runs": runs}


def decode_mask(obj: dict) -> np.ndarray:
    try:
        h, w, runs = int(obj["h"]), int(obj["w"]), list(obj["runs"])
    except (KeyError, TypeError) as e:
        raise ValidationError("mask object needs 'h', 'w' and 'runs' fields") from e
    if h < 1 or w < 1 or len(runs) % 2:
        raise ValidationError("malformed run-length mask")
    labels = np.asarray(runs[0::2], dtype=np.int64)
    counts = np.asarray(runs[1::2], dtype=np.int64)
    if (counts <= 0).any() or (labels < 0).any() or (labels > 255).any():
        raise ValidationError("runs must have positive counts and byte-range labels")
    if counts.sum() != h * w:
        raise ValidationError(f"runs cover {int(counts.sum())} pixels, expected {h * w}")
    return np.repeat(labels, counts).astype(np.uint8).reshape(h, w)
