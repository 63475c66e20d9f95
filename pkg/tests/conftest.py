"""Shared fixtures: a tiny dataset and checkpoint for fast mechanics tests.

The tiny tier (64x64 images, handfuls of samples, an untrained network) is
for exercising machinery, not segmentation quality; quality-bearing runs live
in test_acceptance.py on the desk-scale artifacts.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest
import torch

from hitta.backbone import ArchConfig, init_network, save_checkpoint
from hitta.config import RunConfig
from hitta.datagen import DatasetConfig, SyntheticDataset, generate_dataset
from hitta.feedback_adapt import PostAdaptConfig
from hitta.pre_adapt import PreAdaptConfig

TINY_ARCH = ArchConfig(base_width=8, levels=3)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny") / "data"
    generate_dataset(
        DatasetConfig(
            root=str(root), image_size=64, seed=0,
            source_train=10, source_val=4, target_count=4,
        )
    )
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_root):
    return SyntheticDataset(tiny_root)


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "checkpoint.zip"
    net = init_network(TINY_ARCH, seed=0)
    save_checkpoint(net, path, extra={"note": "untrained tiny fixture"})
    return path


def tiny_run(tiny_root, tiny_checkpoint, out_dir, **overrides) -> RunConfig:
    base = dict(
        dataset_root=str(tiny_root),
        checkpoint=str(tiny_checkpoint),
        out_dir=str(out_dir),
        seed=0,
        limit=2,
        pre=PreAdaptConfig(b=2, steps=2),
        post=PostAdaptConfig(steps=2, b=2),
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture()
def make_tiny_run(tiny_root, tiny_checkpoint, tmp_path):
    def _make(**overrides) -> RunConfig:
        return tiny_run(tiny_root, tiny_checkpoint, tmp_path / "out", **overrides)

    return _make


@pytest.fixture(autouse=True)
def _fixed_torch_state():
    torch.manual_seed(0)
    yield


def random_simplex(shape_nkhw: tuple[int, ...], rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Random per-pixel probability vectors with the class axis at position -3."""
    raw = rng.gamma(1.0, 1.0, size=shape_nkhw).astype(dtype) + 1e-9
    return raw / raw.sum(axis=-3, keepdims=True)


def replace(cfg, **kw):
    return dataclasses.replace(cfg, **kw)
