"""Synthetic multi-domain fundus-like dataset: generation, disk I/O, training.

Every sample is an elliptical disc with a nested cup on a textured background
with vessel-like curves; domains differ only in appearance (bias, contrast,
gamma, noise, tint, texture), never in geometry. Each domain is annotated by
rater R1 plus the domain's own rater via the preference transforms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from . import objectives
from .backbone import SegNetwork, save_checkpoint
from .errors import ConfigError, DegenerateMaskError, ValidationError
from .oracle import PreferenceProfile, apply_preference, assemble_mask

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class DomainStyleSpec:
    """Appearance-only description of one acquisition domain."""

    name: str
    intensity_bias: float = 0.0
    contrast: float = 1.0
    gamma: float = 1.0
    noise_sigma: float = 0.01
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)
    texture_scale: float = 1.0
    vignette: float = 0.0  # fixed illumination falloff shared by every sample of the domain

    def __post_init__(self):
        vals = [self.intensity_bias, self.contrast, self.gamma, self.noise_sigma,
                *self.tint, self.texture_scale, self.vignette]
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError(f"non-finite style parameter in domain {self.name!r}")
        if self.gamma <= 0 or self.contrast < 0 or self.noise_sigma < 0:
            raise ConfigError(f"invalid style parameter in domain {self.name!r}")
        if not (0.0 <= self.vignette < 1.0):
            raise ConfigError(f"vignette must lie in [0, 1) in domain {self.name!r}")


@dataclass
class Sample:
    """One generated case: image in [0, 1] plus base and per-rater masks."""

    sample_id: str
    domain: str
    image: np.ndarray                    # (3, H, W) float32 in [0, 1]
    base_mask: np.ndarray                # (H, W) uint8 labels {0, 1, 2}
    rater_masks: dict[str, np.ndarray]   # rater -> (H, W) uint8


# Rater deviations are +/-2 px on the disc and +/-1 px on the cup: systematic
# enough to be learnable over a stream, but small next to the style shift, so
# that following a domain's rater does not wreck agreement with the base
# annotation (a +/-2 px cup bias alone caps DSC vs R1 near 0.85 at this
# scale; the cup is the smaller, costlier structure).
DEFAULT_PROFILES = {
    "R1": PreferenceProfile("R1", 0, 0, 0),
    "R2": PreferenceProfile("R2", 2, 1, 0),
    "R3": PreferenceProfile("R3", -2, -1, 0),
    "R4": PreferenceProfile("R4", 2, -1, 0),
    "R5": PreferenceProfile("R5", -2, 1, 0),
}

DEFAULT_DOMAINS = (
    DomainStyleSpec("source", 0.0, 1.0, 1.0, 0.01, (1.0, 1.0, 1.0), 1.0),
    DomainStyleSpec("targetA", 0.10, 1.25, 0.45, 0.11, (1.13, 1.00, 0.82), 2.2),
    DomainStyleSpec("targetB", -0.08, 0.65, 2.60, 0.13, (0.82, 0.93, 1.28), 0.45),
    DomainStyleSpec("targetC", 0.05, 0.65, 1.50, 0.13, (1.08, 0.90, 1.00), 2.4),
    DomainStyleSpec("targetD", -0.05, 1.60, 0.48, 0.12, (0.88, 1.14, 0.80), 1.8),
)

DEFAULT_RATER_ASSIGNMENT = {
    "source": "R1",
    "targetA": "R2",
    "targetB": "R3",
    "targetC": "R4",
    "targetD": "R5",
}


@dataclass
class DatasetConfig:
    root: str = "data/synthetic"
    image_size: int = 128
    seed: int = 0
    source_train: int = 120
    source_val: int = 30
    target_count: int = 40
    target_train: int = 0  # only used for intra-domain upper-bound runs
    domains: tuple[DomainStyleSpec, ...] = DEFAULT_DOMAINS
    rater_assignment: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_RATER_ASSIGNMENT))
    profiles: dict[str, PreferenceProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    overwrite: bool = False

    def __post_init__(self):
        if self.image_size % 8:
            raise ConfigError("image_size must be divisible by the network downsampling factor (8)")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate domain names")
        for name in names:
            if name not in self.rater_assignment:
                raise ConfigError(f"no rater assigned to domain {name!r}")
            if self.rater_assignment[name] not in self.profiles:
                raise ConfigError(f"unknown rater {self.rater_assignment[name]!r}")

    @property
    def source_domain(self) -> str:
        return self.domains[0].name

    @property
    def target_domains(self) -> list[str]:
        return [d.name for d in self.domains[1:]]


# -- rendering -----------------------------------------------------------------


def _elliptical_radius(size: int, cx, cy, a, b, theta) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / a
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / b
    return np.sqrt(u * u + v * v)


def _soft_edge(rho: np.ndarray, scale_px: float, edge_px: float) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(1.0 - rho) * scale_px / edge_px))


def _draw_vessels(size: int, cx: float, cy: float, rng: np.random.Generator) -> np.ndarray:
    """Alpha map of dark vessel-like curves radiating from the disc center."""
    canvas = np.zeros((size, size), dtype=bool)
    count = int(rng.integers(3, 7))
    for _ in range(count):
        angle = rng.uniform(0, 2 * np.pi)
        x, y = cx + rng.uniform(-3, 3), cy + rng.uniform(-3, 3)
        width = rng.uniform(1.0, 2.0)
        steps = int(size * 0.9)
        for _ in range(steps):
            xi, yi = int(round(x)), int(round(y))
            if 0 <= xi < size and 0 <= yi < size:
                canvas[yi, xi] = True
            angle += rng.normal(0.0, 0.12)
            x += 1.4 * np.cos(angle)
            y += 1.4 * np.sin(angle)
            if not (-4 < x < size + 4 and -4 < y < size + 4):
                break
        canvas = ndimage.binary_dilation(canvas, iterations=max(1, int(round(width / 2))))
    return ndimage.gaussian_filter(canvas.astype(np.float64), 0.7)


def _render_base(size: int, geom_rng: np.random.Generator, style_rng: np.random.Generator,
                 texture_scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Render the style-free image and its base mask."""
    s = size / 128.0
    cx = size / 2 + geom_rng.uniform(-8, 8) * s
    cy = size / 2 + geom_rng.uniform(-8, 8) * s
    a_od = geom_rng.uniform(16, 26) * s
    b_od = a_od * geom_rng.uniform(0.78, 1.0)
    theta = geom_rng.uniform(0, np.pi)
    rho_od = _elliptical_radius(size, cx, cy, a_od, b_od, theta)

    ratio = geom_rng.uniform(0.45, 0.68)
    max_off = (1.0 - ratio) * min(a_od, b_od) * 0.6
    off_r = geom_rng.uniform(0, max_off)
    off_phi = geom_rng.uniform(0, 2 * np.pi)
    rho_oc = _elliptical_radius(
        size, cx + off_r * np.cos(off_phi), cy + off_r * np.sin(off_phi),
        a_od * ratio, b_od * ratio, theta,
    )
    mask = assemble_mask(rho_od <= 1.0, rho_oc <= 1.0)

    bg = np.array([0.50, 0.29, 0.15]) + geom_rng.uniform(-0.04, 0.04, size=3)
    disc_color = np.array([0.84, 0.62, 0.34]) + geom_rng.uniform(-0.05, 0.05, size=3)
    cup_color = disc_color + np.array([0.10, 0.12, 0.10]) + geom_rng.uniform(-0.03, 0.03, size=3)

    texture = ndimage.gaussian_filter(style_rng.normal(size=(size, size)), 5.0 * s)
    std = texture.std()
    if std > 0:
        texture /= std

    edge = geom_rng.uniform(1.2, 2.4) * s
    alpha_od = _soft_edge(rho_od, a_od, edge)
    alpha_oc = _soft_edge(rho_oc, a_od * ratio, edge)
    img = np.empty((3, size, size), dtype=np.float64)
    for c in range(3):
        base = bg[c] + 0.035 * texture_scale * texture
        layer = base * (1 - alpha_od) + disc_color[c] * alpha_od
        img[c] = layer * (1 - alpha_oc) + cup_color[c] * alpha_oc

    vessels = _draw_vessels(size, cx, cy, geom_rng)
    attenuation = np.array([0.35, 0.55, 0.55])
    for c in range(3):
        img[c] *= 1.0 - attenuation[c] * np.clip(vessels, 0, 1)
    return np.clip(img, 0, 1), mask


@lru_cache(maxsize=16)
def _vignette_field(size: int, name: str, strength: float) -> np.ndarray:
    """The domain's fixed multiplicative shading, in [1 - strength, 1].

    Every sample of a domain is darkened by the same field — an acquisition
    artifact of the device, not of the case — so a stream method can pay off
    for internalizing it, which per-sample random styling never rewards. The
    geometry derives from the domain name alone: an off-center radial
    falloff plus a one-sided linear shade, both crossing anatomy territory
    for typical disc placements.
    """
    rng = np.random.default_rng(zlib.crc32(f"vignette:{name}".encode()))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = size * rng.uniform(0.25, 0.75, size=2)
    r0 = size * rng.uniform(0.28, 0.42)
    r1 = size * rng.uniform(0.75, 0.95)
    rr = np.hypot(xx - cx, yy - cy)
    radial = np.clip((rr - r0) / (r1 - r0), 0.0, 1.0) ** 2
    phi = rng.uniform(0, 2 * np.pi)
    u = ((xx - size / 2) * np.cos(phi) + (yy - size / 2) * np.sin(phi)) / size
    shade = np.clip(u + 0.5, 0.0, 1.0)
    field = strength * np.clip(0.7 * radial + 0.3 * shade, 0.0, 1.0)
    return 1.0 - field


def _apply_domain_style(img: np.ndarray, spec: DomainStyleSpec, style_rng: np.random.Generator) -> np.ndarray:
    out = img.astype(np.float64)
    m = out.mean()
    out = (out - m) * spec.contrast + m
    out = np.power(np.clip(out, 0, 1), spec.gamma)
    out = out * np.asarray(spec.tint, dtype=np.float64).reshape(3, 1, 1)
    out = out + spec.intensity_bias
    if spec.vignette > 0:
        out = out * _vignette_field(out.shape[-1], spec.name, spec.vignette)
    if spec.noise_sigma > 0:
        out = out + style_rng.normal(0.0, spec.noise_sigma, size=out.shape)
    return np.clip(out, 0, 1).astype(np.float32)


def generate_sample(
    domain: DomainStyleSpec,
    geom_rng: np.random.Generator,
    style_rng: np.random.Generator,
    *,
    sample_id: str = "sample",
    image_size: int = 128,
    profiles: dict[str, PreferenceProfile] | None = None,
    raters: tuple[str, ...] = ("R1",),
    max_retries: int = 20,
) -> Sample:
    """Render one sample; regenerates geometry if a rater transform degenerates."""
    profiles = profiles or DEFAULT_PROFILES
    for _ in range(max_retries):
        base_img, base_mask = _render_base(image_size, geom_rng, style_rng, domain.texture_scale)
        try:
            rater_masks = {r: apply_preference(base_mask, profiles[r]) for r in raters}
            if any(not (m == 2).any() for m in rater_masks.values()):
                raise DegenerateMaskError("cup annihilated")
        except DegenerateMaskError:
            continue
        image = _apply_domain_style(base_img, domain, style_rng)
        return Sample(sample_id, domain.name, image, base_mask, rater_masks)
    raise DegenerateMaskError(f"could not generate a valid sample for domain {domain.name!r}")


# -- dataset on disk -----------------------------------------------------------


def _sample_seeds(cfg_seed: int, domain_idx: int, sample_idx: int) -> tuple[int, int]:
    ss = np.random.SeedSequence([cfg_seed, domain_idx, sample_idx])
    geom, style = ss.spawn(2)
    return int(geom.generate_state(1)[0]), int(style.generate_state(1)[0])


def save_image(path: Path, img01: np.ndarray) -> None:
    arr = np.round(np.clip(img01, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def save_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def load_image(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def load_mask(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.uint8)
    if not np.isin(arr, (0, 1, 2)).all():
        raise ValidationError(f"mask {path} contains labels outside {{0, 1, 2}}")
    return arr


def generate_dataset(cfg: DatasetConfig) -> Path:
    """Generate and persist the full multi-domain dataset; returns the root path."""
    root = Path(cfg.root)
    if root.exists() and any(root.iterdir()):
        if not cfg.overwrite:
            raise ConfigError(f"output dir {root} exists; pass overwrite to regenerate")
    records = []
    for d_idx, domain in enumerate(cfg.domains):
        rater = cfg.rater_assignment[domain.name]
        raters = ("R1", rater) if rater != "R1" else ("R1",)
        if domain.name == cfg.source_domain:
            splits = [("train", cfg.source_train), ("val", cfg.source_val)]
        else:
            splits = ([("train", cfg.target_train)] if cfg.target_train else []) + [("test", cfg.target_count)]
        img_dir = root / domain.name / "images"
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dirs = {r: root / domain.name / f"masks_{r}" for r in raters}
        for md in mask_dirs.values():
            md.mkdir(parents=True, exist_ok=True)
        idx = 0
        for split, count in splits:
            for _ in range(count):
                geom_seed, style_seed = _sample_seeds(cfg.seed, d_idx, idx)
                sid = f"{domain.name}_{idx:04d}"
                sample = generate_sample(
                    domain,
                    np.random.default_rng(geom_seed),
                    np.random.default_rng(style_seed),
                    sample_id=sid,
                    image_size=cfg.image_size,
                    profiles=cfg.profiles,
                    raters=raters,
                )
                save_image(img_dir / f"{sid}.png", sample.image)
                for r in raters:
                    save_mask(mask_dirs[r] / f"{sid}.png", sample.rater_masks[r])
                records.append(
                    {
                        "id": sid,
                        "domain": domain.name,
                        "split": split,
                        "geom_seed": geom_seed,
                        "style_seed": style_seed,
                        "raters": list(raters),
                    }
                )
                idx += 1
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": cfg.seed,
        "image_size": cfg.image_size,
        "domains": [asdict(d) for d in cfg.domains],
        "rater_assignment": cfg.rater_assignment,
        "profiles": {k: asdict(v) for k, v in cfg.profiles.items()},
        "counts": {
            "source_train": cfg.source_train,
            "source_val": cfg.source_val,
            "target_count": cfg.target_count,
            "target_train": cfg.target_train,
        },
        "samples": records,
    }
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


class SyntheticDataset:
    """Loader over the on-disk layout <root>/<domain>/{images,masks_<rater>}/."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.exists():
            raise ConfigError(f"no {MANIFEST_NAME} under {self.root}")
        self.manifest = json.loads(manifest_path.read_text())
        self.rater_assignment: dict[str, str] = self.manifest["rater_assignment"]
        self.profiles = {
            k: PreferenceProfile(**v) for k, v in self.manifest["profiles"].items()
        }
        self.domains = [DomainStyleSpec(**d) for d in self.manifest["domains"]]

    @property
    def source_domain(self) -> str:
        return self.domains[0].name

    @property
    def target_domains(self) -> list[str]:
        return [d.name for d in self.domains[1:]]

    def records(self, domain: str, split: str | None = None) -> list[dict]:
        if domain not in [d.name for d in self.domains]:
            raise ConfigError(f"unknown domain {domain!r}")
        if split is not None and split not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {split!r}")
        return [
            r
            for r in self.manifest["samples"]
            if r["domain"] == domain and (split is None or r["split"] == split)
        ]

    def load(self, record: dict) -> Sample:
        domain, sid = record["domain"], record["id"]
        image = load_image(self.root / domain / "images" / f"{sid}.png")
        masks = {
            r: load_mask(self.root / domain / f"masks_{r}" / f"{sid}.png")
            for r in record["raters"]
        }
        base = masks.get("R1", next(iter(masks.values())))
        return Sample(sid, domain, image, base, masks)


# -- normalization --------------------------------------------------------------


def normalize(img: np.ndarray) -> np.ndarray:
    """Per-image, per-channel z-score; (near-)zero-variance channels map to zeros."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3:
        raise ValidationError(f"expected (C, H, W) image, got {img.shape}")
    mean = img.mean(axis=(1, 2), keepdims=True, dtype=np.float64)
    std = img.std(axis=(1, 2), keepdims=True, dtype=np.float64)
    # float32 accumulation can leave a constant channel with a tiny nonzero
    # std, which would blow residual rounding noise up to +-1
    safe = std > 1e-7
    out = np.where(safe, (img - mean) / np.where(safe, std, 1.0), 0.0)
    return out.astype(np.float32)


# -- source training -------------------------------------------------------------


@dataclass
class SourceTrainConfig:
    epochs: int = 40
    lr0: float = 0.01
    momentum: float = 0.99
    poly_power: float = 0.9
    batch_size: int = 8
    val_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.val_every) < 1 or self.lr0 <= 0:
            raise ConfigError("training config values must be positive")


def poly_lr(lr0: float, epoch: int, total_epochs: int, power: float = 0.9) -> float:
    return lr0 * (1.0 - epoch / total_epochs) ** power


def _eval_dsc(net: SegNetwork, images: torch.Tensor, masks: list[np.ndarray], chunk: int = 8) -> float:
    net.set_bn_mode("eval")
    scores = []
    with torch.no_grad():
        for i in range(0, images.shape[0], chunk):
            out = net(images[i : i + chunk])
            pred = out.probs.argmax(dim=1).numpy().astype(np.uint8)
            for j in range(pred.shape[0]):
                scores.append(objectives.dsc(pred[j], masks[i + j]).mean)
    return float(np.mean(scores))


def train_source(
    net: SegNetwork,
    dataset: SyntheticDataset,
    cfg: SourceTrainConfig,
    rng: np.random.Generator | None = None,
    checkpoint_path: str | Path | None = None,
) -> tuple[SegNetwork, dict]:
    """Train on the source train split vs R1, tracking best val DSC.

    SGD with momentum and polynomial lr decay; BN runs in batch mode with
    running-statistic updates during training and in eval mode for validation.
    Aborts if val DSC is still below 0.5 after half the epochs.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    src = dataset.source_domain
    train_recs = dataset.records(src, "train")
    val_recs = dataset.records(src, "val")
    if not train_recs or not val_recs:
        raise ConfigError("source domain needs train and val splits")

    def stack(recs):
        imgs, masks = [], []
        for r in recs:
            s = dataset.load(r)
            imgs.append(normalize(s.image))
            masks.append(s.rater_masks["R1"])
        return torch.from_numpy(np.stack(imgs)), masks

    train_x, train_masks = stack(train_recs)
    val_x, val_masks = stack(val_recs)
    k = net.arch.num_classes
    train_y = torch.stack([objectives.one_hot_mask(m, k) for m in train_masks])

    opt = torch.optim.SGD(net.parameters(), lr=cfg.lr0, momentum=cfg.momentum)
    n = train_x.shape[0]
    history = {"epoch_loss": [], "val_dsc": [], "lr": []}
    best = {"dsc": -1.0, "epoch": -1, "state": None}
    for epoch in range(cfg.epochs):
        lr = poly_lr(cfg.lr0, epoch, cfg.epochs, cfg.poly_power)
        for group in opt.param_groups:
            group["lr"] = lr
        net.set_bn_mode("batch", update_running=True)
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[i : i + cfg.batch_size].copy())
            if idx.shape[0] < 2:
                continue  # single-item batches have no batch statistics
            out = net(train_x[idx])
            loss = (
                objectives.soft_dice_loss(out.probs, train_y[idx]).value
                + objectives.cross_entropy_loss(out.probs, train_y[idx]).value
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history["epoch_loss"].append(float(np.mean(losses)))
        history["lr"].append(lr)
        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            val_dsc = _eval_dsc(net, val_x, val_masks)
            history["val_dsc"].append({"epoch": epoch, "dsc": val_dsc})
            if val_dsc > best["dsc"]:
                best = {
                    "dsc": val_dsc,
                    "epoch": epoch,
                    "state": {kk: v.detach().clone() for kk, v in net.state_dict().items()},
                }
            if epoch + 1 >= cfg.epochs // 2 and best["dsc"] < 0.5:
                raise ValidationError(
                    f"training diverged: best val DSC {best['dsc']:.3f} after {epoch + 1} epochs"
                )
    if best["state"] is not None:
        net.load_state_dict(best["state"])
    report = {
        "best_val_dsc": best["dsc"],
        "best_epoch": best["epoch"],
        "history": history,
        "train_size": n,
        "val_size": val_x.shape[0],
    }
    if checkpoint_path is not None:
        save_checkpoint(net, checkpoint_path, extra={"best_val_dsc": best["dsc"], "seed": cfg.seed})
    return net, report
