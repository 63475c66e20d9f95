"""Compact encoder-decoder segmentation network with controllable BatchNorm.

The BN layers are the adaptation surface: each layer exposes its running
statistics (mu, var), learnable affine parameters (gamma, beta), and an
explicit mode switch between stored-statistics ("eval") and current-batch
("batch") normalization, with running-statistic updates decoupled from the
mode so test-time use never overwrites the source statistics.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError, ShapeError, StatisticsError

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int = 3
    num_classes: int = 3
    base_width: int = 16
    levels: int = 4

    def __post_init__(self):
        if self.levels < 2 or self.base_width < 1 or self.num_classes < 2 or self.in_channels < 1:
            raise ConfigError(f"invalid architecture config: {self}")

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.levels - 1)


@dataclass
class ForwardOutput:
    """Network outputs: raw logits, softmax probabilities, and the pre-head feature map."""

    logits: torch.Tensor  # (B, K, H, W)
    probs: torch.Tensor   # (B, K, H, W)
    f_seg: torch.Tensor   # (B, C, H, W)


def bn_forward(
    z: torch.Tensor,
    state: "AdaptiveBatchNorm",
    mode: str,
    update_running: bool | None = None,
    stats_mix: float | None = None,
) -> torch.Tensor:
    """Normalize ``z`` with stored ("eval") or current-batch ("batch") statistics.

    In batch mode the per-channel statistics are the biased mean/variance over
    (B, H, W); ``stats_mix`` (alpha) blends them with the stored statistics
    (alpha = 1 is pure batch). Running statistics are updated by the momentum
    rule only when ``update_running`` is true (default: true in batch mode).
    """
    if z.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W) input, got shape {tuple(z.shape)}")
    c = state.gamma.shape[0]
    if z.shape[1] != c:
        raise ShapeError(f"channel mismatch: input has {z.shape[1]}, state has {c}")
    # one fused reduction: any NaN or Inf anywhere leaves the sum non-finite
    if not torch.isfinite(z.sum()):
        raise NumericError("non-finite values in BN input")
    if mode not in ("eval", "batch"):
        raise ConfigError(f"unknown bn mode {mode!r}")

    if mode == "eval":
        return F.batch_norm(
            z, state.mu, state.var, state.gamma, state.beta,
            training=False, momentum=0.0, eps=state.eps,
        )

    n = z.shape[0] * z.shape[2] * z.shape[3]
    if n <= 1:
        raise StatisticsError("batch statistics need more than one value per channel")
    alpha = state.stats_mix if stats_mix is None else stats_mix
    if update_running is None:
        update_running = True
    if alpha >= 1.0:
        # pure-batch statistics ride the fused kernel; gradients flow through
        # the batch mean/variance, and torch's running update (momentum EMA
        # with unbiased variance) is the same rule as the blended branch below
        running = (state.mu, state.var) if update_running else (None, None)
        return F.batch_norm(
            z, *running, state.gamma, state.beta,
            training=True, momentum=state.momentum, eps=state.eps,
        )

    mean = z.mean(dim=(0, 2, 3))
    var = z.var(dim=(0, 2, 3), unbiased=False)
    mean = alpha * mean + (1.0 - alpha) * state.mu
    var = alpha * var + (1.0 - alpha) * state.var
    if update_running:
        with torch.no_grad():
            m = state.momentum
            unbiased = var.detach() * n / max(n - 1, 1)
            state.mu.mul_(1.0 - m).add_(mean.detach(), alpha=m)
            state.var.mul_(1.0 - m).add_(unbiased, alpha=m)
    shape = (1, c, 1, 1)
    z_hat = (z - mean.view(shape)) / torch.sqrt(var.view(shape) + state.eps)
    return state.gamma.view(shape) * z_hat + state.beta.view(shape)


class AdaptiveBatchNorm(nn.Module):
    """BN layer holding (mu, var, gamma, beta, eps, momentum) with explicit mode control."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        if eps <= 0 or not (0 < momentum <= 1):
            raise ConfigError("eps must be positive and momentum in (0, 1]")
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("mu", torch.zeros(channels))
        self.register_buffer("var", torch.ones(channels))
        self.eps = eps
        self.momentum = momentum
        self.mode = "eval"
        self.update_running = False
        self.stats_mix = 1.0

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return bn_forward(z, self, self.mode, self.update_running, self.stats_mix)

    def extra_repr(self) -> str:
        return f"channels={self.gamma.shape[0]}, mode={self.mode}"


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by BN and ReLU."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.bn1 = AdaptiveBatchNorm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.bn2 = AdaptiveBatchNorm(c_out)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class UpBlock(nn.Module):
    """2x transposed-convolution upsampling followed by BN and ReLU."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(c_in, c_out, 2, stride=2)
        self.bn = AdaptiveBatchNorm(c_out)

    def forward(self, x):
        return F.relu(self.bn(self.up(x)))


class SegNetwork(nn.Module):
    """U-shaped segmentation network; f_seg is tapped right before the 1x1 classifier."""

    def __init__(self, arch: ArchConfig = ArchConfig()):
        super().__init__()
        self.arch = arch
        widths = [arch.base_width * 2**i for i in range(arch.levels)]
        self.encoders = nn.ModuleList()
        c_in = arch.in_channels
        for w in widths:
            self.encoders.append(ConvBlock(c_in, w))
            c_in = w
        self.ups = nn.ModuleList(
            UpBlock(widths[i], widths[i - 1]) for i in range(arch.levels - 1, 0, -1)
        )
        self.decoders = nn.ModuleList(
            ConvBlock(2 * widths[i - 1], widths[i - 1]) for i in range(arch.levels - 1, 0, -1)
        )
        self.head = nn.Conv2d(widths[0], arch.num_classes, 1)

    @property
    def feature_channels(self) -> int:
        return self.arch.base_width

    def forward(self, batch: torch.Tensor) -> ForwardOutput:
        if batch.dim() != 4 or batch.shape[1] != self.arch.in_channels:
            raise ShapeError(f"expected (B, {self.arch.in_channels}, H, W), got {tuple(batch.shape)}")
        factor = self.arch.downsample_factor
        if batch.shape[2] % factor or batch.shape[3] % factor:
            raise ShapeError(f"spatial size {tuple(batch.shape[2:])} not divisible by {factor}")
        skips = []
        x = batch
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            if i < len(self.encoders) - 1:
                skips.append(x)
                x = F.max_pool2d(x, 2)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([x, skip], dim=1))
        logits = self.head(x)
        return ForwardOutput(logits=logits, probs=torch.softmax(logits, dim=1), f_seg=x)

    # -- BN control ---------------------------------------------------------

    def bn_layers(self) -> Iterator[tuple[str, AdaptiveBatchNorm]]:
        for name, module in self.named_modules():
            if isinstance(module, AdaptiveBatchNorm):
                yield name, module

    def set_bn_mode(self, mode: str, update_running: bool = False, stats_mix: float = 1.0) -> None:
        if mode not in ("eval", "batch"):
            raise ConfigError(f"unknown bn mode {mode!r}")
        for _, layer in self.bn_layers():
            layer.mode = mode
            layer.update_running = update_running
            layer.stats_mix = stats_mix

    @property
    def bn_mode(self) -> str:
        modes = {layer.mode for _, layer in self.bn_layers()}
        return modes.pop() if len(modes) == 1 else "mixed"

    def bn_affine_parameters(self) -> list[nn.Parameter]:
        params = []
        for _, layer in self.bn_layers():
            params.extend([layer.gamma, layer.beta])
        return params


def _he_fill(weight: torch.Tensor, gen: torch.Generator, transposed: bool = False) -> None:
    """He-normal fill (std = sqrt(2 / fan_in)) from a seeded generator; call under no_grad."""
    if transposed:
        fan_in = weight.shape[0] * weight.shape[2] * weight.shape[3]
    else:
        fan_in = weight.shape[1] * (weight.shape[2] * weight.shape[3] if weight.dim() == 4 else 1)
    weight.copy_(torch.randn(weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)


def init_network(arch: ArchConfig = ArchConfig(), seed: int = 0) -> SegNetwork:
    """Build a SegNetwork with seed-deterministic He-normal conv initialization."""
    net = SegNetwork(arch)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name.endswith(".gamma") or name.endswith(".beta"):
                continue  # BN affine stays at identity init
            if param.dim() >= 2:
                _he_fill(param, gen, transposed=isinstance(_module_of(net, name), nn.ConvTranspose2d))
            else:
                param.zero_()
    return net


def _module_of(net: nn.Module, param_name: str) -> nn.Module:
    path = param_name.split(".")[:-1]
    mod = net
    for part in path:
        mod = getattr(mod, part) if not part.isdigit() else mod[int(part)]
    return mod


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


# -- fingerprints -------------------------------------------------------------


def tensor_fingerprint(named: Iterator[tuple[str, torch.Tensor]]) -> str:
    """Order-independent sha256 over (name, dtype, bytes) of the given tensors."""
    h = hashlib.sha256()
    for name, t in sorted(named, key=lambda kv: kv[0]):
        h.update(name.encode())
        arr = t.detach().cpu().numpy()
        h.update(str(arr.dtype).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def param_fingerprint(net: nn.Module, which: str = "all") -> str:
    """Hash of a named parameter subset: all | bn_affine | non_bn_affine | buffers."""
    is_affine = lambda n: n.endswith(".gamma") or n.endswith(".beta")
    if which == "all":
        items = list(net.named_parameters()) + list(net.named_buffers())
    elif which == "bn_affine":
        items = [(n, p) for n, p in net.named_parameters() if is_affine(n)]
    elif which == "non_bn_affine":
        items = [(n, p) for n, p in net.named_parameters() if not is_affine(n)]
    elif which == "buffers":
        items = list(net.named_buffers())
    else:
        raise ConfigError(f"unknown fingerprint subset {which!r}")
    return tensor_fingerprint(iter(items))


# -- checkpoint I/O ------------------------------------------------------------
#
# A checkpoint is a zip archive with one .npy entry per parameter/buffer, keyed
# by the module path ("param/<name>", "buffer/<name>"), plus a "meta.json"
# entry carrying the format version and the architecture config.


def save_checkpoint(net: SegNetwork, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": asdict(net.arch),
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        entries = [("param/" + n, p) for n, p in net.named_parameters()]
        entries += [("buffer/" + n, b) for n, b in net.named_buffers()]
        for key, tensor in entries:
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            zf.writestr(zipfile.ZipInfo(key + ".npy"), buf.getvalue())
        zf.writestr(zipfile.ZipInfo("meta.json"), json.dumps(meta, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[SegNetwork, dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        archive = zipfile.ZipFile(path)
    except zipfile.BadZipFile as e:
        raise ConfigError(f"not a valid checkpoint archive: {path}") from e
    with archive as zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError as e:
            raise ConfigError(f"not a valid checkpoint (missing meta.json): {path}") from e
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        net = SegNetwork(ArchConfig(**meta["arch"]))
        tensors: dict[str, torch.Tensor] = dict(net.named_parameters())
        tensors.update(dict(net.named_buffers()))
        seen = set()
        for entry in zf.namelist():
            if entry == "meta.json":
                continue
            kind, name = entry[: entry.index("/")], entry[entry.index("/") + 1 : -len(".npy")]
            if name not in tensors:
                raise ConfigError(f"checkpoint entry {name!r} not present in architecture")
            arr = np.load(io.BytesIO(zf.read(entry)))
            with torch.no_grad():
                tensors[name].copy_(torch.from_numpy(arr))
            seen.add(name)
        missing = set(tensors) - seen
        if missing:
            raise ConfigError(f"checkpoint missing tensors: {sorted(missing)[:4]}...")
    return net, meta
