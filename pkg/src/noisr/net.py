"""Custom WDSR: wide-activation residual network with weight normalization.

Graph: normalize -> head conv -> residual blocks -> tail conv (+ head skip)
-> transposed conv, summed with a shallow skip branch (conv -> transposed
conv) on the normalized input -> denormalize.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .image import NormalizationStats, as_grid

# widths reverse-engineered so parameter counts land near 889K (2X) and 253K (4X)
DEFAULT_WIDTH = {2: 39, 4: 12}
DEFAULT_KERNEL = {2: 3, 4: 5}
PADDING_MODES = ("replicate", "circular")


class ConfigMismatchError(ValueError):
    pass


class CheckpointError(Exception):
    """Corrupt, truncated or incompatible checkpoint file."""


@dataclass(frozen=True)
class NetworkConfig:
    factor: int = 2
    width: int | None = None
    kernel_size: int | None = None
    num_blocks: int = 8
    expansion: int = 4
    skip_width: int | None = None
    seed: int = 0
    padding: str = "replicate"
    # initial g of each block's output conv, relative to ||v||
    res_init_scale: float = 0.1

    def __post_init__(self):
        if self.factor not in DEFAULT_WIDTH:
            raise ValueError(f"factor must be 2 or 4, got {self.factor}")
        if self.width is None:
            object.__setattr__(self, "width", DEFAULT_WIDTH[self.factor])
        if self.kernel_size is None:
            object.__setattr__(self, "kernel_size", DEFAULT_KERNEL[self.factor])
        if self.skip_width is None:
            object.__setattr__(self, "skip_width", self.width)
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if min(self.width, self.skip_width, self.num_blocks, self.expansion) < 1:
            raise ValueError("width, skip_width, num_blocks and expansion must be >= 1")
        if self.res_init_scale < 0:
            raise ValueError("res_init_scale must be >= 0")
        if self.padding not in PADDING_MODES:
            raise ValueError(f"padding must be one of {PADDING_MODES}")


def weight_norm_effective(v, g, out_axis: int = 0):
    """``g * v / ||v||`` with the norm taken per output channel.

    Accepts torch tensors or numpy arrays. Raises on a zero-norm direction.
    """
    xp_torch = isinstance(v, torch.Tensor)
    v = v if xp_torch else np.asarray(v, dtype=np.float64)
    axes = tuple(a for a in range(v.ndim) if a != out_axis)
    norm = (v * v).sum(dim=axes, keepdim=True).sqrt() if xp_torch else np.sqrt((v * v).sum(axis=axes, keepdims=True))
    if bool((norm == 0).any()):
        raise ValueError("weight normalization needs a non-zero direction per output channel")
    shape = [1] * v.ndim
    shape[out_axis] = -1
    return v * (g.reshape(shape) / norm)


def _channel_norm(v: torch.Tensor, out_axis: int) -> torch.Tensor:
    axes = tuple(a for a in range(v.ndim) if a != out_axis)
    return (v * v).sum(dim=axes).sqrt()


def _effective(v, g, out_axis):
    # g == 0 gives a zero kernel even when v is degenerate
    norm = _channel_norm(v, out_axis)
    scale = torch.where(g == 0, torch.zeros_like(g), g / torch.where(norm == 0, torch.ones_like(norm), norm))
    shape = [1] * v.ndim
    shape[out_axis] = -1
    return v * scale.reshape(shape)


class WNConv2d(nn.Module):
    """Same-size convolution with weight normalization and explicit border padding."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int, padding: str = "replicate"):
        super().__init__()
        self.v = nn.Parameter(torch.empty(c_out, c_in, kernel_size, kernel_size))
        self.g = nn.Parameter(torch.empty(c_out))
        self.b = nn.Parameter(torch.zeros(c_out))
        self.pad = kernel_size // 2
        self.padding = padding
        self.fan_in = c_in * kernel_size * kernel_size

    def weight(self) -> torch.Tensor:
        return _effective(self.v, self.g, 0)

    def forward(self, x):
        if self.pad:
            x = F.pad(x, (self.pad,) * 4, mode=self.padding)
        return F.conv2d(x, self.weight(), self.b)


class WNConvTranspose2d(nn.Module):
    """Stride-k transposed convolution with a 2k kernel, output k times larger.

    Input pixel ``i`` feeds outputs ``[k*i - k, k*i + k)``, so the kernel can
    express sample-aligned bilinear interpolation. One row/column of border
    padding on the bottom/right supplies the last output band.
    """

    def __init__(self, c_in: int, c_out: int, factor: int, padding: str = "replicate"):
        super().__init__()
        size = 2 * factor
        self.v = nn.Parameter(torch.empty(c_in, c_out, size, size))
        self.g = nn.Parameter(torch.empty(c_out))
        self.b = nn.Parameter(torch.zeros(c_out))
        self.factor = factor
        self.padding = padding
        # each output receives c_in * 2 * 2 taps
        self.fan_in = c_in * 4

    def weight(self) -> torch.Tensor:
        return _effective(self.v, self.g, 1)

    def forward(self, x):
        k = self.factor
        h, w = x.shape[-2:]
        x = F.pad(x, (0, 1, 0, 1), mode=self.padding)
        y = F.conv_transpose2d(x, self.weight(), self.b, stride=k)
        return y[..., k:k + k * h, k:k + k * w]


class ResBlock(nn.Module):
    def __init__(self, width: int, expansion: int, kernel_size: int, padding: str):
        super().__init__()
        self.expand = WNConv2d(width, width * expansion, kernel_size, padding)
        self.project = WNConv2d(width * expansion, width, kernel_size, padding)

    def forward(self, x):
        return x + self.project(F.relu(self.expand(x)))


class WDSR(nn.Module):
    """Maps raw low-resolution intensities ``(B, 1, H, W)`` to ``(B, 1, kH, kW)``.

    No clipping happens here; :func:`predict` clips at inference.
    """

    def __init__(self, config: NetworkConfig, stats: NormalizationStats = NormalizationStats()):
        super().__init__()
        c = config
        self.config = config
        self.stats = stats
        self.head = WNConv2d(1, c.width, c.kernel_size, c.padding)
        self.blocks = nn.ModuleList(
            ResBlock(c.width, c.expansion, c.kernel_size, c.padding) for _ in range(c.num_blocks))
        self.tail = WNConv2d(c.width, c.width, c.kernel_size, c.padding)
        self.up = WNConvTranspose2d(c.width, 1, c.factor, c.padding)
        self.skip_conv = WNConv2d(1, c.skip_width, c.kernel_size, c.padding)
        self.skip_up = WNConvTranspose2d(c.skip_width, 1, c.factor, c.padding)

    def forward(self, low: torch.Tensor) -> torch.Tensor:
        x = (low - self.stats.mean) / self.stats.std
        h = self.head(x)
        y = h
        for block in self.blocks:
            y = block(y)
        y = self.tail(y) + h
        out = self.up(y) + self.skip_up(self.skip_conv(x))
        return out * self.stats.std + self.stats.mean


def _wn_layers(model: nn.Module):
    return [m for m in model.modules() if isinstance(m, (WNConv2d, WNConvTranspose2d))]


def init(config: NetworkConfig, stats: NormalizationStats = NormalizationStats()) -> WDSR:
    """Build a network with seeded He-normal directions, ``g = ||v||`` and zero biases.

    The output conv of every residual block starts at ``res_init_scale * ||v||``
    so the stacked blocks begin close to identity maps.
    """
    model = WDSR(config, stats)
    gen = torch.Generator().manual_seed(config.seed)
    out_axis = {WNConv2d: 0, WNConvTranspose2d: 1}
    with torch.no_grad():
        for layer in _wn_layers(model):
            std = math.sqrt(2.0 / layer.fan_in)
            layer.v.copy_(torch.randn(layer.v.shape, generator=gen) * std)
            layer.g.copy_(_channel_norm(layer.v, out_axis[type(layer)]))
            layer.b.zero_()
        for block in model.blocks:
            block.project.g.mul_(config.res_init_scale)
    return model


def _conv_params(c_in: int, c_out: int, kernel: int) -> int:
    return c_out * c_in * kernel * kernel + 2 * c_out


def param_count(config: NetworkConfig) -> int:
    """Closed-form count of trainable scalars (directions, scales and biases)."""
    c = config
    k, w, ws, e = c.kernel_size, c.width, c.skip_width, c.expansion
    up = 2 * c.factor
    block = _conv_params(w, e * w, k) + _conv_params(e * w, w, k)
    return (_conv_params(1, w, k) + c.num_blocks * block + _conv_params(w, w, k)
            + _conv_params(w, 1, up) + _conv_params(1, ws, k) + _conv_params(ws, 1, up))


def forward(model: WDSR, low: np.ndarray, clip: bool = True) -> np.ndarray:
    """Run the network on one grid; output is ``factor`` times larger."""
    low = as_grid(low)
    k = model.config.kernel_size
    if min(low.shape) < k:
        raise ValueError(f"input {low.shape} smaller than the {k}x{k} kernel support")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(low, dtype=dtype)[None, None])[0, 0]
    out = out.double().numpy()
    return np.clip(out, 0.0, 1.0) if clip else out


# -- checkpoints -------------------------------------------------------------

MAGIC = b"NOISRNET"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: NetworkConfig
    arrays: dict[str, np.ndarray]
    stats: NormalizationStats
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: WDSR, **meta) -> "Checkpoint":
        arrays = {name: t.detach().to(torch.float32).numpy().copy()
                  for name, t in model.state_dict().items()}
        return cls(model.config, arrays, model.stats, dict(meta))

    def build(self, dtype=torch.float32) -> WDSR:
        model = WDSR(self.config, self.stats)
        expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
        got = {k: tuple(v.shape) for k, v in self.arrays.items()}
        if expected != got:
            raise ConfigMismatchError("checkpoint arrays do not match its network config")
        model.load_state_dict({k: torch.from_numpy(np.array(v, dtype=np.float32)) for k, v in self.arrays.items()})
        return model.to(dtype)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Little-endian container: magic, version, JSON header, stats, named float32 arrays, CRC32."""
    header = json.dumps({"config": asdict(ckpt.config), "meta": ckpt.meta}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header,
             struct.pack("<ddI", ckpt.stats.mean, ckpt.stats.std, len(ckpt.arrays))]
    for name, arr in ckpt.arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        bname = name.encode()
        parts.append(struct.pack("<I", len(bname)) + bname)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path, factor: int | None = None) -> Checkpoint:
    """Read a checkpoint; ``factor`` (if given) must match the stored config."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a noisr checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    rd = _Reader(body)
    rd.take(len(MAGIC))
    version, header_len = rd.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    try:
        header = json.loads(rd.take(header_len))
        config = NetworkConfig(**header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc
    mean, std, count = rd.unpack("<ddI")
    arrays = {}
    for _ in range(count):
        (name_len,) = rd.unpack("<I")
        name = rd.take(name_len).decode()
        (ndim,) = rd.unpack("<I")
        shape = rd.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(rd.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if rd.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after arrays")
    ckpt = Checkpoint(config, arrays, NormalizationStats(mean, std), header.get("meta", {}))
    if factor is not None and factor != config.factor:
        raise ConfigMismatchError(f"checkpoint is for factor {config.factor}, requested {factor}")
    ckpt.build()  # shape consistency check
    return ckpt
