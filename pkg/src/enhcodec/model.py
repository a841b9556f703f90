"""Convolutional codec generator: causal encoder and decoder.

The encoder is a 1-D convolution followed by four downsampling blocks with
strides (2, 4, 5, 8); each block is three residual units plus a strided
causal convolution, with channel count doubling per block. A final causal
convolution produces the latent sequence (default 256 dims per frame). The
decoder mirrors the structure with causal transposed convolutions.

All convolutions are causal (left padding only), so encoder frame f depends
only on input samples up to (f + 1) * total_stride - 1.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .signal import Waveform


@dataclass
class ModelConfig:
    strides: tuple[int, ...] = (2, 4, 5, 8)
    latent_dim: int = 256
    base_channels: int = 8
    residual_units_per_block: int = 3
    sample_rate: int = 24000

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        if not self.strides or any(s < 1 for s in self.strides):
            raise ValueError("strides must be a non-empty tuple of ints >= 1")
        if self.latent_dim < 1 or self.base_channels < 1:
            raise ValueError("latent_dim and base_channels must be >= 1")
        if self.residual_units_per_block < 0:
            raise ValueError("residual_units_per_block must be >= 0")

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    @property
    def frame_rate(self) -> float:
        """Latent frames per second (the S in bitrate = nq * S * log2 N)."""
        return self.sample_rate / self.total_stride


# Latent sequences are arrays/tensors of shape (frames, latent_dim) or
# (batch, frames, latent_dim); modules use conv layout (batch, channels, time).
LatentSequence = np.ndarray


class CausalConv1d(nn.Conv1d):
    """Conv1d padded on the left only; with stride s, output frame t depends
    on inputs up to t*s + s - 1. Strided use requires input length divisible
    by the stride."""

    def forward(self, x):
        k = (self.kernel_size[0] - 1) * self.dilation[0] + 1
        pad = k - self.stride[0]
        if self.stride[0] > 1 and x.shape[-1] % self.stride[0] != 0:
            raise ValueError(
                f"input length {x.shape[-1]} not divisible by stride {self.stride[0]}"
            )
        return super().forward(F.pad(x, (pad, 0)))


class CausalConvTranspose1d(nn.ConvTranspose1d):
    """Transposed convolution trimmed on the right so output length is
    exactly input length times the stride."""

    def forward(self, x):
        y = super().forward(x)
        trim = self.kernel_size[0] - self.stride[0]
        return y[..., : y.shape[-1] - trim] if trim > 0 else y


class ResidualUnit(nn.Module):
    """Two causal convolutions (kernel 7 then 1) with ELU and an additive skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv_wide = CausalConv1d(channels, channels, 7)
        self.conv_point = CausalConv1d(channels, channels, 1)

    def forward(self, x):
        y = self.conv_wide(F.elu(x))
        y = self.conv_point(F.elu(y))
        return x + y


class EncoderBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, n_units: int):
        super().__init__()
        self.units = nn.ModuleList(ResidualUnit(in_channels) for _ in range(n_units))
        self.down = CausalConv1d(in_channels, out_channels, 2 * stride, stride=stride)

    def forward(self, x):
        for unit in self.units:
            x = unit(x)
        return self.down(F.elu(x))


class DecoderBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, n_units: int):
        super().__init__()
        self.up = CausalConvTranspose1d(in_channels, out_channels, 2 * stride, stride=stride)
        self.units = nn.ModuleList(ResidualUnit(out_channels) for _ in range(n_units))

    def forward(self, x):
        x = self.up(F.elu(x))
        for unit in self.units:
            x = unit(x)
        return x


class Encoder(nn.Module):
    """Waveform (B, 1, T) -> latents (B, latent_dim, T / total_stride)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        self.conv_in = CausalConv1d(1, ch, 7)
        blocks = []
        for stride in cfg.strides:
            blocks.append(EncoderBlock(ch, 2 * ch, stride, cfg.residual_units_per_block))
            ch *= 2
        self.blocks = nn.ModuleList(blocks)
        self.conv_out = CausalConv1d(ch, cfg.latent_dim, 3)

    def forward(self, x):
        if x.shape[-1] % self.cfg.total_stride != 0:
            raise ValueError(
                f"input length {x.shape[-1]} must be a multiple of {self.cfg.total_stride}; "
                "right-pad with zeros first (see pad_to_stride)"
            )
        x = self.conv_in(x)
        for block in self.blocks:
            x = block(x)
        return self.conv_out(F.elu(x))


class Decoder(nn.Module):
    """Latents (B, latent_dim, F) -> waveform (B, 1, F * total_stride)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels * 2 ** len(cfg.strides)
        self.conv_in = CausalConv1d(cfg.latent_dim, ch, 7)
        blocks = []
        for stride in reversed(cfg.strides):
            blocks.append(DecoderBlock(ch, ch // 2, stride, cfg.residual_units_per_block))
            ch //= 2
        self.blocks = nn.ModuleList(blocks)
        self.conv_out = CausalConv1d(ch, 1, 7)

    def forward(self, z):
        x = self.conv_in(z)
        for block in self.blocks:
            x = block(x)
        return self.conv_out(F.elu(x))


def output_frames(n_samples: int, cfg: ModelConfig) -> int:
    """Number of latent frames for an input of n_samples: ceil(n / total_stride)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return -(-n_samples // cfg.total_stride)


def pad_to_stride(x: torch.Tensor, total_stride: int) -> torch.Tensor:
    """Right-pad the time axis with zeros up to a multiple of total_stride."""
    n = x.shape[-1]
    target = -(-n // total_stride) * total_stride
    if target == n:
        return x
    return F.pad(x, (0, target - n))


def encode(w: Waveform, encoder: Encoder) -> np.ndarray:
    """Encode a waveform into a (frames, latent_dim) float array."""
    x = torch.as_tensor(w.samples, dtype=torch.float32).reshape(1, 1, -1)
    x = pad_to_stride(x, encoder.cfg.total_stride)
    with torch.no_grad():
        z = encoder(x)
    return z[0].T.contiguous().numpy()


def decode(latents, decoder: Decoder, sample_rate: int) -> Waveform:
    """Decode a (frames, latent_dim) latent sequence back to a waveform."""
    z = torch.as_tensor(np.asarray(latents), dtype=torch.float32)
    if z.ndim != 2:
        raise ValueError("latents must be 2-D (frames x latent_dim)")
    with torch.no_grad():
        y = decoder(z.T.unsqueeze(0))
    return Waveform(y[0, 0].numpy().astype(np.float64), sample_rate)


def _named_tensors(params):
    if isinstance(params, nn.Module):
        items = params.state_dict().items()
    elif hasattr(params, "items"):
        items = params.items()
    else:
        items = params
    return sorted((str(k), v) for k, v in items)


def parameter_digest(params) -> str:
    """Deterministic SHA-256 digest of a parameter set (module, state dict,
    or iterable of (name, tensor) pairs). Equal parameters give equal digests;
    any single-bit change gives a different digest."""
    h = hashlib.sha256()
    for name, tensor in _named_tensors(params):
        t = torch.as_tensor(tensor).detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(",".join(map(str, t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()
