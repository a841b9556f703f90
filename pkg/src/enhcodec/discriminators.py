"""Adversary: three waveform-scale discriminators plus an STFT discriminator.

The waveform discriminator (four strided grouped convolutions with LeakyReLU
and a small head) is applied to the input, its 2x average-pooled version, and
its 4x average-pooled version, each with independent parameters. The STFT
discriminator applies 2-D convolutions to the magnitude spectrogram
(window 1024, hop 256). Each discriminator exposes its per-time logits and
the activations of its four internal layers for feature matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .signal import stft_magnitude

LEAKY_SLOPE = 0.1
MIN_INPUT_SAMPLES = 4  # two halvings of the 4x-downsampled path


@dataclass
class DiscriminatorSetConfig:
    base_channels: int = 16
    stft_window: int = 1024
    stft_hop: int = 256

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4 (grouped convolutions)")
        w = self.stft_window
        if w < 64 or w & (w - 1) != 0:
            raise ValueError("stft_window must be a power of two >= 64")
        if self.stft_hop < 1:
            raise ValueError("stft_hop must be >= 1")

    @property
    def num_discriminators(self) -> int:
        return 4

    @property
    def layers_per_discriminator(self) -> int:
        return 4


@dataclass
class DiscriminatorOutput:
    """Per-discriminator logits and internal-layer feature maps."""

    logits: list[torch.Tensor]
    features: list[list[torch.Tensor]]


def downsample2(x: torch.Tensor) -> torch.Tensor:
    """Average-pool the time axis by a factor of two (length halves, floor)."""
    if x.shape[-1] < 2:
        raise ValueError("need at least 2 samples to downsample")
    flat = x.reshape(-1, 1, x.shape[-1])
    pooled = F.avg_pool1d(flat, kernel_size=2, stride=2)
    return pooled.reshape(*x.shape[:-1], pooled.shape[-1])


class WaveformDiscriminator(nn.Module):
    def __init__(self, base_channels: int):
        super().__init__()
        b = base_channels
        self.layers = nn.ModuleList(
            [
                nn.Conv1d(1, b, 15, stride=2, padding=7),
                nn.Conv1d(b, 2 * b, 41, stride=4, groups=4, padding=20),
                nn.Conv1d(2 * b, 4 * b, 41, stride=4, groups=8, padding=20),
                nn.Conv1d(4 * b, 4 * b, 41, stride=4, groups=16, padding=20),
            ]
        )
        self.head = nn.Conv1d(4 * b, 1, 3, padding=1)

    def forward(self, x):
        feats = []
        for layer in self.layers:
            x = F.leaky_relu(layer(x), LEAKY_SLOPE)
            feats.append(x)
        return self.head(x).squeeze(1), feats


class STFTDiscriminator(nn.Module):
    def __init__(self, base_channels: int, window: int, hop: int):
        super().__init__()
        self.window = window
        self.hop = hop
        b = max(base_channels // 2, 4)
        self.layers = nn.ModuleList(
            [
                nn.Conv2d(1, b, (7, 3), stride=(2, 1), padding=(3, 1)),
                nn.Conv2d(b, b, (5, 3), stride=(2, 1), padding=(2, 1)),
                nn.Conv2d(b, 2 * b, (5, 3), stride=(2, 1), padding=(2, 1)),
                nn.Conv2d(2 * b, 2 * b, (5, 3), stride=(2, 2), padding=(2, 1)),
            ]
        )
        freq = window // 2 + 1
        for _ in self.layers:
            freq = (freq + 1) // 2
        self.head = nn.Conv2d(2 * b, 1, (freq, 1))

    def forward(self, x):
        mag = stft_magnitude(x.squeeze(1), self.window, self.hop)
        h = mag.transpose(-1, -2).unsqueeze(1)  # (B, 1, bins, frames)
        feats = []
        for layer in self.layers:
            h = F.leaky_relu(layer(h), LEAKY_SLOPE)
            feats.append(h)
        return self.head(h).squeeze(2).squeeze(1), feats


class DiscriminatorSet(nn.Module):
    """The four discriminators; index 0 is the STFT discriminator, indices
    1..3 are waveform discriminators at 1x, 2x, and 4x downsampling."""

    def __init__(self, cfg: DiscriminatorSetConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiscriminatorSetConfig()
        self.stft_disc = STFTDiscriminator(
            self.cfg.base_channels, self.cfg.stft_window, self.cfg.stft_hop
        )
        self.wave_discs = nn.ModuleList(
            WaveformDiscriminator(self.cfg.base_channels) for _ in range(3)
        )

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        """x: (B, 1, T) or (B, T) or (T,); returns K=4 logit arrays and K
        lists of L=4 feature layers."""
        if x.dim() == 1:
            x = x.reshape(1, 1, -1)
        elif x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] < MIN_INPUT_SAMPLES:
            raise ValueError(
                f"input too short: {x.shape[-1]} < {MIN_INPUT_SAMPLES} samples"
            )
        logits = []
        features = []
        lg, ft = self.stft_disc(x)
        logits.append(lg)
        features.append(ft)
        scaled = x
        for i, disc in enumerate(self.wave_discs):
            if i > 0:
                scaled = downsample2(scaled)
            lg, ft = disc(scaled)
            logits.append(lg)
            features.append(ft)
        return DiscriminatorOutput(logits, features)


def forward_all(x: torch.Tensor, discs: DiscriminatorSet) -> DiscriminatorOutput:
    """Functional alias for running the whole discriminator set."""
    return discs(x)
