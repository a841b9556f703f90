"""Training objectives and the SI-SNR evaluation metric.

The reconstruction objective is a multi-scale spectral loss: for every
window length s in the configured scale set,

    sum_t ||X_t^s - Y_t^s||_1  +  alpha(s) * sum_t ||log(X_t^s + eps) - log(Y_t^s + eps)||_2^2

with alpha(s) = sqrt(s / 2), natural logarithms, and magnitude (optionally
mel-projected) spectrograms. The adversarial objectives are hinge losses
averaged per discriminator and per logit; the feature-matching loss is the
mean absolute difference of discriminator activations.

All torch-facing functions are differentiable and follow the dtype of their
inputs, so they can be checked against finite differences in both float32
and float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .signal import MelFilterbank, Waveform, mel_filterbank, stft_magnitude

SI_SNR_CAP_DB = 100.0


def _default_alpha(window_length: int) -> float:
    return math.sqrt(window_length / 2.0)


@dataclass
class SpectralLossConfig:
    """Scales and weighting of the multi-scale spectral loss.

    ``n_mels = None`` compares linear magnitude spectrograms; otherwise each
    scale is projected onto min(n_mels, bins) mel bands (small windows have
    fewer bins than the requested band count).
    """

    scales: tuple[int, ...] = (64, 128, 256, 512, 1024, 2048)
    epsilon: float = 1e-5
    n_mels: int | None = 64
    alpha: Callable[[int], float] = _default_alpha

    def __post_init__(self):
        if not self.scales:
            raise ValueError("scales must be non-empty")
        for s in self.scales:
            if s < 2 or s & (s - 1) != 0:
                raise ValueError(f"scale {s} is not a power of two")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class LossWeights:
    """Weights of the combined generator objective."""

    lambda_adv: float = 1.0
    lambda_feat: float = 100.0
    lambda_dis: float = 1.0

    def __post_init__(self):
        vals = (self.lambda_adv, self.lambda_feat, self.lambda_dis)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("loss weights must be finite and non-negative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


# A LogitSet is a sequence of per-discriminator logit tensors (any shape whose
# trailing dimension is time); a FeatureStack is a sequence of per-discriminator
# lists of layer activation tensors.
LogitSet = Sequence[torch.Tensor]
FeatureStack = Sequence[Sequence[torch.Tensor]]

_mel_cache: dict[tuple[int, int, int], np.ndarray] = {}


def _mel_weights(sample_rate: int, window_length: int, n_mels: int) -> np.ndarray:
    key = (sample_rate, window_length, n_mels)
    if key not in _mel_cache:
        _mel_cache[key] = mel_filterbank(sample_rate, window_length, n_mels).weights
    return _mel_cache[key]


def _as_signal(x) -> tuple[torch.Tensor, int | None]:
    if isinstance(x, Waveform):
        return torch.from_numpy(np.ascontiguousarray(x.samples)), x.sample_rate
    if isinstance(x, torch.Tensor):
        return x, None
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), None


def spectral_terms(mag_x: torch.Tensor, mag_y: torch.Tensor, alpha: float, epsilon: float) -> torch.Tensor:
    """Single-scale term: total L1 distance plus alpha times the total squared
    log-magnitude distance. Summed (not averaged) over frames and bins."""
    l1 = (mag_x - mag_y).abs().sum()
    log_diff = torch.log(mag_x + epsilon) - torch.log(mag_y + epsilon)
    return l1 + alpha * log_diff.pow(2).sum()


def multiscale_spectral_loss(x, xhat, cfg: SpectralLossConfig | None = None,
                             sample_rate: int | None = None) -> torch.Tensor:
    """Multi-scale spectral reconstruction loss between two equal-length
    signals (Waveform, ndarray, or tensor of shape (..., T)).

    Returns a scalar tensor; differentiable when given tensors that require
    grad. ``sample_rate`` is needed for mel projection when the inputs are
    not Waveforms.
    """
    cfg = cfg or SpectralLossConfig()
    tx, sr_x = _as_signal(x)
    ty, sr_y = _as_signal(xhat)
    if tx.shape != ty.shape:
        raise ValueError(f"length mismatch: {tuple(tx.shape)} vs {tuple(ty.shape)}")
    sr = sample_rate
    for known in (sr_x, sr_y):
        if known is not None:
            if sr is not None and sr != known:
                raise ValueError("sample rate mismatch between inputs")
            sr = known
    if cfg.n_mels is not None and sr is None:
        raise ValueError("sample_rate is required for mel-projected loss on raw arrays")
    total = None
    for s in cfg.scales:
        mag_x = stft_magnitude(tx, s, s // 4)
        mag_y = stft_magnitude(ty, s, s // 4)
        if cfg.n_mels is not None:
            bins = s // 2 + 1
            weights = _mel_weights(sr, s, min(cfg.n_mels, bins))
            bank = torch.as_tensor(weights, dtype=mag_x.dtype, device=mag_x.device)
            mag_x = mag_x @ bank.T
            mag_y = mag_y @ bank.T
        term = spectral_terms(mag_x, mag_y, cfg.alpha(s), cfg.epsilon)
        total = term if total is None else total + term
    return total


def generator_adv_loss(fake_logits: LogitSet) -> torch.Tensor:
    """Hinge generator loss: mean over discriminators of the per-logit mean
    of max(0, 1 - logit)."""
    if len(fake_logits) == 0:
        raise ValueError("logit set is empty")
    terms = [torch.relu(1.0 - lg).mean() for lg in fake_logits]
    return torch.stack(terms).mean()


def feature_matching_loss(real_feats: FeatureStack, fake_feats: FeatureStack) -> torch.Tensor:
    """Mean absolute difference of discriminator activations, averaged over
    layers within each discriminator and then over discriminators."""
    if len(real_feats) != len(fake_feats) or len(real_feats) == 0:
        raise ValueError("feature stacks must be non-empty and have equal discriminator counts")
    per_disc = []
    for real_layers, fake_layers in zip(real_feats, fake_feats):
        if len(real_layers) != len(fake_layers) or len(real_layers) == 0:
            raise ValueError("feature stacks must have matching non-empty layer lists")
        layer_terms = []
        for r, f in zip(real_layers, fake_layers):
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch: {tuple(r.shape)} vs {tuple(f.shape)}")
            layer_terms.append((r - f).abs().mean())
        per_disc.append(torch.stack(layer_terms).mean())
    return torch.stack(per_disc).mean()


def discriminator_loss(real_logits: LogitSet, fake_logits: LogitSet) -> torch.Tensor:
    """Hinge discriminator loss: per-discriminator means of max(0, 1 - D(x))
    plus max(0, 1 + D(xhat)), each averaged over discriminators."""
    if len(real_logits) != len(fake_logits) or len(real_logits) == 0:
        raise ValueError("logit sets must be non-empty and have equal discriminator counts")
    real_terms = [torch.relu(1.0 - lg).mean() for lg in real_logits]
    fake_terms = [torch.relu(1.0 + lg).mean() for lg in fake_logits]
    return torch.stack(real_terms).mean() + torch.stack(fake_terms).mean()


def generator_total_loss(adv, feat, dis, weights: LossWeights):
    """Weighted combination of the adversarial, feature, and distortion terms."""
    return weights.lambda_adv * adv + weights.lambda_feat * feat + weights.lambda_dis * dis


def si_snr(ref: Waveform | np.ndarray, est: Waveform | np.ndarray) -> float:
    """Scale-invariant SNR in dB: project the estimate onto the reference and
    compare projected energy to residual energy. Capped at +100 dB."""
    r = ref.samples if isinstance(ref, Waveform) else np.asarray(ref, dtype=np.float64)
    e = est.samples if isinstance(est, Waveform) else np.asarray(est, dtype=np.float64)
    if r.shape != e.shape:
        raise ValueError("ref and est must have equal lengths")
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise ValueError("reference signal is all-zero")
    target = (np.dot(e, r) / ref_energy) * r
    residual = e - target
    res_energy = float(np.dot(residual, residual))
    if res_energy == 0.0:
        return SI_SNR_CAP_DB
    value = 10.0 * math.log10(float(np.dot(target, target)) / res_energy)
    return min(value, SI_SNR_CAP_DB)
