"""Waveform I/O and time-frequency analysis.

Conventions used throughout the package:

* Waveforms are mono float arrays with nominal range [-1, 1].
* 16-bit PCM values map to floats by division with 32768, so the largest
  positive PCM value 32767 becomes 32767/32768.
* STFT: Hann window (periodic), centered frames with reflect padding,
  ``frames = ceil(len / hop)``. The magnitude (not power) spectrum is
  returned. The torch implementation in :func:`stft_magnitude` is the single
  source of truth; it is differentiable and is reused by the training losses.
"""

from __future__ import annotations

import wave
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

PCM_SCALE = 32768.0

MIN_WINDOW = 64
MAX_WINDOW = 2048


class NonMonoError(ValueError):
    """WAV file has more than one channel."""


class UnsupportedEncodingError(ValueError):
    """WAV file is not 16-bit uncompressed PCM."""


@dataclass
class Waveform:
    """Mono audio samples plus their sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """Magnitude spectrogram: frames x bins, bins = window_length // 2 + 1."""

    magnitudes: np.ndarray
    window_length: int
    hop: int

    def __post_init__(self):
        self.magnitudes = np.asarray(self.magnitudes, dtype=np.float64)
        if self.magnitudes.ndim != 2:
            raise ValueError("magnitudes must be 2-D (frames x bins)")
        if not np.all(np.isfinite(self.magnitudes)) or np.any(self.magnitudes < 0):
            raise ValueError("magnitudes must be finite and non-negative")
        if self.magnitudes.shape[1] != self.window_length // 2 + 1:
            raise ValueError("bin count must equal window_length // 2 + 1")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")

    @property
    def frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def bins(self) -> int:
        return self.magnitudes.shape[1]


@dataclass
class MelFilterbank:
    """Triangular mel filterbank mapping linear bins to mel bands."""

    weights: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be 2-D (n_mels x bins)")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and non-negative")
        if np.any(self.weights.sum(axis=1) == 0):
            raise ValueError("every mel row needs at least one positive entry")

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def load_wav(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file.

    Raises FileNotFoundError, NonMonoError, or UnsupportedEncodingError for
    the corresponding defects.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise NonMonoError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2 or wf.getcomptype() != "NONE":
            raise UnsupportedEncodingError(f"{path}: expected uncompressed 16-bit PCM")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE, rate)


def save_wav(w: Waveform, path) -> None:
    """Write a waveform as 16-bit PCM mono WAV, clipping out-of-range samples."""
    samples = w.samples
    if np.any(np.abs(samples) > 1.0):
        warnings.warn("samples exceed [-1, 1]; clipping on save", stacklevel=2)
        samples = np.clip(samples, -1.0, 1.0)
    pcm = np.clip(np.round(samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(pcm.tobytes())


def _validate_window(window_length: int, hop: int) -> None:
    ok = (
        MIN_WINDOW <= window_length <= MAX_WINDOW
        and window_length & (window_length - 1) == 0
    )
    if not ok:
        raise ValueError(
            f"window_length must be a power of two in [{MIN_WINDOW}, {MAX_WINDOW}], got {window_length}"
        )
    if hop < 1:
        raise ValueError("hop must be >= 1")


def stft_magnitude(x: torch.Tensor, window_length: int, hop: int) -> torch.Tensor:
    """Differentiable magnitude STFT of a batch of signals.

    ``x`` has shape (..., T); the result has shape (..., frames, bins) with
    frames = ceil(T / hop) and bins = window_length // 2 + 1. Frame t is the
    Hann-windowed slice centered at sample t * hop of the reflect-padded
    signal. Signals too short to reflect-pad fall back to zero padding.
    """
    _validate_window(window_length, hop)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("cannot compute STFT of an empty waveform")
    frames = -(-n // hop)
    pad = window_length // 2
    flat = x.reshape(-1, 1, n)
    if n > pad:
        padded = F.pad(flat, (pad, pad), mode="reflect")
    else:
        padded = F.pad(flat, (pad, pad), mode="constant", value=0.0)
    windows = padded.unfold(-1, window_length, hop)[:, 0, :frames, :]
    win = torch.hann_window(window_length, periodic=True, dtype=x.dtype, device=x.device)
    spec = torch.fft.rfft(windows * win, dim=-1).abs()
    return spec.reshape(*x.shape[:-1], frames, window_length // 2 + 1)


def stft(w: Waveform, window_length: int, hop: int) -> Spectrogram:
    """Magnitude spectrogram of a waveform (see :func:`stft_magnitude`)."""
    x = torch.from_numpy(np.ascontiguousarray(w.samples))
    mags = stft_magnitude(x, window_length, hop).numpy()
    return Spectrogram(mags, window_length, hop)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, window_length: int, n_mels: int) -> MelFilterbank:
    """Triangular filters with unit peak, equally spaced on the mel scale
    from 0 Hz to Nyquist.

    An otherwise-empty row (possible when triangles are narrower than one
    bin) gets weight 1 at the bin nearest its center frequency, so every row
    has support.
    """
    bins = window_length // 2 + 1
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > bins:
        raise ValueError(f"n_mels ({n_mels}) exceeds available bins ({bins})")
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(nyquist), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(bins) * sample_rate / window_length
    weights = np.zeros((n_mels, bins))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bin_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - center, 1e-12)
        weights[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        if weights[i].sum() == 0.0:
            weights[i, int(np.argmin(np.abs(bin_freqs - center)))] = 1.0
    return MelFilterbank(weights, sample_rate)


def mel_spectrogram(w: Waveform, window_length: int, n_mels: int, hop: int | None = None) -> np.ndarray:
    """Mel-projected magnitude spectrogram, shape (frames, n_mels)."""
    if hop is None:
        hop = window_length // 4
    spec = stft(w, window_length, hop)
    bank = mel_filterbank(w.sample_rate, window_length, n_mels)
    return spec.magnitudes @ bank.weights.T
