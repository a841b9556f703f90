"""Corpus handling and noisy-mixture synthesis.

Training pairs are built from a clean clip and an optional noise clip:

* a random crop (default 360 ms) is taken from the clean clip,
* the crop's peak is normalized to 0.95 and multiplied by a random gain in
  [0.3, 1.0] (the same factor is applied to the target, so input - target is
  pure noise),
* an independent noise segment is drawn for every 3 s insertion period the
  crop overlaps, and the assembled noise track is scaled to a random SNR
  drawn uniformly from [0, 15] dB against the normalized clean fragment.

A synthetic corpus generator (harmonic tones plus low-pass filtered noise)
stands in for real speech/noise corpora; real WAV corpora plug in through
tab-separated manifest files (clean_path, noise_path or "-", seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .signal import Waveform, load_wav


@dataclass
class NoiseMixSpec:
    snr_db_range: tuple[float, float] = (0.0, 15.0)
    insertion_period_s: float = 3.0
    peak_target: float = 0.95
    gain_range: tuple[float, float] = (0.3, 1.0)
    crop_s: float = 0.360

    def __post_init__(self):
        lo, hi = self.snr_db_range
        if lo > hi:
            raise ValueError("snr_db_range must be (lo, hi) with lo <= hi")
        if not 0.0 < self.peak_target <= 1.0:
            raise ValueError("peak_target must be in (0, 1]")
        glo, ghi = self.gain_range
        if not 0.0 < glo <= ghi <= 1.0:
            raise ValueError("gain_range must satisfy 0 < lo <= hi <= 1")
        if self.crop_s <= 0 or self.insertion_period_s <= 0:
            raise ValueError("crop_s and insertion_period_s must be positive")

    def crop_samples(self, sample_rate: int) -> int:
        return int(round(self.crop_s * sample_rate))


@dataclass
class ManifestEntry:
    clean_path: Path
    noise_path: Path | None
    duration_s: float
    seed: int


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]

    def validate_durations(self, min_duration_s: float) -> None:
        for e in self.entries:
            if e.duration_s < min_duration_s:
                raise ValueError(
                    f"{e.clean_path}: duration {e.duration_s:.3f}s < required {min_duration_s:.3f}s"
                )


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add noise scaled so the clean-to-noise power ratio is snr_db decibels."""
    if len(clean) != len(noise):
        raise ValueError("clean and noise must have equal lengths")
    p_clean = float(np.mean(clean.samples**2))
    p_noise = float(np.mean(noise.samples**2))
    if p_clean == 0.0 or p_noise == 0.0:
        raise ValueError("clean and noise must both have non-zero power")
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + scale * noise.samples, clean.sample_rate)


def _noise_track(noise: np.ndarray, start: int, length: int, period: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Noise covering absolute samples [start, start+length): an independent
    segment (random circular offset into the noise clip) per insertion
    period, so segments change at period boundaries of the clean timeline."""
    out = np.empty(length)
    pos = start
    while pos < start + length:
        boundary = (pos // period + 1) * period
        seg_end = min(start + length, boundary)
        offset = int(rng.integers(0, noise.size))
        idx = (offset + np.arange(seg_end - pos)) % noise.size
        out[pos - start : seg_end - start] = noise[idx]
        pos = seg_end
    return out


def prepare_example(clean: Waveform, noise: Waveform | None, spec: NoiseMixSpec,
                    seed) -> tuple[Waveform, Waveform]:
    """Build one (input, target) training pair; deterministic given seed.

    Draw order: crop start, gain, then (with noise) SNR and one noise offset
    per overlapped insertion period.
    """
    rng = np.random.default_rng(seed)
    crop = spec.crop_samples(clean.sample_rate)
    if len(clean) < crop:
        raise ValueError(f"clip of {len(clean)} samples is shorter than the {crop}-sample crop")
    start = int(rng.integers(0, len(clean) - crop + 1))
    fragment = clean.samples[start : start + crop]
    peak = float(np.max(np.abs(fragment)))
    factor = spec.peak_target / peak if peak > 0 else 1.0
    gain = float(rng.uniform(*spec.gain_range))
    target = fragment * factor * gain
    if noise is None:
        return Waveform(target.copy(), clean.sample_rate), Waveform(target, clean.sample_rate)
    if noise.sample_rate != clean.sample_rate:
        raise ValueError("noise sample rate must match clean sample rate")
    snr_db = float(rng.uniform(*spec.snr_db_range))
    period = int(round(spec.insertion_period_s * clean.sample_rate))
    track = _noise_track(noise.samples, start, crop, period, rng)
    mixed = mix_at_snr(
        Waveform(target, clean.sample_rate), Waveform(track, clean.sample_rate), snr_db
    )
    return mixed, Waveform(target, clean.sample_rate)


def synth_corpus(n_clips: int, duration_s: float, sample_rate: int,
                 seed) -> tuple[list[Waveform], list[Waveform]]:
    """Synthetic stand-in corpus: harmonic tone clips (random f0 in
    [80, 300] Hz, 3..6 harmonics, slow amplitude envelope) and low-pass
    filtered white-noise clips. Clean and noise use disjoint seed streams."""
    if n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    n = int(round(duration_s * sample_rate))
    rng_clean = np.random.default_rng([int(seed), 0])
    rng_noise = np.random.default_rng([int(seed), 1])
    t = np.arange(n) / sample_rate
    clean = []
    for _ in range(n_clips):
        f0 = float(rng_clean.uniform(80.0, 300.0))
        n_harm = int(rng_clean.integers(3, 7))
        x = np.zeros(n)
        for h in range(1, n_harm + 1):
            amp = float(rng_clean.uniform(0.4, 1.0)) / h
            phase = float(rng_clean.uniform(0, 2 * np.pi))
            x += amp * np.sin(2 * np.pi * f0 * h * t + phase)
        env_freq = float(rng_clean.uniform(0.5, 2.0))
        env_phase = float(rng_clean.uniform(0, 2 * np.pi))
        x *= 0.55 + 0.45 * np.sin(2 * np.pi * env_freq * t + env_phase)
        x *= float(rng_clean.uniform(0.5, 0.9)) / max(np.max(np.abs(x)), 1e-9)
        clean.append(Waveform(x, sample_rate))
    noise = []
    for _ in range(n_clips):
        white = rng_noise.standard_normal(n)
        cutoff = float(rng_noise.uniform(1000.0, min(8000.0, sample_rate / 2 - 100)))
        sos = butter(4, cutoff, btype="low", fs=sample_rate, output="sos")
        y = sosfilt(sos, white)
        y *= float(rng_noise.uniform(0.3, 0.8)) / max(np.max(np.abs(y)), 1e-9)
        noise.append(Waveform(y, sample_rate))
    return clean, noise


def save_manifest(path, entries: list[ManifestEntry]) -> None:
    lines = []
    for e in entries:
        noise = str(e.noise_path) if e.noise_path is not None else "-"
        lines.append(f"{e.clean_path}\t{noise}\t{e.seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> CorpusManifest:
    """Parse a manifest file and read clip durations from the WAV headers."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
        clean_path = Path(parts[0])
        noise_path = None if parts[1] == "-" else Path(parts[1])
        if not clean_path.exists():
            raise FileNotFoundError(f"{path}:{lineno}: missing clean file {clean_path}")
        if noise_path is not None and not noise_path.exists():
            raise FileNotFoundError(f"{path}:{lineno}: missing noise file {noise_path}")
        clean = load_wav(clean_path)
        entries.append(ManifestEntry(clean_path, noise_path, clean.duration, int(parts[2])))
    return CorpusManifest(entries)


@dataclass
class LoadedCorpus:
    """Manifest contents loaded into memory for training."""

    clean: list[Waveform]
    noise: list[Waveform | None]
    seeds: list[int]

    @classmethod
    def from_manifest(cls, manifest: CorpusManifest) -> "LoadedCorpus":
        clean = [load_wav(e.clean_path) for e in manifest.entries]
        noise = [load_wav(e.noise_path) if e.noise_path else None for e in manifest.entries]
        return cls(clean, noise, [e.seed for e in manifest.entries])

    @classmethod
    def from_waveforms(cls, clean: list[Waveform], noise: list[Waveform | None],
                       base_seed: int = 0) -> "LoadedCorpus":
        return cls(list(clean), list(noise), [base_seed + i for i in range(len(clean))])

    def __len__(self) -> int:
        return len(self.clean)

    @property
    def noisy_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.noise) if n is not None]

    @property
    def clean_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.noise) if n is None]
