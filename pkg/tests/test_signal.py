import math
import wave

import numpy as np
import pytest
import torch

from enhcodec.signal import (
    MelFilterbank,
    NonMonoError,
    Spectrogram,
    UnsupportedEncodingError,
    Waveform,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    save_wav,
    stft,
    stft_magnitude,
)
from helpers import naive_dft_magnitude


def write_raw_wav(path, pcm: np.ndarray, rate=24000, channels=1, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())


class TestWaveIO:
    def test_silence_roundtrip(self, tmp_path):
        w = Waveform(np.zeros(24000), 24000)
        path = tmp_path / "silence.wav"
        save_wav(w, path)
        back = load_wav(path)
        assert back.sample_rate == 24000
        assert len(back) == 24000
        assert np.array_equal(back.samples, np.zeros(24000))

    def test_full_scale_pcm_scaling(self, tmp_path):
        path = tmp_path / "full.wav"
        write_raw_wav(path, np.array([32767, -32768, 0], dtype="<i2"))
        w = load_wav(path)
        assert w.samples[0] == pytest.approx(32767 / 32768, abs=0)
        assert w.samples[1] == -1.0
        assert w.samples[2] == 0.0

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        write_raw_wav(path, np.zeros(64, dtype="<i2"), channels=2)
        with pytest.raises(NonMonoError):
            load_wav(path)

    def test_unsupported_width_rejected(self, tmp_path):
        path = tmp_path / "w8.wav"
        write_raw_wav(path, np.zeros(32, dtype=np.uint8), width=1)
        with pytest.raises(UnsupportedEncodingError):
            load_wav(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    def test_roundtrip_quantization_bound(self, tmp_path, rng):
        w = Waveform(rng.uniform(-1, 1, 5000), 24000)
        path = tmp_path / "rand.wav"
        save_wav(w, path)
        back = load_wav(path)
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / 32768

    def test_clipping_warns(self, tmp_path):
        w = Waveform(np.array([1.5, -2.0, 0.25]), 8000)
        path = tmp_path / "clip.wav"
        with pytest.warns(UserWarning, match="clipping"):
            save_wav(w, path)
        back = load_wav(path)
        assert back.samples[0] == pytest.approx(1.0, abs=1 / 32768)
        assert back.samples[1] == pytest.approx(-1.0, abs=1 / 32768)

    def test_waveform_validation(self):
        with pytest.raises(ValueError):
            Waveform(np.array([np.nan]), 24000)
        with pytest.raises(ValueError):
            Waveform(np.array([]), 24000)
        with pytest.raises(ValueError):
            Waveform(np.zeros(4), 0)


class TestStft:
    def test_zero_input_zero_magnitudes(self):
        w = Waveform(np.zeros(1000) + 0.0, 24000)
        # all-zero samples are valid; nudge validation by using explicit zeros
        spec = stft(w, 64, 16)
        assert np.all(spec.magnitudes == 0)

    def test_frame_count_formula(self, rng):
        w = Waveform(rng.uniform(-1, 1, 1024), 24000)
        spec = stft(w, 64, 16)
        assert spec.frames == 64
        w2 = Waveform(rng.uniform(-1, 1, 1025), 24000)
        assert stft(w2, 64, 16).frames == 65

    def test_bin4_cosine_argmax(self):
        # Length 257 keeps the reflect padding an exact continuation of the
        # cosine, so every frame is a bin-exact tone.
        n = 257
        x = np.cos(2 * np.pi * 4 * np.arange(n) / 64)
        spec = stft(Waveform(x, 24000), 64, 16)
        assert np.all(np.argmax(spec.magnitudes, axis=1) == 4)

    def test_window_validation(self, random_waveform):
        w = random_waveform(512)
        with pytest.raises(ValueError):
            stft(w, 96, 16)
        with pytest.raises(ValueError):
            stft(w, 32, 16)
        with pytest.raises(ValueError):
            stft(w, 64, 0)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            stft_magnitude(torch.zeros(0), 64, 16)

    def test_matches_naive_dft_oracle(self, rng):
        for _ in range(12):
            n = int(rng.integers(80, 4097))
            s = int(2 ** rng.integers(6, 12))
            hop = int(rng.integers(max(1, s // 8), s // 2))
            x = rng.uniform(-1, 1, n)
            ours = stft(Waveform(x, 24000), s, hop).magnitudes
            oracle = naive_dft_magnitude(x, s, hop)
            assert ours.shape == oracle.shape
            err = np.linalg.norm(ours - oracle) / max(np.linalg.norm(oracle), 1e-12)
            assert err < 1e-9  # float64 path; acceptance bound is 1e-5

    def test_trailing_zeros_do_not_change_interior_frames(self, rng):
        n, s, hop = 700, 128, 32
        x = rng.uniform(-1, 1, n)
        base = stft(Waveform(x, 24000), s, hop).magnitudes
        longer = stft(Waveform(np.concatenate([x, np.zeros(300)]), 24000), s, hop).magnitudes
        interior = [t for t in range(base.shape[0]) if t * hop - s // 2 >= 0 and t * hop + s // 2 <= n]
        assert interior, "test needs at least one fully interior frame"
        assert np.allclose(base[interior], longer[interior], rtol=0, atol=1e-12)

    def test_spectrogram_invariants(self, random_waveform):
        spec = stft(random_waveform(1000), 256, 64)
        assert spec.bins == 129
        assert np.all(spec.magnitudes >= 0)
        with pytest.raises(ValueError):
            Spectrogram(np.zeros((4, 10)), 256, 64)  # wrong bin count


class TestMel:
    def test_filterbank_shape_and_rows(self):
        bank = mel_filterbank(24000, 128, 64)
        assert bank.weights.shape == (64, 65)
        assert np.all(bank.weights >= 0)
        assert np.all(bank.weights.sum(axis=1) > 0)

    def test_n_mels_exceeding_bins(self):
        with pytest.raises(ValueError):
            mel_filterbank(24000, 64, 64)

    def test_zero_input(self):
        w = Waveform(np.zeros(1000), 24000)
        mel = mel_spectrogram(w, 128, 32)
        assert mel.shape[1] == 32
        assert np.all(mel == 0)

    def test_single_tone_support(self):
        # Bin-exact tone at bin 4 of a 64-sample window leaks into bins 3..5
        # only; positive mel rows must be exactly those overlapping that support.
        n = 257
        x = np.cos(2 * np.pi * 4 * np.arange(n) / 64)
        w = Waveform(x, 24000)
        mel = mel_spectrogram(w, 64, 16)
        bank = mel_filterbank(24000, 64, 16)
        expected = np.flatnonzero(bank.weights[:, 3:6].sum(axis=1) > 0)
        got = np.flatnonzero(mel.sum(axis=0) > 1e-9)
        assert np.array_equal(got, expected)

    def test_projection_linearity(self, rng):
        bank = mel_filterbank(24000, 256, 40)
        u = rng.uniform(0, 1, (7, 129))
        v = rng.uniform(0, 1, (7, 129))
        a, b = 0.7, 1.9
        lhs = (a * u + b * v) @ bank.weights.T
        rhs = a * (u @ bank.weights.T) + b * (v @ bank.weights.T)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_nonnegative_on_random_input(self, random_waveform):
        mel = mel_spectrogram(random_waveform(2000), 128, 40)
        assert np.all(mel >= 0)
