import math

import numpy as np
import pytest
import torch

from enhcodec.losses import (
    LossWeights,
    SpectralLossConfig,
    discriminator_loss,
    feature_matching_loss,
    generator_adv_loss,
    generator_total_loss,
    multiscale_spectral_loss,
    si_snr,
    spectral_terms,
)
from enhcodec.signal import Waveform, stft_magnitude
from helpers import gradient_rel_error


class TestSpectralLoss:
    def test_identity_is_zero(self, rng):
        x = torch.tensor(rng.uniform(-1, 1, 700))
        cfg = SpectralLossConfig(scales=(64, 128), n_mels=None)
        assert float(multiscale_spectral_loss(x, x.clone(), cfg)) == 0.0

    def test_hand_value_single_bin(self):
        # One scale (64), one frame, one bin: X=2, Y=1 with alpha = sqrt(32).
        eps = 1e-5
        got = float(spectral_terms(torch.tensor([[2.0]], dtype=torch.float64),
                                   torch.tensor([[1.0]], dtype=torch.float64),
                                   math.sqrt(32.0), eps))
        expected = 1.0 + math.sqrt(32.0) * (math.log(2.0 + eps) - math.log(1.0 + eps)) ** 2
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(3.718, abs=5e-4)

    def test_alpha_rule(self):
        cfg = SpectralLossConfig()
        assert cfg.alpha(2048) == pytest.approx(32.0, abs=0)
        assert cfg.alpha(64) == pytest.approx(math.sqrt(32.0))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            multiscale_spectral_loss(torch.zeros(100), torch.zeros(101),
                                     SpectralLossConfig(scales=(64,), n_mels=None))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SpectralLossConfig(scales=())
        with pytest.raises(ValueError):
            SpectralLossConfig(scales=(63,))
        with pytest.raises(ValueError):
            SpectralLossConfig(epsilon=0.0)

    def test_zero_iff_spectrograms_match(self, rng):
        cfg = SpectralLossConfig(scales=(64, 128), n_mels=None)
        x = torch.tensor(rng.uniform(-1, 1, 500))
        # Sign flip keeps every magnitude spectrogram, so the loss is 0 even
        # though the waveforms differ.
        assert float(multiscale_spectral_loss(x, -x, cfg)) == 0.0
        y = torch.tensor(rng.uniform(-1, 1, 500))
        loss = float(multiscale_spectral_loss(x, y, cfg))
        mags_differ = any(
            not torch.equal(stft_magnitude(x, s, s // 4), stft_magnitude(y, s, s // 4))
            for s in cfg.scales
        )
        assert (loss > 0) == mags_differ

    def test_waveform_inputs_and_mel(self, rng):
        x = Waveform(rng.uniform(-1, 1, 1000), 24000)
        y = Waveform(rng.uniform(-1, 1, 1000), 24000)
        val = float(multiscale_spectral_loss(x, y))
        assert val > 0 and np.isfinite(val)
        with pytest.raises(ValueError, match="sample_rate"):
            multiscale_spectral_loss(torch.zeros(100), torch.zeros(100),
                                     SpectralLossConfig(scales=(64,), n_mels=8))

    def test_gradient_float32(self, rng):
        cfg = SpectralLossConfig(scales=(64,), n_mels=None)
        x = torch.tensor(rng.uniform(-1, 1, 200), dtype=torch.float32)
        y = torch.tensor(rng.uniform(-1, 1, 200), dtype=torch.float32)
        fn = lambda t: multiscale_spectral_loss(x.to(t.dtype), t, cfg)
        assert gradient_rel_error(fn, y, h=1e-5, probe_dtype=torch.float64) <= 1e-3

    def test_gradient_float64(self, rng):
        cfg = SpectralLossConfig(scales=(64,), n_mels=None)
        x = torch.tensor(rng.uniform(-1, 1, 200), dtype=torch.float64)
        y = torch.tensor(rng.uniform(-1, 1, 200), dtype=torch.float64)
        fn = lambda t: multiscale_spectral_loss(x, t, cfg)
        assert gradient_rel_error(fn, y, h=1e-6) <= 1e-6


class TestHingeLosses:
    def test_generator_adv_hand_values(self):
        assert float(generator_adv_loss([torch.ones(5)])) == 0.0
        assert float(generator_adv_loss([torch.zeros(5)])) == 1.0
        two = [torch.full((3,), 2.0), torch.full((7,), -1.0)]
        assert float(generator_adv_loss(two)) == pytest.approx(1.0, abs=0)

    def test_generator_adv_empty(self):
        with pytest.raises(ValueError):
            generator_adv_loss([])

    def test_discriminator_hand_values(self):
        ones = [torch.ones(4)]
        neg = [torch.full((4,), -1.0)]
        zeros = [torch.zeros(4)]
        assert float(discriminator_loss(ones, neg)) == 0.0
        assert float(discriminator_loss(zeros, zeros)) == 2.0
        assert float(discriminator_loss(neg, ones)) == 4.0

    def test_discriminator_k_mismatch(self):
        with pytest.raises(ValueError):
            discriminator_loss([torch.zeros(3)], [torch.zeros(3), torch.zeros(3)])

    def test_discriminator_monotonicity(self, rng):
        real = [torch.tensor(rng.normal(0, 0.5, 6)), torch.tensor(rng.normal(0, 0.5, 4))]
        fake = [torch.tensor(rng.normal(0, 0.5, 6)), torch.tensor(rng.normal(0, 0.5, 4))]
        base = float(discriminator_loss(real, fake))
        for k, t in enumerate(real):
            for i in range(t.numel()):
                bumped = [x.clone() for x in real]
                bumped[k][i] += 0.3
                assert float(discriminator_loss(bumped, fake)) <= base + 1e-12
        for k, t in enumerate(fake):
            for i in range(t.numel()):
                bumped = [x.clone() for x in fake]
                bumped[k][i] += 0.3
                assert float(discriminator_loss(real, bumped)) >= base - 1e-12

    def test_generator_adv_monotone_in_logits(self, rng):
        fake = [torch.tensor(rng.normal(0, 0.5, 8))]
        base = float(generator_adv_loss(fake))
        assert float(generator_adv_loss([fake[0] + 0.25])) <= base + 1e-12

    def test_adv_gradient(self, rng):
        logits = torch.tensor(rng.normal(0, 0.4, 32), dtype=torch.float64)
        fn = lambda t: generator_adv_loss([t[:20], t[20:]])
        assert gradient_rel_error(fn, logits, h=1e-6) <= 1e-6

    def test_discriminator_gradient(self, rng):
        real = torch.tensor(rng.normal(0, 0.4, 16), dtype=torch.float64)
        fake = torch.tensor(rng.normal(0, 0.4, 16), dtype=torch.float64)
        fn_r = lambda t: discriminator_loss([t], [fake])
        fn_f = lambda t: discriminator_loss([real], [t])
        assert gradient_rel_error(fn_r, real, h=1e-6) <= 1e-6
        assert gradient_rel_error(fn_f, fake, h=1e-6) <= 1e-6


class TestFeatureMatching:
    def test_hand_value(self):
        real = [[torch.tensor([1.0, 3.0])]]
        fake = [[torch.tensor([2.0, 5.0])]]
        assert float(feature_matching_loss(real, fake)) == pytest.approx(1.5, abs=0)

    def test_identical_stacks(self, rng):
        feats = [[torch.tensor(rng.normal(size=(4, 6))) for _ in range(3)]]
        assert float(feature_matching_loss(feats, feats)) == 0.0

    def test_absolute_homogeneity(self, rng):
        real = [[torch.tensor(rng.normal(size=(2, 5))) for _ in range(2)]]
        fake = [[torch.tensor(rng.normal(size=(2, 5))) for _ in range(2)]]
        base = float(feature_matching_loss(real, fake))
        scaled = float(feature_matching_loss(
            [[3.0 * t for t in real[0]]], [[3.0 * t for t in fake[0]]]
        ))
        assert scaled == pytest.approx(3.0 * base, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            feature_matching_loss([[torch.zeros(3)]], [[torch.zeros(4)]])

    def test_gradient(self, rng):
        real = [[torch.tensor(rng.normal(size=8), dtype=torch.float64)]]
        fake_flat = torch.tensor(rng.normal(size=8), dtype=torch.float64)
        fn = lambda t: feature_matching_loss(real, [[t]])
        assert gradient_rel_error(fn, fake_flat, h=1e-6) <= 1e-6


class TestTotalLoss:
    def test_weighted_sum(self):
        w = LossWeights(1.0, 100.0, 1.0)
        assert generator_total_loss(0.5, 0.01, 2.0, w) == pytest.approx(3.5, abs=0)
        assert generator_total_loss(0.0, 0.0, 0.0, w) == 0.0
        w2 = LossWeights(0.0, 0.0, 1.0)
        assert generator_total_loss(9.9, 3.3, 1.25, w2) == 1.25

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0, 0.0)


class TestSiSnr:
    def test_identical_capped(self, rng):
        r = rng.uniform(-1, 1, 400)
        assert si_snr(r, r.copy()) == 100.0

    def test_scale_invariance(self, rng):
        r = rng.uniform(-1, 1, 400)
        assert si_snr(r, 0.5 * r) == 100.0

    def test_orthogonal_equal_energy(self):
        n = 8
        ref = np.zeros(n)
        ref[0] = 1.0
        noise = np.zeros(n)
        noise[1] = 1.0
        assert si_snr(ref, ref + noise) == pytest.approx(0.0, abs=1e-12)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            si_snr(np.zeros(5), np.ones(5))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            si_snr(np.ones(4), np.ones(5))
