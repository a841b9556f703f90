import numpy as np
import pytest
import torch

from enhcodec.model import (
    Decoder,
    Encoder,
    ModelConfig,
    decode,
    encode,
    output_frames,
    pad_to_stride,
    parameter_digest,
)
from enhcodec.signal import Waveform


@pytest.fixture(scope="module")
def small_cfg():
    return ModelConfig(base_channels=4, latent_dim=16)


@pytest.fixture(scope="module")
def small_codec(small_cfg):
    torch.manual_seed(7)
    return Encoder(small_cfg), Decoder(small_cfg)


class TestShapes:
    def test_stride_product(self, small_cfg):
        assert small_cfg.total_stride == 320
        assert small_cfg.frame_rate == 75.0

    def test_encode_frame_counts(self, small_codec, rng):
        encoder, _ = small_codec
        for n, frames in ((960, 3), (320, 1), (961, 4)):
            w = Waveform(rng.uniform(-1, 1, n), 24000)
            z = encode(w, encoder)
            assert z.shape == (frames, 16)

    def test_decode_lengths(self, small_codec, rng):
        _, decoder = small_codec
        for frames, n in ((3, 960), (1, 320)):
            w = decode(rng.normal(size=(frames, 16)), decoder, 24000)
            assert len(w) == n
            assert np.all(np.isfinite(w.samples))

    def test_roundtrip_length_is_padded_length(self, small_codec, rng):
        encoder, decoder = small_codec
        cfg = encoder.cfg
        for n in (1, 5, 319, 320, 321, 999, 1600, 2000):
            w = Waveform(rng.uniform(-1, 1, n), 24000)
            out = decode(encode(w, encoder), decoder, 24000)
            assert len(out) == output_frames(n, cfg) * cfg.total_stride

    def test_output_frames(self):
        cfg = ModelConfig()
        assert output_frames(24000, cfg) == 75
        assert output_frames(8640, cfg) == 27
        assert output_frames(1, cfg) == 1
        with pytest.raises(ValueError):
            output_frames(0, cfg)

    def test_forward_requires_stride_multiple(self, small_codec):
        encoder, _ = small_codec
        with pytest.raises(ValueError, match="multiple"):
            encoder(torch.zeros(1, 1, 321))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(strides=())
        with pytest.raises(ValueError):
            ModelConfig(latent_dim=0)


class TestCausality:
    def test_future_samples_do_not_change_past_frames(self, small_codec, rng):
        encoder, _ = small_codec
        n = 1600  # 5 frames
        x1 = torch.tensor(rng.uniform(-1, 1, n), dtype=torch.float32).reshape(1, 1, -1)
        for t in (640, 960, 1280):
            x2 = x1.clone()
            x2[..., t:] += torch.tensor(
                rng.uniform(0.1, 0.5, n - t), dtype=torch.float32
            )
            with torch.no_grad():
                z1 = encoder(x1)
                z2 = encoder(x2)
            # Frame f sees samples up to (f+1)*320 - 1 only.
            unaffected = t // 320
            assert torch.equal(z1[..., :unaffected], z2[..., :unaffected])
            assert not torch.equal(z1[..., unaffected:], z2[..., unaffected:])

    def test_forward_deterministic(self, small_codec, rng):
        encoder, _ = small_codec
        x = torch.tensor(rng.uniform(-1, 1, 960), dtype=torch.float32).reshape(1, 1, -1)
        with torch.no_grad():
            a = encoder(x)
            b = encoder(x)
        assert torch.equal(a, b)


class TestPadding:
    def test_pad_to_stride(self):
        x = torch.ones(1, 1, 961)
        y = pad_to_stride(x, 320)
        assert y.shape[-1] == 1280
        assert torch.equal(y[..., :961], x)
        assert torch.all(y[..., 961:] == 0)
        assert pad_to_stride(torch.ones(1, 1, 960), 320).shape[-1] == 960


class TestParameterDigest:
    def test_equal_params_equal_digest(self, small_codec):
        encoder, _ = small_codec
        assert parameter_digest(encoder) == parameter_digest(encoder.state_dict())

    def test_one_ulp_perturbation_changes_digest(self, small_codec):
        encoder, _ = small_codec
        state = {k: v.clone() for k, v in encoder.state_dict().items()}
        base = parameter_digest(state)
        key = next(iter(state))
        flat = state[key].reshape(-1)
        flat[0] = torch.nextafter(flat[0], torch.tensor(float("inf")))
        assert parameter_digest(state) != base

    def test_order_stability(self, small_codec):
        encoder, _ = small_codec
        items = list(encoder.state_dict().items())
        assert parameter_digest(dict(items)) == parameter_digest(dict(reversed(items)))

    def test_shape_mismatch_between_params_and_config(self, small_cfg):
        torch.manual_seed(0)
        other = Encoder(ModelConfig(base_channels=8, latent_dim=16))
        target = Encoder(small_cfg)
        with pytest.raises(RuntimeError):
            target.load_state_dict(other.state_dict())
