"""Desk-scale neural speech codec with joint compression and enhancement.

The package has two halves:

* a trainable codec (causal convolutional encoder/decoder, residual vector
  quantizer, multi-scale spectral and adversarial losses) with a two-stage
  training procedure: distortion-only first, then a perceptual decoder
  trained adversarially over the frozen encoder and quantizer;
* an exact oracle for tiny discrete sources in additive noise that verifies,
  by exhaustive search, that minimum-MSE encoders remain optimal when the
  decoder must reproduce the source distribution exactly.
"""

from .signal import Waveform, Spectrogram, MelFilterbank, load_wav, save_wav, stft, mel_spectrogram
from .losses import (
    SpectralLossConfig,
    LossWeights,
    multiscale_spectral_loss,
    generator_adv_loss,
    feature_matching_loss,
    discriminator_loss,
    generator_total_loss,
    si_snr,
)
from .model import ModelConfig, Encoder, Decoder, encode, decode, output_frames, parameter_digest
from .rvq import QuantizerConfig, ResidualVectorQuantizer, bitrate
from .discriminators import DiscriminatorSet, DiscriminatorSetConfig, downsample2
from .data import NoiseMixSpec, mix_at_snr, prepare_example, synth_corpus, LoadedCorpus
from .trainer import (
    StageOneConfig,
    StageTwoConfig,
    Checkpoint,
    train_stage1,
    train_stage2,
    sample_active_quantizers,
    save_checkpoint,
    load_checkpoint,
)
from .bitstream import pack_codes, unpack_codes, BitstreamHeader, BitstreamError

__version__ = "0.1.0"
