"""Two-stage codec training.

Stage 1 trains the encoder, quantizer, and distortion decoder with the
multi-scale spectral loss only (no discriminator is ever constructed).
Stage 2 freezes the encoder and quantizer bit-for-bit (digest-checked every
step) and trains a new perceptual decoder against the discriminator set with
the weighted adversarial + feature-matching + distortion objective,
alternating one generator step with one discriminator step.

Determinism: model init comes from ``torch.manual_seed(seed)``, batch
composition and quantizer dropout depend only on (seed, step), so a fixed
seed and fixed threading reproduce checkpoints bit-exactly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .data import LoadedCorpus, NoiseMixSpec, prepare_example
from .discriminators import DiscriminatorSet, DiscriminatorSetConfig
from .losses import (
    LossWeights,
    SpectralLossConfig,
    discriminator_loss,
    feature_matching_loss,
    generator_adv_loss,
    generator_total_loss,
    multiscale_spectral_loss,
)
from .model import Decoder, Encoder, ModelConfig, parameter_digest
from .rvq import QuantizerConfig, ResidualVectorQuantizer

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """A loss became non-finite during training."""


class FrozenParameterDriftError(RuntimeError):
    """A parameter that stage 2 must keep frozen changed."""


class CheckpointError(RuntimeError):
    """Checkpoint file is unreadable or fails its digest check."""


@dataclass
class StageOneConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    quantizer_dropout: bool = True
    noisy_fraction: float = 0.5

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class StageTwoConfig:
    steps: int = 1000
    batch_size: int = 8
    gen_learning_rate: float = 1e-4
    disc_learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    quantizer_dropout: bool = True
    warm_start: bool = False
    noisy_fraction: float = 0.5

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.gen_learning_rate <= 0 or self.disc_learning_rate <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class Checkpoint:
    stage: int
    model_config: ModelConfig
    quantizer_config: QuantizerConfig
    encoder_state: dict
    quantizer_state: dict
    decoder_distortion_state: dict
    decoder_perceptual_state: dict | None
    discriminator_state: dict | None
    step: int
    digests: dict[str, str]
    config_snapshot: str

    def build_encoder(self) -> Encoder:
        enc = Encoder(self.model_config)
        enc.load_state_dict(self.encoder_state)
        enc.eval()
        return enc

    def build_quantizer(self) -> ResidualVectorQuantizer:
        rvq = ResidualVectorQuantizer(self.quantizer_config, self.model_config.latent_dim)
        rvq.load_state_dict(self.quantizer_state)
        rvq.eval()
        return rvq

    def build_decoder(self, which: str = "distortion") -> Decoder:
        if which == "distortion":
            state = self.decoder_distortion_state
        elif which == "perceptual":
            if self.decoder_perceptual_state is None:
                raise ValueError(
                    "checkpoint has no perceptual decoder (stage 2 has not been run)"
                )
            state = self.decoder_perceptual_state
        else:
            raise ValueError(f"unknown decoder {which!r}; use 'distortion' or 'perceptual'")
        dec = Decoder(self.model_config)
        dec.load_state_dict(state)
        dec.eval()
        return dec


def sample_active_quantizers(num_quantizers: int, rng: np.random.Generator) -> int:
    """Uniform draw from {1, ..., num_quantizers} (quantizer dropout)."""
    if num_quantizers < 1:
        raise ValueError("num_quantizers must be >= 1")
    return int(rng.integers(1, num_quantizers + 1))


def step_rng(seed: int, step: int) -> np.random.Generator:
    """The RNG governing batch composition and dropout for one step."""
    return np.random.default_rng([int(seed), int(step)])


def make_batch(corpus: LoadedCorpus, mix: NoiseMixSpec, batch_size: int,
               noisy_fraction: float, rng: np.random.Generator
               ) -> tuple[torch.Tensor, torch.Tensor]:
    """Assemble one (inputs, targets) batch of cropped, normalized examples.

    Batch composition depends only on the supplied RNG: each slot first
    chooses the clean or noisy pool (probability ``noisy_fraction`` for
    noisy, when both exist), then an entry, then a per-example seed.
    """
    noisy = corpus.noisy_indices
    clean = corpus.clean_indices
    inputs, targets = [], []
    for _ in range(batch_size):
        if noisy and clean:
            pool = noisy if rng.random() < noisy_fraction else clean
        else:
            pool = noisy or clean
        idx = int(pool[rng.integers(0, len(pool))])
        example_seed = int(rng.integers(0, 2**63 - 1))
        inp, tgt = prepare_example(corpus.clean[idx], corpus.noise[idx], mix, example_seed)
        inputs.append(inp.samples)
        targets.append(tgt.samples)
    x = torch.as_tensor(np.stack(inputs), dtype=torch.float32)
    y = torch.as_tensor(np.stack(targets), dtype=torch.float32)
    return x, y


def _check_finite(value: float, what: str, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(f"{what} became non-finite ({value}) at step {step}")


def train_stage1(corpus: LoadedCorpus, model_cfg: ModelConfig, quant_cfg: QuantizerConfig,
                 cfg: StageOneConfig, mix: NoiseMixSpec | None = None,
                 spectral_cfg: SpectralLossConfig | None = None
                 ) -> tuple[Checkpoint, list[dict]]:
    """Distortion-only training of (encoder, quantizer, distortion decoder)."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    mix = mix or NoiseMixSpec()
    spectral_cfg = spectral_cfg or SpectralLossConfig()
    torch.manual_seed(cfg.seed)
    encoder = Encoder(model_cfg)
    decoder = Decoder(model_cfg)
    quantizer = ResidualVectorQuantizer(quant_cfg, model_cfg.latent_dim)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()),
        lr=cfg.learning_rate, betas=cfg.adam_betas,
    )
    history: list[dict] = []
    total_stride = model_cfg.total_stride
    for step in range(1, cfg.steps + 1):
        rng = step_rng(cfg.seed, step)
        x, y = make_batch(corpus, mix, cfg.batch_size, cfg.noisy_fraction, rng)
        if x.shape[-1] % total_stride != 0:
            pad = total_stride - x.shape[-1] % total_stride
            x = torch.nn.functional.pad(x, (0, pad))
            y = torch.nn.functional.pad(y, (0, pad))
        nq = (
            sample_active_quantizers(quant_cfg.num_quantizers, rng)
            if cfg.quantizer_dropout else quant_cfg.num_quantizers
        )
        z = encoder(x.unsqueeze(1)).transpose(1, 2)  # (B, F, D)
        if step == 1:
            quantizer.initialize_from_batch(z.detach().reshape(-1, model_cfg.latent_dim), gen)
        quantized, codes, residuals = quantizer.quantize(z, nq, return_residuals=True)
        quantizer.ema_update(codes, residuals, generator=gen)
        xhat = decoder(quantized.transpose(1, 2)).squeeze(1)
        loss = multiscale_spectral_loss(
            y, xhat, spectral_cfg, sample_rate=model_cfg.sample_rate
        ) / cfg.batch_size
        value = float(loss.detach())
        _check_finite(value, "distortion loss", step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "distortion": value, "nq_active": nq})
        if step % 50 == 0 or step == 1:
            log.info("stage1 step %d distortion %.4f (nq=%d)", step, value, nq)
    snapshot = json.dumps(
        {"stage": 1, "model": asdict(model_cfg), "quantizer": asdict(quant_cfg),
         "train": asdict(cfg), "mix": asdict(mix)},
        default=repr, sort_keys=True,
    )
    ckpt = Checkpoint(
        stage=1,
        model_config=model_cfg,
        quantizer_config=quant_cfg,
        encoder_state=encoder.state_dict(),
        quantizer_state=quantizer.state_dict(),
        decoder_distortion_state=decoder.state_dict(),
        decoder_perceptual_state=None,
        discriminator_state=None,
        step=cfg.steps,
        digests={
            "encoder": parameter_digest(encoder),
            "quantizer": parameter_digest(quantizer),
            "decoder_distortion": parameter_digest(decoder),
        },
        config_snapshot=snapshot,
    )
    return ckpt, history


def train_stage2(stage1_ckpt: Checkpoint, corpus: LoadedCorpus, cfg: StageTwoConfig,
                 mix: NoiseMixSpec | None = None,
                 disc_cfg: DiscriminatorSetConfig | None = None,
                 spectral_cfg: SpectralLossConfig | None = None
                 ) -> tuple[Checkpoint, list[dict]]:
    """Adversarial training of a new perceptual decoder over the frozen
    stage-1 encoder and quantizer."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    if stage1_ckpt.stage < 1:
        raise ValueError("stage-1 checkpoint required")
    mix = mix or NoiseMixSpec()
    spectral_cfg = spectral_cfg or SpectralLossConfig()
    model_cfg = stage1_ckpt.model_config
    quant_cfg = stage1_ckpt.quantizer_config
    torch.manual_seed(cfg.seed)
    encoder = stage1_ckpt.build_encoder()
    encoder.requires_grad_(False)
    quantizer = stage1_ckpt.build_quantizer()
    decoder_perceptual = Decoder(model_cfg)
    if cfg.warm_start:
        decoder_perceptual.load_state_dict(stage1_ckpt.decoder_distortion_state)
    discs = DiscriminatorSet(disc_cfg)
    frozen_encoder_digest = parameter_digest(encoder)
    frozen_quantizer_digest = parameter_digest(quantizer)
    if frozen_encoder_digest != stage1_ckpt.digests["encoder"]:
        raise FrozenParameterDriftError("encoder digest mismatch against stage-1 checkpoint")
    if frozen_quantizer_digest != stage1_ckpt.digests["quantizer"]:
        raise FrozenParameterDriftError("quantizer digest mismatch against stage-1 checkpoint")
    gen_opt = torch.optim.Adam(
        decoder_perceptual.parameters(), lr=cfg.gen_learning_rate, betas=cfg.adam_betas
    )
    disc_opt = torch.optim.Adam(
        discs.parameters(), lr=cfg.disc_learning_rate, betas=cfg.adam_betas
    )
    use_adversary = cfg.weights.lambda_adv > 0 or cfg.weights.lambda_feat > 0
    history: list[dict] = []
    total_stride = model_cfg.total_stride
    for step in range(1, cfg.steps + 1):
        rng = step_rng(cfg.seed, step)
        x, y = make_batch(corpus, mix, cfg.batch_size, cfg.noisy_fraction, rng)
        if x.shape[-1] % total_stride != 0:
            pad = total_stride - x.shape[-1] % total_stride
            x = torch.nn.functional.pad(x, (0, pad))
            y = torch.nn.functional.pad(y, (0, pad))
        nq = (
            sample_active_quantizers(quant_cfg.num_quantizers, rng)
            if cfg.quantizer_dropout else quant_cfg.num_quantizers
        )
        with torch.no_grad():
            z = encoder(x.unsqueeze(1)).transpose(1, 2)
            quantized, _ = quantizer.quantize(z, nq)
            latent = quantized.transpose(1, 2)
        # Generator step.
        xhat = decoder_perceptual(latent).squeeze(1)
        dis = multiscale_spectral_loss(
            y, xhat, spectral_cfg, sample_rate=model_cfg.sample_rate
        ) / cfg.batch_size
        if use_adversary:
            fake = discs(xhat)
            with torch.no_grad():
                real = discs(y)
            adv = generator_adv_loss(fake.logits)
            feat = feature_matching_loss(real.features, fake.features)
        else:
            adv = torch.zeros(())
            feat = torch.zeros(())
        total = generator_total_loss(adv, feat, dis, cfg.weights)
        gen_opt.zero_grad()
        total.backward()
        gen_opt.step()
        # Discriminator step on the updated generator output.
        with torch.no_grad():
            xhat_fixed = decoder_perceptual(latent).squeeze(1)
        real_out = discs(y)
        fake_out = discs(xhat_fixed)
        d_loss = discriminator_loss(real_out.logits, fake_out.logits)
        disc_opt.zero_grad()
        d_loss.backward()
        disc_opt.step()
        record = {
            "step": step,
            "adv": float(adv.detach()),
            "feat": float(feat.detach()),
            "distortion": float(dis.detach()),
            "total": float(total.detach()),
            "disc_loss": float(d_loss.detach()),
            "nq_active": nq,
        }
        for key in ("adv", "feat", "distortion", "total", "disc_loss"):
            _check_finite(record[key], key, step)
        if parameter_digest(encoder) != frozen_encoder_digest:
            raise FrozenParameterDriftError(f"encoder drifted at step {step}")
        if parameter_digest(quantizer) != frozen_quantizer_digest:
            raise FrozenParameterDriftError(f"quantizer drifted at step {step}")
        history.append(record)
        if step % 50 == 0 or step == 1:
            log.info(
                "stage2 step %d total %.4f (adv %.4f feat %.4f dis %.4f disc %.4f)",
                step, record["total"], record["adv"], record["feat"],
                record["distortion"], record["disc_loss"],
            )
    snapshot = json.dumps(
        {"stage": 2, "model": asdict(model_cfg), "quantizer": asdict(quant_cfg),
         "train": asdict(cfg), "mix": asdict(mix)},
        default=repr, sort_keys=True,
    )
    ckpt = Checkpoint(
        stage=2,
        model_config=model_cfg,
        quantizer_config=quant_cfg,
        encoder_state=encoder.state_dict(),
        quantizer_state=quantizer.state_dict(),
        decoder_distortion_state=stage1_ckpt.decoder_distortion_state,
        decoder_perceptual_state=decoder_perceptual.state_dict(),
        discriminator_state=discs.state_dict(),
        step=cfg.steps,
        digests={
            "encoder": frozen_encoder_digest,
            "quantizer": frozen_quantizer_digest,
            "decoder_distortion": parameter_digest(stage1_ckpt.decoder_distortion_state),
            "decoder_perceptual": parameter_digest(decoder_perceptual),
            "discriminators": parameter_digest(discs),
        },
        config_snapshot=snapshot,
    )
    return ckpt, history


def evaluate_distortion(encoder: Encoder, quantizer: ResidualVectorQuantizer,
                        decoder: Decoder, batches, nq: int,
                        spectral_cfg: SpectralLossConfig | None = None) -> float:
    """Mean multi-scale spectral loss of the codec over (input, target) batches."""
    spectral_cfg = spectral_cfg or SpectralLossConfig()
    total = 0.0
    count = 0
    with torch.no_grad():
        for x, y in batches:
            z = encoder(x.unsqueeze(1)).transpose(1, 2)
            quantized, _ = quantizer.quantize(z, nq)
            xhat = decoder(quantized.transpose(1, 2)).squeeze(1)
            loss = multiscale_spectral_loss(
                y, xhat, spectral_cfg, sample_rate=encoder.cfg.sample_rate
            )
            total += float(loss) / x.shape[0]
            count += 1
    return total / max(count, 1)


def _state_to_plain(state: dict | None):
    if state is None:
        return None
    return {k: v.clone() if isinstance(v, torch.Tensor) else v for k, v in state.items()}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "stage": ckpt.stage,
        "model_config": asdict(ckpt.model_config),
        "quantizer_config": asdict(ckpt.quantizer_config),
        "encoder_state": ckpt.encoder_state,
        "quantizer_state": ckpt.quantizer_state,
        "decoder_distortion_state": ckpt.decoder_distortion_state,
        "decoder_perceptual_state": ckpt.decoder_perceptual_state,
        "discriminator_state": ckpt.discriminator_state,
        "step": ckpt.step,
        "digests": ckpt.digests,
        "config_snapshot": ckpt.config_snapshot,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Checkpoint:
    """Load a checkpoint and verify every stored digest against its contents."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {payload.get('format_version')}"
        )
    ckpt = Checkpoint(
        stage=payload["stage"],
        model_config=ModelConfig(**payload["model_config"]),
        quantizer_config=QuantizerConfig(**payload["quantizer_config"]),
        encoder_state=payload["encoder_state"],
        quantizer_state=payload["quantizer_state"],
        decoder_distortion_state=payload["decoder_distortion_state"],
        decoder_perceptual_state=payload["decoder_perceptual_state"],
        discriminator_state=payload["discriminator_state"],
        step=payload["step"],
        digests=payload["digests"],
        config_snapshot=payload["config_snapshot"],
    )
    checks = {
        "encoder": ckpt.encoder_state,
        "quantizer": ckpt.quantizer_state,
        "decoder_distortion": ckpt.decoder_distortion_state,
        "decoder_perceptual": ckpt.decoder_perceptual_state,
        "discriminators": ckpt.discriminator_state,
    }
    for name, state in checks.items():
        if name in ckpt.digests and state is not None:
            if parameter_digest(state) != ckpt.digests[name]:
                raise CheckpointError(f"digest mismatch for {name}: checkpoint is corrupt")
    return ckpt
