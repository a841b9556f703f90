"""Command-line interface.

Subcommands: synth-data, train-stage1, train-stage2, encode, decode, eval,
verify-theory. Every command accepts --seed. Exit codes: 0 success, 1 usage
error, 2 verification failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import bitstream as bs
from . import data as data_mod
from . import rdp_oracle as oracle
from .losses import LossWeights, SpectralLossConfig, multiscale_spectral_loss, si_snr
from .model import ModelConfig, decode as decode_latents, encode as encode_waveform, output_frames
from .rvq import QuantizerConfig
from .signal import Waveform, load_wav, save_wav
from .trainer import (
    StageOneConfig,
    StageTwoConfig,
    load_checkpoint,
    save_checkpoint,
    train_stage1,
    train_stage2,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFICATION = 2
EXIT_RUNTIME = 3


class UsageError(ValueError):
    """Invalid command-line inputs (maps to exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="enhcodec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic WAV corpus and manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-clips", type=int, default=64)
    p.add_argument("--duration", type=float, default=1.0, help="clip length in seconds")
    p.add_argument("--sample-rate", type=int, default=24000)
    p.add_argument("--noisy-fraction", type=float, default=0.5,
                   help="fraction of manifest entries paired with a noise clip")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-stage1", help="distortion-only training of encoder+quantizer+decoder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--base-channels", type=int, default=8)
    p.add_argument("--latent-dim", type=int, default=256)
    p.add_argument("--num-quantizers", type=int, default=24)
    p.add_argument("--codebook-size", type=int, default=1024)
    p.add_argument("--sample-rate", type=int, default=24000)
    p.add_argument("--no-quantizer-dropout", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-stage2", help="adversarial training of the perceptual decoder")
    p.add_argument("--checkpoint", required=True, help="stage-1 checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--gen-learning-rate", type=float, default=1e-4)
    p.add_argument("--disc-learning-rate", type=float, default=1e-4)
    p.add_argument("--lambda-adv", type=float, default=1.0)
    p.add_argument("--lambda-feat", type=float, default=100.0)
    p.add_argument("--lambda-dis", type=float, default=1.0)
    p.add_argument("--warm-start", action="store_true",
                   help="initialize the perceptual decoder from the stage-1 decoder")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("encode", help="encode a WAV file into a bitstream")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nq", type=int, default=None,
                   help="number of active quantizer stages (default: all)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("decode", help="decode a bitstream into a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--decoder", choices=("distortion", "perceptual"), default="distortion")
    p.add_argument("--lenient", action="store_true", help="ignore nonzero padding bits")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="report SI-SNR and spectral distance between two WAVs")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("verify-theory", help="exhaustive optimality/decomposition verification sweep")
    p.add_argument("--max-source-size", type=int, default=3)
    p.add_argument("--max-noise-size", type=int, default=3)
    p.add_argument("--max-codewords", type=int, default=3)
    p.add_argument("--pmf-step", type=float, default=0.25)
    p.add_argument("--instances", default=None, help="JSON instance file instead of the grid")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--inject-fault", action="store_true",
                   help="perturb the decomposition check to exercise the failure path")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_synth_data(args) -> int:
    out_dir = Path(args.out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noise").mkdir(parents=True, exist_ok=True)
    clean, noise = data_mod.synth_corpus(args.n_clips, args.duration, args.sample_rate, args.seed)
    entries = []
    n_noisy = int(round(args.noisy_fraction * args.n_clips))
    for i, clip in enumerate(clean):
        clean_path = out_dir / "clean" / f"{i:04d}.wav"
        save_wav(clip, clean_path)
        noise_path = None
        if i < n_noisy:
            noise_path = out_dir / "noise" / f"{i:04d}.wav"
            save_wav(noise[i], noise_path)
        entries.append(data_mod.ManifestEntry(clean_path, noise_path, clip.duration, args.seed + i))
    manifest_path = out_dir / "manifest.tsv"
    data_mod.save_manifest(manifest_path, entries)
    print(f"manifest={manifest_path}")
    print(f"clips={len(entries)}")
    print(f"noisy_clips={n_noisy}")
    return EXIT_OK


def _load_corpus(manifest_path, mix: data_mod.NoiseMixSpec) -> data_mod.LoadedCorpus:
    manifest = data_mod.load_manifest(manifest_path)
    manifest.validate_durations(mix.crop_s)
    return data_mod.LoadedCorpus.from_manifest(manifest)


def _cmd_train_stage1(args) -> int:
    mix = data_mod.NoiseMixSpec()
    corpus = _load_corpus(args.manifest, mix)
    model_cfg = ModelConfig(
        base_channels=args.base_channels,
        latent_dim=args.latent_dim,
        sample_rate=args.sample_rate,
    )
    quant_cfg = QuantizerConfig(
        num_quantizers=args.num_quantizers,
        codebook_size=args.codebook_size,
        dropout_enabled=not args.no_quantizer_dropout,
    )
    cfg = StageOneConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        quantizer_dropout=not args.no_quantizer_dropout,
    )
    ckpt, history = train_stage1(corpus, model_cfg, quant_cfg, cfg, mix)
    save_checkpoint(ckpt, args.out)
    print(f"checkpoint={args.out}")
    print(f"steps={len(history)}")
    print(f"initial_distortion={history[0]['distortion']:.6f}")
    print(f"final_distortion={history[-1]['distortion']:.6f}")
    print(f"encoder_digest={ckpt.digests['encoder']}")
    return EXIT_OK


def _cmd_train_stage2(args) -> int:
    mix = data_mod.NoiseMixSpec()
    corpus = _load_corpus(args.manifest, mix)
    stage1 = load_checkpoint(args.checkpoint)
    cfg = StageTwoConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        gen_learning_rate=args.gen_learning_rate,
        disc_learning_rate=args.disc_learning_rate,
        weights=LossWeights(args.lambda_adv, args.lambda_feat, args.lambda_dis),
        seed=args.seed,
        warm_start=args.warm_start,
    )
    ckpt, history = train_stage2(stage1, corpus, cfg, mix)
    save_checkpoint(ckpt, args.out)
    print(f"checkpoint={args.out}")
    print(f"steps={len(history)}")
    print(f"final_total={history[-1]['total']:.6f}")
    print(f"final_disc_loss={history[-1]['disc_loss']:.6f}")
    print(f"encoder_digest={ckpt.digests['encoder']}")
    return EXIT_OK


def _cmd_encode(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    w = load_wav(args.input)
    if w.sample_rate != ckpt.model_config.sample_rate:
        raise UsageError(
            f"sample rate {w.sample_rate} does not match checkpoint "
            f"({ckpt.model_config.sample_rate})"
        )
    nq = args.nq if args.nq is not None else ckpt.quantizer_config.num_quantizers
    if not 1 <= nq <= ckpt.quantizer_config.num_quantizers:
        raise UsageError(
            f"--nq must be in [1, {ckpt.quantizer_config.num_quantizers}], got {nq}"
        )
    encoder = ckpt.build_encoder()
    quantizer = ckpt.build_quantizer()
    latents = encode_waveform(w, encoder)
    _, codes = quantizer.quantize(torch.as_tensor(latents), nq)
    stream = bs.pack_codes(
        codes.numpy(),
        ckpt.quantizer_config.bits_per_index,
        w.sample_rate,
        ckpt.model_config.total_stride,
    )
    Path(args.output).write_bytes(stream)
    payload_bits = codes.shape[0] * nq * ckpt.quantizer_config.bits_per_index
    seconds = len(w) / w.sample_rate
    print(f"frames={codes.shape[0]}")
    print(f"nq={nq}")
    print(f"payload_bits={payload_bits}")
    print(f"bitrate_bps={payload_bits / seconds:.1f}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    stream = Path(args.input).read_bytes()
    codes, header = bs.unpack_codes(stream, strict=not args.lenient)
    if header.sample_rate != ckpt.model_config.sample_rate:
        raise UsageError(
            f"bitstream sample rate {header.sample_rate} does not match checkpoint "
            f"({ckpt.model_config.sample_rate})"
        )
    if ckpt.stage < 2 and args.decoder == "perceptual":
        raise UsageError("perceptual decoder requested but checkpoint is stage 1 only")
    quantizer = ckpt.build_quantizer()
    decoder = ckpt.build_decoder(args.decoder)
    latents = quantizer.dequantize(torch.as_tensor(codes, dtype=torch.long))
    w = decode_latents(latents.numpy(), decoder, header.sample_rate)
    expected = header.num_frames * header.hop
    w = Waveform(w.samples[:expected], w.sample_rate)
    save_wav(w, args.output)
    print(f"samples={len(w)}")
    print(f"duration_s={len(w) / w.sample_rate:.3f}")
    print(f"decoder={args.decoder}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ref = load_wav(args.reference)
    test = load_wav(args.test)
    if ref.sample_rate != test.sample_rate:
        raise UsageError("sample rates differ between reference and test")
    hop = ModelConfig().total_stride
    if abs(len(ref) - len(test)) > hop:
        raise UsageError(
            f"length mismatch beyond one hop ({hop} samples): {len(ref)} vs {len(test)}"
        )
    n = min(len(ref), len(test))
    ref = Waveform(ref.samples[:n], ref.sample_rate)
    test = Waveform(test.samples[:n], test.sample_rate)
    snr = si_snr(ref, test)
    dist = float(multiscale_spectral_loss(ref, test, SpectralLossConfig()))
    print(f"si_snr_db={snr:.4f}")
    print(f"spectral_distance={dist:.6f}")
    print(f"samples={n}")
    return EXIT_OK


def _cmd_verify_theory(args) -> int:
    if args.instances:
        instances = oracle.load_instances(args.instances)
    else:
        instances = oracle.default_instance_grid(
            max_source_size=args.max_source_size,
            max_noise_size=args.max_noise_size,
            max_codewords=args.max_codewords,
            pmf_step=args.pmf_step,
        )
    fault = 1e-3 if args.inject_fault else 0.0
    result = oracle.run_verification_sweep(instances, fault_bias=fault)
    if args.report:
        oracle.write_report(result, args.report)
    print(oracle.format_summary(result))
    if not result.all_passed:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train-stage1": _cmd_train_stage1,
    "train-stage2": _cmd_train_stage2,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "verify-theory": _cmd_verify_theory,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    np.random.seed(args.seed % 2**32)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
