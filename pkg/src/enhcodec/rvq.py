"""Residual vector quantizer with EMA codebook learning.

A cascade of codebooks quantizes successive residuals: stage k picks the
codeword nearest (squared L2, ties to the lowest index) to the residual left
by stages 0..k-1, and the quantized latent is the sum of the chosen
codewords. Gradients pass straight through to the input latents.

Codebooks are learned with exponential moving averages of assignment counts
and residual sums; codewords whose EMA count decays below a threshold are
re-seeded from batch residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

EMA_CLAMP = 1e-7
DEAD_CODEWORD_THRESHOLD = 1e-3
_CHUNK = 256


@dataclass
class QuantizerConfig:
    num_quantizers: int = 24
    codebook_size: int = 1024
    ema_decay: float = 0.99
    dropout_enabled: bool = True

    def __post_init__(self):
        if self.num_quantizers < 1:
            raise ValueError("num_quantizers must be >= 1")
        n = self.codebook_size
        if n < 2 or n & (n - 1) != 0:
            raise ValueError("codebook_size must be a power of two >= 2 (for bit packing)")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in (0, 1)")

    @property
    def bits_per_index(self) -> int:
        return int(math.log2(self.codebook_size))


def bitrate(nq_used: int, codebook_size: int, frames_per_second: float) -> float:
    """Payload bit-rate in bits/s: nq_used * S * log2(codebook_size)."""
    if nq_used < 1 or frames_per_second <= 0 or codebook_size < 2:
        raise ValueError("nq_used >= 1, codebook_size >= 2, frames_per_second > 0 required")
    return nq_used * frames_per_second * math.log2(codebook_size)


def _nearest(residual: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the nearest codeword per row, scanning codewords in chunks so
    tie-breaking matches a sequential linear scan (lowest index wins)."""
    n = codebook.shape[0]
    best_d = None
    best_i = None
    for start in range(0, n, _CHUNK):
        chunk = codebook[start : start + _CHUNK]
        d = (residual.unsqueeze(1) - chunk.unsqueeze(0)).pow(2).sum(-1)
        min_d, min_i = d.min(dim=1)
        if best_d is None:
            best_d, best_i = min_d, start + min_i
        else:
            better = min_d < best_d
            best_i = torch.where(better, start + min_i, best_i)
            best_d = torch.where(better, min_d, best_d)
    return best_i


class ResidualVectorQuantizer(nn.Module):
    """Cascaded vector quantizer over (..., latent_dim) inputs."""

    def __init__(self, cfg: QuantizerConfig, latent_dim: int):
        super().__init__()
        self.cfg = cfg
        self.latent_dim = latent_dim
        nq, n = cfg.num_quantizers, cfg.codebook_size
        init = torch.randn(nq, n, latent_dim) * 0.1
        self.register_buffer("codebooks", init)
        self.register_buffer("ema_counts", torch.ones(nq, n))
        self.register_buffer("ema_sums", init.clone())

    def quantize(self, z: torch.Tensor, nq_active: int, return_residuals: bool = False):
        """Greedy residual quantization with nq_active stages.

        Returns (quantized, codes) shaped like z and (..., nq_active); with
        return_residuals=True also returns the per-stage residual inputs
        (list of flat (rows, latent_dim) tensors) for EMA updates.
        """
        if not 1 <= nq_active <= self.cfg.num_quantizers:
            raise ValueError(
                f"nq_active must be in [1, {self.cfg.num_quantizers}], got {nq_active}"
            )
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent dim mismatch: {z.shape[-1]} != {self.latent_dim}")
        lead = z.shape[:-1]
        with torch.no_grad():
            residual = z.detach().reshape(-1, self.latent_dim).clone()
            quantized = torch.zeros_like(residual)
            codes = []
            residual_inputs = []
            for k in range(nq_active):
                if return_residuals:
                    residual_inputs.append(residual.clone())
                idx = _nearest(residual, self.codebooks[k])
                chosen = self.codebooks[k][idx]
                quantized = quantized + chosen
                residual = residual - chosen
                codes.append(idx)
        q = quantized.reshape(z.shape)
        code_mat = torch.stack(codes, dim=-1).reshape(*lead, nq_active)
        if z.requires_grad:
            q = z + (q - z).detach()
        if return_residuals:
            return q, code_mat, residual_inputs
        return q, code_mat

    def dequantize(self, codes: torch.Tensor) -> torch.Tensor:
        """Sum of referenced codewords per frame; dequantizing the first k
        columns gives the k-stage reconstruction."""
        if codes.shape[-1] < 1 or codes.shape[-1] > self.cfg.num_quantizers:
            raise ValueError("codes must have between 1 and num_quantizers stages")
        if codes.min() < 0 or codes.max() >= self.cfg.codebook_size:
            raise ValueError("code index out of range")
        flat = codes.reshape(-1, codes.shape[-1])
        out = torch.zeros(flat.shape[0], self.latent_dim, dtype=self.codebooks.dtype)
        for k in range(flat.shape[-1]):
            out = out + self.codebooks[k][flat[:, k]]
        return out.reshape(*codes.shape[:-1], self.latent_dim)

    @torch.no_grad()
    def ema_update(self, codes: torch.Tensor, residual_inputs, generator=None,
                   decay: float | None = None) -> None:
        """EMA update of counts/sums from a batch of assignments; codewords
        with a positive batch count are recomputed as sums / max(counts, eps),
        unassigned codewords stay bit-identical. Codewords whose EMA count
        fell below the dead threshold are re-seeded from batch residuals."""
        decay = self.cfg.ema_decay if decay is None else decay
        if not 0.0 <= decay < 1.0:
            raise ValueError("decay must be in [0, 1)")
        n = self.cfg.codebook_size
        flat_codes = codes.reshape(-1, codes.shape[-1])
        for k in range(flat_codes.shape[-1]):
            idx = flat_codes[:, k]
            r = residual_inputs[k].reshape(-1, self.latent_dim)
            batch_counts = torch.bincount(idx, minlength=n).to(self.ema_counts.dtype)
            batch_sums = torch.zeros_like(self.ema_sums[k]).index_add_(0, idx, r)
            self.ema_counts[k] = decay * self.ema_counts[k] + (1 - decay) * batch_counts
            self.ema_sums[k] = decay * self.ema_sums[k] + (1 - decay) * batch_sums
            touched = batch_counts > 0
            denom = self.ema_counts[k].clamp(min=EMA_CLAMP).unsqueeze(1)
            updated = self.ema_sums[k] / denom
            self.codebooks[k][touched] = updated[touched]
            dead = self.ema_counts[k] < DEAD_CODEWORD_THRESHOLD
            if dead.any():
                pick = torch.randint(r.shape[0], (int(dead.sum()),), generator=generator)
                seeds = r[pick]
                self.codebooks[k][dead] = seeds
                self.ema_sums[k][dead] = seeds
                self.ema_counts[k][dead] = 1.0

    @torch.no_grad()
    def kmeans_init(self, first_batch: torch.Tensor, generator=None) -> None:
        """Initialize every stage by k-means++ seeding: stage 0 on the batch,
        later stages on the residuals left by earlier stages. Requires at
        least codebook_size vectors."""
        batch = first_batch.reshape(-1, self.latent_dim)
        if batch.shape[0] < self.cfg.codebook_size:
            raise ValueError(
                f"init batch has {batch.shape[0]} vectors; need >= {self.cfg.codebook_size}"
            )
        self._seed_stages(batch, generator, kmeans=True)

    @torch.no_grad()
    def initialize_from_batch(self, first_batch: torch.Tensor, generator=None) -> None:
        """Codebook init used by the trainer: k-means++ when the batch is
        large enough, otherwise sampling with replacement plus small jitter."""
        batch = first_batch.reshape(-1, self.latent_dim)
        self._seed_stages(batch, generator, kmeans=batch.shape[0] >= self.cfg.codebook_size)

    def _seed_stages(self, batch: torch.Tensor, generator, kmeans: bool) -> None:
        residual = batch.clone()
        n = self.cfg.codebook_size
        for k in range(self.cfg.num_quantizers):
            if kmeans:
                centers = _kmeans_pp(residual, n, generator)
            else:
                pick = torch.randint(residual.shape[0], (n,), generator=generator)
                jitter = torch.randn(n, self.latent_dim, generator=generator)
                scale = residual.std().clamp(min=1e-5) * 1e-3
                centers = residual[pick] + scale * jitter
            self.codebooks[k] = centers
            self.ema_sums[k] = centers.clone()
            self.ema_counts[k] = torch.ones(n)
            idx = _nearest(residual, centers)
            residual = residual - centers[idx]


def _kmeans_pp(points: torch.Tensor, n_centers: int, generator=None) -> torch.Tensor:
    """k-means++ seeding: first center uniform, each next drawn with
    probability proportional to squared distance from the chosen set."""
    m = points.shape[0]
    first = int(torch.randint(m, (1,), generator=generator))
    chosen = [first]
    d2 = (points - points[first]).pow(2).sum(-1)
    for _ in range(n_centers - 1):
        total = d2.sum()
        if total <= 0:
            probs = torch.full((m,), 1.0 / m)
        else:
            probs = d2 / total
        nxt = int(torch.multinomial(probs, 1, generator=generator))
        chosen.append(nxt)
        d2 = torch.minimum(d2, (points - points[nxt]).pow(2).sum(-1))
    return points[chosen].clone()
