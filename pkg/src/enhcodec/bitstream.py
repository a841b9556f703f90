"""Bit-exact codec bitstream format.

Layout (little-endian integers):

    offset  size  field
    0       4     magic "SES1"
    4       1     version (currently 1)
    5       4     sample_rate (u32)
    9       2     hop, i.e. samples per latent frame (u16)
    11      1     nq_used (u8)
    12      1     bits_per_index (u8)
    13      4     num_frames (u32)
    17      ...   payload

The payload packs the code matrix most-significant-bit first, frame-major
then stage-major, zero-padded to a byte boundary. Bit-rate accounting counts
payload bits only (the header is excluded).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SES1"
VERSION = 1
_HEADER = struct.Struct("<4sBIHBBI")
HEADER_SIZE = _HEADER.size


class BitstreamError(ValueError):
    """Malformed bitstream (bad magic/version, truncation, or dirty padding)."""


@dataclass
class BitstreamHeader:
    sample_rate: int
    hop: int
    nq_used: int
    bits_per_index: int
    num_frames: int

    @property
    def payload_bits(self) -> int:
        return self.num_frames * self.nq_used * self.bits_per_index

    @property
    def payload_bytes(self) -> int:
        return (self.payload_bits + 7) // 8


def pack_codes(codes: np.ndarray, bits_per_index: int, sample_rate: int, hop: int) -> bytes:
    """Serialize a (frames, nq) integer code matrix into a bitstream."""
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError("codes must be 2-D (frames x nq)")
    frames, nq = codes.shape
    if not 1 <= bits_per_index <= 32:
        raise ValueError("bits_per_index must be in [1, 32]")
    if frames > 0 and nq > 0:
        if codes.min() < 0 or codes.max() >= (1 << bits_per_index):
            raise ValueError(
                f"code index out of range for {bits_per_index}-bit packing (max {codes.max()})"
            )
    header = _HEADER.pack(MAGIC, VERSION, sample_rate, hop, nq, bits_per_index, frames)
    flat = codes.astype(np.int64).reshape(-1)
    shifts = np.arange(bits_per_index - 1, -1, -1)
    bits = ((flat[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return header + np.packbits(bits).tobytes()


def unpack_codes(data: bytes, strict: bool = True) -> tuple[np.ndarray, BitstreamHeader]:
    """Parse a bitstream back into its code matrix and header.

    Strict mode rejects nonzero padding bits (corruption guard); lenient mode
    ignores them.
    """
    if len(data) < HEADER_SIZE:
        raise BitstreamError(f"truncated header: {len(data)} bytes < {HEADER_SIZE}")
    magic, version, sample_rate, hop, nq, bits_per_index, frames = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}")
    header = BitstreamHeader(sample_rate, hop, nq, bits_per_index, frames)
    payload = data[HEADER_SIZE:]
    if len(payload) != header.payload_bytes:
        raise BitstreamError(
            f"payload has {len(payload) * 8} bits, expected {header.payload_bits} "
            f"({header.payload_bytes} bytes, got {len(payload)})"
        )
    if header.payload_bits == 0:
        return np.zeros((frames, nq), dtype=np.int64), header
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    used, trailing = bits[: header.payload_bits], bits[header.payload_bits :]
    if strict and np.any(trailing != 0):
        raise BitstreamError("nonzero padding bits (strict mode)")
    shifts = np.arange(bits_per_index - 1, -1, -1)
    values = (used.reshape(-1, bits_per_index).astype(np.int64) << shifts).sum(axis=1)
    return values.reshape(frames, nq), header
