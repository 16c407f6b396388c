"""Bit-exact byte-wise range coder with 16-bit quantized CDFs.

Integer-only 32-bit state machine (carry-less renormalization), so output
is identical across platforms for identical symbols and CDFs. The CDF
quantizer is a pure function shared by encoder and decoder, which removes
any train/inference drift.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

PRECISION = 16
TOTAL = 1 << PRECISION
TOP = 1 << 24
BOTTOM = 1 << 16
MASK = 0xFFFFFFFF

MAGIC = b"GWN1"


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_length: int

    def __post_init__(self):
        if self.bit_length > 8 * len(self.data):
            raise ValidationError("bit_length exceeds the stored bytes")


def quantize_cdf(pmf: np.ndarray) -> np.ndarray:
    """Quantize a pmf to a strictly increasing 16-bit CDF.

    Floors to the 16-bit grid, then repairs zero-mass bins by stealing from
    the largest bin; every symbol keeps frequency >= 1 and the total is
    exactly 2**16.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValidationError("pmf must be a non-empty 1-D array")
    if np.any(p < 0) or p.sum() <= 0:
        raise ValidationError("pmf entries must be non-negative with positive mass")
    if p.size > TOTAL // 2:
        raise ValidationError(f"alphabet of {p.size} symbols exceeds CDF precision")
    p = p / p.sum()
    freq = np.floor(p * TOTAL).astype(np.int64)
    for idx in np.nonzero(freq == 0)[0]:
        donor = int(np.argmax(freq))
        freq[donor] -= 1
        freq[idx] = 1
        if freq[donor] < 1:
            raise NumericalError("cannot repair zero-mass bins at this precision")
    leftover = TOTAL - int(freq.sum())
    freq[int(np.argmax(freq))] += leftover
    if freq.min() < 1:
        raise NumericalError("cannot repair zero-mass bins at this precision")
    cdf = np.zeros(p.size + 1, dtype=np.int64)
    np.cumsum(freq, out=cdf[1:])
    return cdf


def _cdf_provider(cdfs, n: int) -> Callable[[int], np.ndarray]:
    if callable(cdfs):
        return cdfs
    if isinstance(cdfs, np.ndarray) and cdfs.ndim == 1:
        return lambda _i: cdfs
    if isinstance(cdfs, np.ndarray) and cdfs.ndim == 2:
        if cdfs.shape[0] != n:
            raise ValidationError(f"need {n} per-symbol CDFs, got {cdfs.shape[0]}")
        return lambda i: cdfs[i]
    if isinstance(cdfs, Sequence):
        if len(cdfs) != n:
            raise ValidationError(f"need {n} per-symbol CDFs, got {len(cdfs)}")
        return lambda i: cdfs[i]
    raise ValidationError("cdfs must be an array, a sequence, or a provider callable")


def _check_cdf(cdf: np.ndarray) -> None:
    if cdf[0] != 0 or cdf[-1] != TOTAL:
        raise ValidationError("CDF must start at 0 and end at 2**16")
    if np.any(np.diff(cdf) < 1):
        raise ValidationError("CDF must be strictly increasing (every symbol mass >= 1)")


def encode(symbols: Sequence[int], cdfs) -> Bitstream:
    """Range-encode integer symbols under per-symbol quantized CDFs."""
    syms = [int(s) for s in symbols]
    provider = _cdf_provider(cdfs, len(syms))
    low = 0
    rng = MASK
    out = bytearray()
    for i, s in enumerate(syms):
        cdf = provider(i)
        if not 0 <= s < len(cdf) - 1:
            raise ValidationError(
                f"symbol {s} at position {i} lies outside the CDF support "
                f"[0, {len(cdf) - 1})"
            )
        if i == 0:
            _check_cdf(np.asarray(cdf))
        r = rng // TOTAL
        low += int(cdf[s]) * r
        rng = (int(cdf[s + 1]) - int(cdf[s])) * r
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOTTOM:
                rng = -low & (BOTTOM - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
    for _ in range(4):
        out.append((low >> 24) & 0xFF)
        low = (low << 8) & MASK
    return Bitstream(bytes(out), 8 * len(out))


def decode(bs: Bitstream, cdfs, n: int) -> list[int]:
    """Exact inverse of :func:`encode` under the same CDF sequence."""
    if n < 0:
        raise ValidationError("symbol count must be non-negative")
    if n == 0:
        return []
    provider = _cdf_provider(cdfs, n)
    data = bs.data
    pos = 0

    def read_byte() -> int:
        nonlocal pos
        if pos >= len(data):
            raise NumericalError(
                f"truncated bitstream: needed byte {pos}, have {len(data)}"
            )
        b = data[pos]
        pos += 1
        return b

    low = 0
    rng = MASK
    code = 0
    for _ in range(4):
        code = ((code << 8) | read_byte()) & MASK
    out = []
    for i in range(n):
        cdf = np.asarray(provider(i))
        r = rng // TOTAL
        value = (code - low) // r
        if value >= TOTAL:
            raise NumericalError("corrupt bitstream: cumulative value out of range")
        s = int(np.searchsorted(cdf, value, side="right")) - 1
        s = min(max(s, 0), len(cdf) - 2)
        out.append(s)
        low += int(cdf[s]) * r
        rng = (int(cdf[s + 1]) - int(cdf[s])) * r
        while True:
            if (low ^ (low + rng)) < TOP:
                pass
            elif rng < BOTTOM:
                rng = -low & (BOTTOM - 1)
            else:
                break
            code = ((code << 8) | read_byte()) & MASK
            low = (low << 8) & MASK
            rng = (rng << 8) & MASK
    return out


# --- container ------------------------------------------------------------------

def write_container(channels: Sequence[tuple[int, bytes]]) -> bytes:
    """Pack per-channel payloads: magic, then (count, length, payload) each."""
    blob = bytearray(MAGIC)
    for count, payload in channels:
        blob.extend(struct.pack("<I", count))
        blob.extend(struct.pack("<I", len(payload)))
        blob.extend(payload)
    return bytes(blob)


def read_container(blob: bytes, n_channels: int = 3) -> list[tuple[int, bytes]]:
    if blob[:4] != MAGIC:
        raise ValidationError(f"bad container magic {blob[:4]!r}, expected {MAGIC!r}")
    pos = 4
    channels = []
    for _ in range(n_channels):
        if pos + 8 > len(blob):
            raise ValidationError("container truncated in channel header")
        count, length = struct.unpack_from("<II", blob, pos)
        pos += 8
        if pos + length > len(blob):
            raise ValidationError("container truncated in channel payload")
        channels.append((count, blob[pos : pos + length]))
        pos += length
    return channels
