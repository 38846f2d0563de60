"""Classical bitcode pipeline: 1-D log-Gabor encoding and masked Hamming matching.

Selected rows of the normalized iris are filtered circularly along the
angular axis by a one-sided log-Gabor transfer function; the signs of the
real and imaginary response parts give two phase bits per sample.  Matching
is the fraction of differing bits among jointly valid positions, minimized
over circular column shifts to compensate eye rotation.

Shift convention: shifting a bitcode by +k moves its content toward larger
column indices (numpy.roll semantics), so if b equals a rotated by +k
columns, the best alignment of b against a is found at shift -k.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGNITUDE_FLOOR = 1e-4
# absolute guard for rows whose response is numerically zero everywhere
_ABS_FLOOR = 1e-12

BITCODE_MAGIC = b"IBIT"
BITCODE_VERSION = 1


class EmptyMaskError(ValueError):
    """Raised when two bitcodes share no comparable bits."""


@dataclass(frozen=True)
class LogGaborSpec:
    """1-D log-Gabor parameters: center wavelength (px), bandwidth ratio
    sigma/f0, and the row subsampling factor."""

    wavelength: float = 18.0
    sigma_ratio: float = 0.5
    row_step: int = 2

    def validate(self):
        if self.wavelength < 3:
            raise ValueError(f"wavelength must be >= 3 px, got {self.wavelength}")
        if not 0.0 < self.sigma_ratio < 1.0:
            raise ValueError(f"sigma ratio must be in (0, 1), got {self.sigma_ratio}")
        if self.row_step < 1:
            raise ValueError(f"row step must be positive, got {self.row_step}")


@dataclass
class Bitcode:
    """bits and mask are (H', 2*W') uint8 matrices; column 2j holds the real
    phase bit of sample j and column 2j+1 the imaginary one."""

    bits: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.bits.shape != self.mask.shape:
            raise ValueError(f"bits {self.bits.shape} and mask {self.mask.shape} disagree")

    @property
    def samples_per_row(self):
        return self.bits.shape[1] // 2


def log_gabor_transfer(width, spec: LogGaborSpec):
    """One-sided frequency response on an FFT grid of ``width`` samples.

    G(f) = exp(-(ln(f/f0))^2 / (2 ln(sigma/f0)^2)) for f = k/width,
    k = 1..width//2; G(0) = 0 (zero DC gain) and the negative-frequency
    half is zero, which makes the filtered signal complex-analytic.
    """
    spec.validate()
    transfer = np.zeros(width)
    f0 = 1.0 / spec.wavelength
    k = np.arange(1, width // 2 + 1)
    f = k / width
    transfer[1:width // 2 + 1] = np.exp(-np.log(f / f0) ** 2 / (2.0 * np.log(spec.sigma_ratio) ** 2))
    return transfer


def encode(img, mask=None, spec: LogGaborSpec = LogGaborSpec()):
    """Encode a normalized iris (H, W) into a Bitcode.

    Mask bits are cleared where the source mask is 0 or where the response
    magnitude falls under MAGNITUDE_FLOOR times the row's peak magnitude
    (sign bits of near-zero responses are noise).
    """
    spec.validate()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if mask is None:
        mask = np.ones(img.shape, dtype=np.uint8)
    else:
        mask = np.asarray(mask)
        if mask.shape != img.shape:
            raise ValueError(f"mask shape {mask.shape} != image shape {img.shape}")

    rows = img[::spec.row_step]
    row_mask = mask[::spec.row_step].astype(bool)
    transfer = log_gabor_transfer(img.shape[1], spec)
    response = np.fft.ifft(np.fft.fft(rows, axis=1) * transfer[None, :], axis=1)

    magnitude = np.abs(response)
    floor = np.maximum(MAGNITUDE_FLOOR * magnitude.max(axis=1, keepdims=True), _ABS_FLOOR)
    valid = (magnitude >= floor) & row_mask

    h, w = rows.shape
    bits = np.zeros((h, 2 * w), dtype=np.uint8)
    code_mask = np.zeros((h, 2 * w), dtype=np.uint8)
    bits[:, 0::2] = response.real > 0
    bits[:, 1::2] = response.imag > 0
    code_mask[:, 0::2] = valid
    code_mask[:, 1::2] = valid
    return Bitcode(bits, code_mask)


def masked_hamming(a: Bitcode, b: Bitcode):
    """Fraction of differing bits among positions valid in both codes."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"bitcode shapes disagree: {a.bits.shape} vs {b.bits.shape}")
    joint = (a.mask & b.mask).astype(bool)
    total = int(joint.sum())
    if total == 0:
        raise EmptyMaskError("no comparable bits: joint mask is empty")
    differ = int(((a.bits != b.bits) & joint).sum())
    return differ / total


def shift_bitcode(code: Bitcode, k):
    """Circularly shift by k sample columns (bit pairs move together)."""
    h, w2 = code.bits.shape
    bits = np.roll(code.bits.reshape(h, w2 // 2, 2), k, axis=1).reshape(h, w2)
    mask = np.roll(code.mask.reshape(h, w2 // 2, 2), k, axis=1).reshape(h, w2)
    return Bitcode(bits, mask)


def match_with_shifts(a: Bitcode, b: Bitcode, max_shift):
    """Minimum masked Hamming score over circular shifts of b in
    [-max_shift, +max_shift].  Ties prefer the smallest |shift|, then the
    negative one.  Returns (score, shift)."""
    if max_shift < 0:
        raise ValueError(f"max shift must be non-negative, got {max_shift}")
    if max_shift >= a.samples_per_row:
        raise ValueError(f"max shift {max_shift} must be smaller than width {a.samples_per_row}")
    shifts = [0]
    for s in range(1, max_shift + 1):
        shifts.extend((-s, s))
    best_score, best_shift = None, None
    empty = 0
    for s in shifts:
        try:
            score = masked_hamming(a, shift_bitcode(b, s))
        except EmptyMaskError:
            empty += 1
            continue
        if best_score is None or score < best_score:
            best_score, best_shift = score, s
    if best_score is None:
        raise EmptyMaskError(f"no comparable bits at any of the {empty} shifts")
    return best_score, best_shift


def decide(score, threshold):
    """Match iff score < threshold (strict)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return score < threshold


# ---------------------------------------------------------------- file I/O


def save_bitcode(code: Bitcode, path):
    """IBIT container: magic, u16 version, u32 H', u32 W', then the bit rows
    and mask rows packed little-endian-first into bytes."""
    h, w2 = code.bits.shape
    with open(path, "wb") as fh:
        fh.write(BITCODE_MAGIC)
        fh.write(struct.pack("<H", BITCODE_VERSION))
        fh.write(struct.pack("<II", h, w2 // 2))
        fh.write(np.packbits(code.bits, axis=1, bitorder="little").tobytes())
        fh.write(np.packbits(code.mask, axis=1, bitorder="little").tobytes())


def load_bitcode(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BITCODE_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != BITCODE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    h, w = struct.unpack_from("<II", raw, 6)
    w2 = 2 * w
    row_bytes = (w2 + 7) // 8
    off = 14
    expected = 2 * h * row_bytes
    if len(raw) - off != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(raw) - off}")

    def unpack(start):
        packed = np.frombuffer(raw, dtype=np.uint8, count=h * row_bytes, offset=start)
        rows = np.unpackbits(packed.reshape(h, row_bytes), axis=1, bitorder="little")
        return rows[:, :w2].copy()

    return Bitcode(unpack(off), unpack(off + h * row_bytes))
