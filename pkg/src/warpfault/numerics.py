"""Bit-exact scalar IEEE 754 arithmetic on binary16 and binary32 words.

Register contents are carried as raw bit patterns (plain Python ints) and all
arithmetic is done on integer significands, so every result is reproducible
bit-for-bit on any platform.  Two rounding modes are supported: round to
nearest, ties to even (the default for ordinary fused multiply-adds) and round
toward zero (used by the tensor-style 4x4 multiply-accumulate unit).

The scalar routines here are the reference semantics for the whole simulator.
`warpfault.kernels` provides NumPy fast paths that are property-tested against
this module.

Conventions:

* "word" means the raw encoding as an unsigned int (16 or 32 bits wide).
* binary16 values travel through 32-bit registers as packed pairs; the low
  half is the first element of the pair (little-endian within the register).
* Any NaN produced by an operation is the canonical quiet NaN of the format.
  NaN payloads survive only through plain register copies, never through
  arithmetic.
* Subnormals are fully supported; there is no flush-to-zero anywhere.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import ValidationError


class Precision(Enum):
    FP16 = "fp16"
    FP32 = "fp32"


class RoundingMode(Enum):
    NEAREST_EVEN = "nearest_even"
    TOWARD_ZERO = "toward_zero"


@dataclass(frozen=True)
class FloatFormat:
    """Width parameters of a binary interchange format."""

    exp_bits: int
    mant_bits: int

    @property
    def width(self) -> int:
        return 1 + self.exp_bits + self.mant_bits

    @property
    def bias(self) -> int:
        return (1 << (self.exp_bits - 1)) - 1

    @property
    def emin(self) -> int:
        """Unbiased exponent of the smallest normal number."""
        return 1 - self.bias

    @property
    def emax(self) -> int:
        """Unbiased exponent of the largest finite number."""
        return (1 << self.exp_bits) - 2 - self.bias

    @property
    def exp_field_max(self) -> int:
        return (1 << self.exp_bits) - 1

    @property
    def mant_mask(self) -> int:
        return (1 << self.mant_bits) - 1

    @property
    def sign_mask(self) -> int:
        return 1 << (self.width - 1)

    @property
    def word_mask(self) -> int:
        return (1 << self.width) - 1

    @property
    def quiet_bit(self) -> int:
        return 1 << (self.mant_bits - 1)

    @property
    def canonical_nan(self) -> int:
        return (self.exp_field_max << self.mant_bits) | self.quiet_bit

    @property
    def positive_inf(self) -> int:
        return self.exp_field_max << self.mant_bits

    @property
    def max_finite(self) -> int:
        """Magnitude bits of the largest finite value (sign 0)."""
        return ((self.exp_field_max - 1) << self.mant_bits) | self.mant_mask


FP16_FORMAT = FloatFormat(exp_bits=5, mant_bits=10)
FP32_FORMAT = FloatFormat(exp_bits=8, mant_bits=23)
_FP64_FORMAT = FloatFormat(exp_bits=11, mant_bits=52)

_FORMATS = {Precision.FP16: FP16_FORMAT, Precision.FP32: FP32_FORMAT}


def format_of(precision: Precision) -> FloatFormat:
    return _FORMATS[precision]


# Decoded value kinds.
_ZERO, _FINITE, _INF, _NAN = range(4)


def _decode(bits: int, fmt: FloatFormat) -> tuple[int, int, int, int]:
    """Split a word into (kind, sign, significand, exponent).

    For finite nonzero values the triple satisfies
    value == (-1)**sign * significand * 2**exponent with significand > 0.
    Subnormals come out denormalized (no implicit bit); that is fine because
    downstream math only cares about the exact product significand * 2**exp.
    """
    if bits < 0 or bits > fmt.word_mask:
        raise ValidationError(f"word 0x{bits:x} out of range for {fmt.width}-bit format")
    sign = (bits >> (fmt.width - 1)) & 1
    exp_field = (bits >> fmt.mant_bits) & fmt.exp_field_max
    frac = bits & fmt.mant_mask
    if exp_field == fmt.exp_field_max:
        return (_NAN if frac else _INF), sign, 0, 0
    if exp_field == 0:
        if frac == 0:
            return _ZERO, sign, 0, 0
        return _FINITE, sign, frac, fmt.emin - fmt.mant_bits
    return _FINITE, sign, frac | (1 << fmt.mant_bits), exp_field - fmt.bias - fmt.mant_bits


def _round_to_format(sign: int, m: int, e: int, fmt: FloatFormat, mode: RoundingMode) -> int:
    """Round the exact value (-1)**sign * m * 2**e (m > 0) into the format.

    Implements round-to-nearest-even and round-toward-zero, with gradual
    underflow and IEEE overflow behaviour (toward-zero overflows saturate at
    the largest finite value, nearest-even overflows go to infinity).
    """
    # Exponent the result LSB must sit at: normal numbers use their own
    # binade, anything below the normal range is quantized at the subnormal
    # step.
    msb_exp = e + m.bit_length() - 1
    lsb_exp = max(msb_exp, fmt.emin) - fmt.mant_bits
    shift = lsb_exp - e
    if shift <= 0:
        mant = m << (-shift)
    else:
        mant = m >> shift
        rem = m & ((1 << shift) - 1)
        if rem and mode is RoundingMode.NEAREST_EVEN:
            half = 1 << (shift - 1)
            if rem > half or (rem == half and (mant & 1)):
                mant += 1
    # A carry out of the significand lands on a power of two; renormalize.
    if mant.bit_length() > fmt.mant_bits + 1:
        mant >>= 1
        lsb_exp += 1
    if mant == 0:
        # Underflow to zero keeps the sign of the exact value.
        return sign << (fmt.width - 1)
    if mant >= (1 << fmt.mant_bits):  # normal
        biased = (lsb_exp + fmt.mant_bits) + fmt.bias
        if biased >= fmt.exp_field_max:
            if mode is RoundingMode.TOWARD_ZERO:
                return (sign << (fmt.width - 1)) | fmt.max_finite
            return (sign << (fmt.width - 1)) | fmt.positive_inf
        return (sign << (fmt.width - 1)) | (biased << fmt.mant_bits) | (mant & fmt.mant_mask)
    # Subnormal: exponent field 0, significand as-is.
    return (sign << (fmt.width - 1)) | mant


def _zero(sign: int, fmt: FloatFormat) -> int:
    return sign << (fmt.width - 1)


def _inf(sign: int, fmt: FloatFormat) -> int:
    return (sign << (fmt.width - 1)) | fmt.positive_inf


def fma(a: int, b: int, c: int, precision: Precision, rounding: RoundingMode) -> int:
    """Fused multiply-add on raw words: round(a * b + c) with one rounding.

    The product is formed exactly in integer arithmetic, added exactly to c,
    and rounded once into the target format.  Special values follow IEEE
    semantics; invalid operations (0 * inf, inf - inf) return the canonical
    quiet NaN.
    """
    fmt = format_of(precision)
    ka, sa, ma, ea = _decode(a, fmt)
    kb, sb, mb, eb = _decode(b, fmt)
    kc, sc, mc, ec = _decode(c, fmt)

    if ka == _NAN or kb == _NAN or kc == _NAN:
        return fmt.canonical_nan
    psign = sa ^ sb
    if ka == _INF or kb == _INF:
        if ka == _ZERO or kb == _ZERO:
            return fmt.canonical_nan
        if kc == _INF and sc != psign:
            return fmt.canonical_nan
        return _inf(psign, fmt)
    if kc == _INF:
        return _inf(sc, fmt)
    if ka == _ZERO or kb == _ZERO:
        if kc == _ZERO:
            # Exact zero + zero: keep the sign only when both agree.
            return _zero(psign if psign == sc else 0, fmt)
        return c
    # Finite nonzero product.
    mp = ma * mb
    ep = ea + eb
    if kc == _ZERO:
        return _round_to_format(psign, mp, ep, fmt, rounding)
    e0 = min(ep, ec)
    total = (mp << (ep - e0)) * (1 - 2 * psign) + (mc << (ec - e0)) * (1 - 2 * sc)
    if total == 0:
        # Exact cancellation yields +0 under both supported modes.
        return _zero(0, fmt)
    sign = 1 if total < 0 else 0
    return _round_to_format(sign, abs(total), e0, fmt, rounding)


_FP32_ONE = 0x3F800000
_FP16_ONE = 0x3C00


def add(a: int, b: int, precision: Precision, rounding: RoundingMode) -> int:
    """round(a + b) with a single rounding, on raw words."""
    one = _FP16_ONE if precision is Precision.FP16 else _FP32_ONE
    return fma(a, one, b, precision, rounding)


def pack_fp16_pair(lo: int, hi: int) -> int:
    """Pack two binary16 words into one 32-bit register word (lo in bits 0..15)."""
    if not (0 <= lo <= 0xFFFF and 0 <= hi <= 0xFFFF):
        raise ValidationError("fp16 halves must be 16-bit words")
    return (hi << 16) | lo


def unpack_fp16_pair(word: int) -> tuple[int, int]:
    """Split a 32-bit register word into its (lo, hi) binary16 halves."""
    if not 0 <= word <= 0xFFFFFFFF:
        raise ValidationError("register word must be 32-bit")
    return word & 0xFFFF, (word >> 16) & 0xFFFF


def flip_bits(word: int, bit_indices: Iterable[int]) -> int:
    """XOR the given bit positions of a 32-bit register word.

    Accepts one or two distinct positions (single / double upset).  Flipping
    the same set twice restores the original word.
    """
    idx = list(bit_indices)
    if not 1 <= len(idx) <= 2 or len(set(idx)) != len(idx):
        raise ValidationError(f"expected 1 or 2 distinct bit indices, got {idx}")
    if not 0 <= word <= 0xFFFFFFFF:
        raise ValidationError("register word must be 32-bit")
    mask = 0
    for i in idx:
        if not 0 <= i <= 31:
            raise ValidationError(f"bit index {i} outside [0, 31]")
        mask |= 1 << i
    return word ^ mask


def f16_to_f32(h: int) -> int:
    """Widen a binary16 word to binary32.  Exact for every input."""
    kind, sign, m, e = _decode(h, FP16_FORMAT)
    if kind == _NAN:
        return FP32_FORMAT.canonical_nan
    if kind == _INF:
        return _inf(sign, FP32_FORMAT)
    if kind == _ZERO:
        return _zero(sign, FP32_FORMAT)
    return _round_to_format(sign, m, e, FP32_FORMAT, RoundingMode.TOWARD_ZERO)


def f32_to_f16(w: int, rounding: RoundingMode) -> int:
    """Narrow a binary32 word to binary16 under the given rounding mode."""
    kind, sign, m, e = _decode(w, FP32_FORMAT)
    if kind == _NAN:
        return FP16_FORMAT.canonical_nan
    if kind == _INF:
        return _inf(sign, FP16_FORMAT)
    if kind == _ZERO:
        return _zero(sign, FP16_FORMAT)
    return _round_to_format(sign, m, e, FP16_FORMAT, rounding)


def word_from_float(x: float, precision: Precision, rounding: RoundingMode = RoundingMode.NEAREST_EVEN) -> int:
    """Round a Python float (binary64) into a target-format word."""
    bits64 = struct.unpack("<Q", struct.pack("<d", x))[0]
    fmt = format_of(precision)
    kind, sign, m, e = _decode(bits64, _FP64_FORMAT)
    if kind == _NAN:
        return fmt.canonical_nan
    if kind == _INF:
        return _inf(sign, fmt)
    if kind == _ZERO:
        return _zero(sign, fmt)
    return _round_to_format(sign, m, e, fmt, rounding)


def float_from_word(w: int, precision: Precision) -> float:
    """Exact value of a word as a Python float (every fp16/fp32 fits in binary64)."""
    fmt = format_of(precision)
    kind, sign, m, e = _decode(w, fmt)
    if kind == _NAN:
        return math.nan
    if kind == _INF:
        return -math.inf if sign else math.inf
    if kind == _ZERO:
        return -0.0 if sign else 0.0
    return (-1.0 if sign else 1.0) * math.ldexp(m, e)


def is_nan_word(w: int, precision: Precision) -> bool:
    return _decode(w, format_of(precision))[0] == _NAN


@dataclass(frozen=True)
class Tile4x4:
    """A 4x4 tile of raw words in row-major order."""

    words: tuple[int, ...]
    precision: Precision

    def __post_init__(self) -> None:
        if len(self.words) != 16:
            raise ValidationError("Tile4x4 needs exactly 16 words")
        mask = format_of(self.precision).word_mask
        for w in self.words:
            if not 0 <= w <= mask:
                raise ValidationError(f"word 0x{w:x} out of range for {self.precision.value}")

    def at(self, row: int, col: int) -> int:
        return self.words[row * 4 + col]

    @classmethod
    def from_floats(cls, values: Sequence[float], precision: Precision) -> "Tile4x4":
        return cls(tuple(word_from_float(v, precision) for v in values), precision)

    def to_floats(self) -> list[float]:
        return [float_from_word(w, self.precision) for w in self.words]


def mma_4x4(a: Tile4x4, b: Tile4x4, c: Tile4x4, out_precision: Precision) -> Tile4x4:
    """One matrix-multiply-accumulate step: D = A @ B + C on 4x4 tiles.

    A and B must be binary16.  Products are exact (a binary16 product always
    fits in binary32) and are accumulated into a binary32 running sum that is
    rounded toward zero after every addition, walking k in ascending order.
    The final sum is rounded toward zero into the output precision, which C
    shares.
    """
    if a.precision is not Precision.FP16 or b.precision is not Precision.FP16:
        raise ValidationError("mma_4x4 multiplicand tiles must be fp16")
    if c.precision is not out_precision:
        raise ValidationError("accumulator tile must match the output precision")
    out: list[int] = []
    for i in range(4):
        for j in range(4):
            cw = c.at(i, j)
            acc = f16_to_f32(cw) if out_precision is Precision.FP16 else cw
            for kk in range(4):
                aw = f16_to_f32(a.at(i, kk))
                bw = f16_to_f32(b.at(kk, j))
                # Exact product plus accumulator, one toward-zero rounding.
                acc = fma(aw, bw, acc, Precision.FP32, RoundingMode.TOWARD_ZERO)
            if out_precision is Precision.FP16:
                out.append(f32_to_f16(acc, RoundingMode.TOWARD_ZERO))
            else:
                out.append(acc)
    return Tile4x4(tuple(out), out_precision)
