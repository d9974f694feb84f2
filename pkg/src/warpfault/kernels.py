"""Vectorized NumPy counterparts of the scalar float core.

These fast paths compute whole fault-free matrices (and 32-lane register
vectors inside the warp executor) with the exact same bit-level results as
`warpfault.numerics`.  The equivalences rest on two facts:

* A product of two binary32 (binary16) values is exact in binary64, and
  rounding an exact a*b+c first to binary64 and then to the narrow format
  under round-to-nearest-even gives the same word as rounding once, because
  binary64 keeps more than twice the target precision plus two bits.
* Round-toward-zero cannot be emulated by a nearest-rounding chain, so the
  toward-zero fp32 accumulate recovers the exact residual of each addition
  with a TwoSum and nudges the truncation down one step in the rare case the
  rounded sum landed exactly on a representable value that the true sum had
  not quite reached.

tests/test_kernels.py drives both routes against each other over random
words, subnormals, and specials.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .numerics import Precision

_QNAN16 = np.uint16(0x7E00)
_QNAN32 = np.uint32(0x7FC00000)
_MAX_FINITE32 = np.float64(np.finfo(np.float32).max)
_MAX_FINITE16 = np.float64(65504.0)

word_dtype = {Precision.FP16: np.uint16, Precision.FP32: np.uint32}
_float_dtype = {Precision.FP16: np.float16, Precision.FP32: np.float32}


def values_from_words(words: np.ndarray, precision: Precision) -> np.ndarray:
    """Raw word array -> exact values as float64."""
    dt = word_dtype[precision]
    if words.dtype != dt:
        raise ValidationError(f"expected {np.dtype(dt).name} words, got {words.dtype}")
    with np.errstate(invalid="ignore"):
        return np.ascontiguousarray(words).view(_float_dtype[precision]).astype(np.float64)


def words_from_values(values: np.ndarray, precision: Precision) -> np.ndarray:
    """Exactly-representable float64 values -> canonical raw words.

    Any NaN becomes the canonical quiet NaN of the format, matching the
    scalar core's canonicalization.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        narrow = values.astype(_float_dtype[precision])
    words = narrow.view(word_dtype[precision]).copy()
    nan_mask = np.isnan(narrow)
    if nan_mask.any():
        words[nan_mask] = _QNAN16 if precision is Precision.FP16 else _QNAN32
    return words


def fma_words(a: np.ndarray, b: np.ndarray, c: np.ndarray, precision: Precision) -> np.ndarray:
    """Elementwise fused multiply-add on word arrays, round-to-nearest-even."""
    av = values_from_words(a, precision)
    bv = values_from_words(b, precision)
    cv = values_from_words(c, precision)
    with np.errstate(invalid="ignore"):
        return words_from_values(av * bv + cv, precision)


def packed_fma_words(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Fused multiply-add on uint32 registers holding packed binary16 pairs."""
    out = np.zeros(a.shape, dtype=np.uint32)
    for shift in (0, 16):
        ah = ((a >> shift) & np.uint32(0xFFFF)).astype(np.uint16)
        bh = ((b >> shift) & np.uint32(0xFFFF)).astype(np.uint16)
        ch = ((c >> shift) & np.uint32(0xFFFF)).astype(np.uint16)
        rh = fma_words(ah, bh, ch, Precision.FP16).astype(np.uint32)
        out |= rh << shift
    return out


def narrow_words(words32: np.ndarray) -> np.ndarray:
    """binary32 words -> binary16 words, round-to-nearest-even, canonical NaN."""
    v = np.ascontiguousarray(words32).view(np.float32)
    with np.errstate(over="ignore", invalid="ignore"):
        h = v.astype(np.float16)
    out = h.view(np.uint16).copy()
    nan_mask = np.isnan(h)
    if nan_mask.any():
        out[nan_mask] = _QNAN16
    return out


def widen_words(words16: np.ndarray) -> np.ndarray:
    """binary16 words -> binary32 words (exact), canonical NaN."""
    v = np.ascontiguousarray(words16).view(np.float16)
    w = v.astype(np.float32)
    out = w.view(np.uint32).copy()
    nan_mask = np.isnan(w)
    if nan_mask.any():
        out[nan_mask] = _QNAN32
    return out


# ---------------------------------------------------------------------------
# toward-zero fp32 accumulation
# ---------------------------------------------------------------------------

def _trunc_to_f32(s: np.ndarray) -> np.ndarray:
    """Truncate float64 values toward zero onto the binary32 grid.

    Finite results never overflow to infinity: magnitudes past the largest
    finite binary32 saturate there, which is what toward-zero rounding does.
    """
    mask = np.uint64(((1 << 64) - 1) ^ ((1 << 29) - 1))
    t = (np.ascontiguousarray(s).view(np.uint64) & mask).view(np.float64).copy()
    a = np.abs(s)
    small = a < 2.0 ** -126
    if small.any():
        t[small] = np.trunc(s[small] * 2.0 ** 149) * 2.0 ** -149
    over = (a > _MAX_FINITE32) & np.isfinite(s)
    if over.any():
        t[over] = np.copysign(_MAX_FINITE32, s[over])
    nonfin = ~np.isfinite(s)
    if nonfin.any():
        t[nonfin] = s[nonfin]
    return t


def trunc_to_f16(v: np.ndarray) -> np.ndarray:
    """Truncate float64 values (exactly binary32) toward zero onto binary16."""
    mask = np.uint64(((1 << 64) - 1) ^ ((1 << 42) - 1))
    t = (np.ascontiguousarray(v).view(np.uint64) & mask).view(np.float64).copy()
    a = np.abs(v)
    small = a < 2.0 ** -14
    if small.any():
        t[small] = np.trunc(v[small] * 2.0 ** 24) * 2.0 ** -24
    over = (a > _MAX_FINITE16) & np.isfinite(v)
    if over.any():
        t[over] = np.copysign(_MAX_FINITE16, v[over])
    nonfin = ~np.isfinite(v)
    if nonfin.any():
        t[nonfin] = v[nonfin]
    return t


def rtz_add_f32(acc: np.ndarray, addend: np.ndarray) -> np.ndarray:
    """acc + addend rounded toward zero at binary32, in the float64 domain.

    `acc` must hold exactly-binary32 values; `addend` any binary64 value that
    is exact (here: products of two binary16 values, or binary32 values).
    """
    s = acc + addend
    # Knuth TwoSum: exact error of the binary64 addition.
    bv = s - acc
    err = (acc - (s - bv)) + (addend - bv)
    t = _trunc_to_f32(s)
    finite = np.isfinite(s)
    on_grid = (t == s) & finite & (s != 0.0)
    step_down = on_grid & (np.where(s < 0.0, -err, err) < 0.0)
    if step_down.any():
        shrunk = np.nextafter(s[step_down].astype(np.float32), np.float32(0.0))
        t[step_down] = shrunk.astype(np.float64)
    return t


# ---------------------------------------------------------------------------
# fault-free matrix kernels
# ---------------------------------------------------------------------------

def software_gemm_words(a_words: np.ndarray, b_words: np.ndarray,
                        precision: Precision) -> np.ndarray:
    """Plain FMA-chain GEMM, k ascending, round-to-nearest-even each step."""
    a = values_from_words(a_words, precision)
    b = values_from_words(b_words, precision)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"shape mismatch: {a.shape} @ {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    ftype = _float_dtype[precision]
    acc = np.zeros((m, n), dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        for kk in range(k):
            fused = a[:, kk:kk + 1] * b[kk:kk + 1, :] + acc
            acc = fused.astype(ftype).astype(np.float64)
    return words_from_values(acc, precision)


def tensor_gemm_words(a_words: np.ndarray, b_words: np.ndarray,
                      precision: Precision) -> np.ndarray:
    """Tensor-style GEMM: exact binary16 products, toward-zero fp32 accumulate.

    k walks in ascending order in groups of four (one MMA step each).  With a
    binary16 output the accumulator tile is rounded toward zero to binary16
    after every group and widened exactly into the next, mirroring chained
    hardware MMA instructions whose C/D operands are binary16.  binary32
    inputs are first narrowed to binary16 (nearest-even), as the issuing code
    must do before feeding the MMA unit.
    """
    if precision is Precision.FP32:
        a16 = narrow_words(a_words)
        b16 = narrow_words(b_words)
    else:
        a16 = np.ascontiguousarray(a_words)
        b16 = np.ascontiguousarray(b_words)
    a = values_from_words(a16, Precision.FP16)
    b = values_from_words(b16, Precision.FP16)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"shape mismatch: {a.shape} @ {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    if k % 4 != 0:
        raise ValidationError("tensor kernel needs k divisible by 4")
    acc = np.zeros((m, n), dtype=np.float64)
    with np.errstate(invalid="ignore"):
        for base in range(0, k, 4):
            for kk in range(base, base + 4):
                acc = rtz_add_f32(acc, a[:, kk:kk + 1] * b[kk:kk + 1, :])
            if precision is Precision.FP16:
                acc = trunc_to_f16(acc)
    return words_from_values(acc, precision)
