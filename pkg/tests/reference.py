"""Slow, obviously-correct scalar references shared by the test modules.

Everything here goes through the scalar integer core one element at a time;
nothing touches the vectorized kernels under test.
"""

from __future__ import annotations

import numpy as np

from warpfault.analysis import GeometryClass
from warpfault.numerics import (
    Precision,
    RoundingMode,
    f16_to_f32,
    f32_to_f16,
    fma,
    word_from_float,
)

_WORD_DTYPE = {Precision.FP16: np.uint16, Precision.FP32: np.uint32}


def scalar_software_gemm(a_words: np.ndarray, b_words: np.ndarray,
                         precision: Precision) -> np.ndarray:
    """Triple loop, k ascending, one nearest-even FMA per step."""
    m, k = a_words.shape
    n = b_words.shape[1]
    out = np.zeros((m, n), dtype=_WORD_DTYPE[precision])
    for i in range(m):
        for j in range(n):
            acc = 0
            for kk in range(k):
                acc = fma(int(a_words[i, kk]), int(b_words[kk, j]), acc,
                          precision, RoundingMode.NEAREST_EVEN)
            out[i, j] = acc
    return out


def scalar_tensor_gemm(a_words: np.ndarray, b_words: np.ndarray,
                       precision: Precision) -> np.ndarray:
    """Chunked toward-zero fp32 accumulation with binary16 operands.

    binary32 inputs are narrowed once up front (nearest even); a binary16
    output truncates the running accumulator to binary16 after each chunk
    of four, mirroring chained matrix-multiply-accumulate instructions.
    """
    if precision is Precision.FP32:
        a16 = np.array([[f32_to_f16(int(w), RoundingMode.NEAREST_EVEN)
                         for w in row] for row in a_words], dtype=np.uint16)
        b16 = np.array([[f32_to_f16(int(w), RoundingMode.NEAREST_EVEN)
                         for w in row] for row in b_words], dtype=np.uint16)
    else:
        a16, b16 = a_words, b_words
    m, k = a16.shape
    n = b16.shape[1]
    assert k % 4 == 0
    out = np.zeros((m, n), dtype=_WORD_DTYPE[precision])
    tz = RoundingMode.TOWARD_ZERO
    for i in range(m):
        for j in range(n):
            acc32 = 0
            for base in range(0, k, 4):
                for kk in range(base, base + 4):
                    acc32 = fma(f16_to_f32(int(a16[i, kk])), f16_to_f32(int(b16[kk, j])),
                                acc32, Precision.FP32, tz)
                if precision is Precision.FP16:
                    acc32 = f16_to_f32(f32_to_f16(acc32, tz))
            out[i, j] = acc32 if precision is Precision.FP32 else f32_to_f16(acc32, tz)
    return out


def random_matrix(rng: np.random.Generator, shape: tuple[int, int],
                  precision: Precision, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """Finite random word matrix: uniform values snapped onto the format grid."""
    vals = rng.uniform(lo, hi, size=shape)
    out = np.empty(shape, dtype=_WORD_DTYPE[precision])
    flat_v = vals.reshape(-1)
    flat_o = out.reshape(-1)
    for idx in range(flat_v.size):
        flat_o[idx] = word_from_float(float(flat_v[idx]), precision,
                                      RoundingMode.NEAREST_EVEN)
    return out


def identity_words(size: int, precision: Precision) -> np.ndarray:
    one = word_from_float(1.0, precision, RoundingMode.NEAREST_EVEN)
    out = np.zeros((size, size), dtype=_WORD_DTYPE[precision])
    np.fill_diagonal(out, one)
    return out


def diff_coords(golden: np.ndarray, faulty: np.ndarray) -> set[tuple[int, int]]:
    rows, cols = np.nonzero(golden != faulty)
    return {(int(r), int(c)) for r, c in zip(rows, cols)}


def oracle_geometry(coords):
    """Literal transcription of the four geometry rules, coded independently."""
    pts = sorted(set(coords))
    if len(pts) == 1:
        return GeometryClass.SINGLE
    if all(p[0] == pts[0][0] for p in pts) or all(p[1] == pts[0][1] for p in pts):
        return GeometryClass.LINE
    rs = [p[0] for p in pts]
    cs = [p[1] for p in pts]
    if len(pts) >= 4 and len(set(rs)) >= 2 and len(set(cs)) >= 2:
        box = (max(rs) - min(rs) + 1) * (max(cs) - min(cs) + 1)
        if 2 * len(pts) >= box:  # density >= 0.5, in integer arithmetic
            return GeometryClass.SQUARE
    return GeometryClass.RANDOM


def random_coord_sets(seed, count):
    """Coordinate sets of sizes 1..64 inside dims 16x16 up to 256x256,
    drawn from shapes that visit all four classes."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        rows = int(rng.integers(16, 257))
        cols = int(rng.integers(16, 257))
        recipe = i % 5
        if recipe == 0:
            size = int(rng.integers(1, 65))
            flat = rng.choice(rows * cols, size=size, replace=False)
            coords = {(int(f) // cols, int(f) % cols) for f in flat}
        elif recipe == 1:
            r = int(rng.integers(rows))
            size = int(rng.integers(1, min(65, cols + 1)))
            coords = {(r, int(c)) for c in rng.choice(cols, size=size, replace=False)}
        elif recipe == 2:
            c = int(rng.integers(cols))
            size = int(rng.integers(1, min(65, rows + 1)))
            coords = {(int(r), c) for r in rng.choice(rows, size=size, replace=False)}
        else:
            h = int(rng.integers(2, 9))
            w = int(rng.integers(2, 9))
            r0 = int(rng.integers(rows - h + 1))
            c0 = int(rng.integers(cols - w + 1))
            cells = [(r0 + a, c0 + b) for a in range(h) for b in range(w)]
            # recipe 3 keeps most of the block, recipe 4 guts it
            keep_lo = (h * w) // 2 + 1 if recipe == 3 else 2
            keep_hi = min(h * w, 64) if recipe == 3 else max(3, (h * w) // 3)
            size = int(rng.integers(keep_lo, keep_hi + 1)) if keep_hi > keep_lo else keep_lo
            picked = rng.choice(len(cells), size=min(size, len(cells)), replace=False)
            coords = {cells[int(p)] for p in picked}
        yield coords


def scalar_direct_conv(tensor: np.ndarray, weights: np.ndarray,
                       kernel_h: int, kernel_w: int, stride: int,
                       precision: Precision) -> np.ndarray:
    """Valid convolution as nested loops, no patch matrix in sight.

    Accumulates each output position with scalar FMAs in (channel, ky, kx)
    order, which is the flattening order the weight rows use.  Output is
    (out_channels, out_h * out_w) words, row-major positions.
    """
    c, h, w = tensor.shape
    out_c = weights.shape[0]
    assert weights.shape[1] == c * kernel_h * kernel_w
    out_h = (h - kernel_h) // stride + 1
    out_w = (w - kernel_w) // stride + 1
    out = np.zeros((out_c, out_h * out_w), dtype=_WORD_DTYPE[precision])
    for oc in range(out_c):
        for oy in range(out_h):
            for ox in range(out_w):
                acc = 0
                tap = 0
                for cc in range(c):
                    for ky in range(kernel_h):
                        for kx in range(kernel_w):
                            acc = fma(int(weights[oc, tap]),
                                      int(tensor[cc, oy * stride + ky,
                                                 ox * stride + kx]),
                                      acc, precision, RoundingMode.NEAREST_EVEN)
                            tap += 1
                out[oc, oy * out_w + ox] = acc
    return out
