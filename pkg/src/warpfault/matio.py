"""Binary dump formats for matrices and network weights.

Two little-endian container formats:

* WFMX, a single matrix: magic ``WFMX``, version u16, precision u8 (the
  storage width in bits, 16 or 32), rows u64, cols u64, then rows*cols raw
  words in row-major order, one word per element at the storage width.

* WFNN, an ordered list of convolution layers: magic ``WFNN``, version u16,
  layer count u16, then per layer a fixed descriptor (output channels u32,
  input patch length u32, kernel height u8, kernel width u8, stride u8, one
  reserved zero byte) followed by the layer's GEMM weight matrix
  (out_channels x patch_len) and its bias vector (out_channels), both as
  raw FP32 words.

Words are moved verbatim, so a dump round-trips NaN payloads and every
other bit pattern untouched.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DumpFormatError, DumpVersionError, ValidationError
from .kernels import word_dtype
from .numerics import Precision

WFMX_MAGIC = b"WFMX"
WFNN_MAGIC = b"WFNN"
WFMX_VERSION = 1
WFNN_VERSION = 1

_MATRIX_HEADER = struct.Struct("<4sHBQQ")
_WEIGHTS_HEADER = struct.Struct("<4sHH")
_LAYER_HEADER = struct.Struct("<IIBBBB")

_WIDTH_TO_PRECISION = {16: Precision.FP16, 32: Precision.FP32}
_PRECISION_TO_WIDTH = {v: k for k, v in _WIDTH_TO_PRECISION.items()}


def write_matrix(path: str | Path, words: np.ndarray, precision: Precision) -> None:
    if words.ndim != 2:
        raise ValidationError(f"matrix dump wants a 2-D array, got {words.ndim}-D")
    if words.dtype != word_dtype[precision]:
        raise ValidationError(
            f"{precision.name} words must be {np.dtype(word_dtype[precision]).name},"
            f" got {words.dtype}")
    rows, cols = words.shape
    header = _MATRIX_HEADER.pack(WFMX_MAGIC, WFMX_VERSION,
                                 _PRECISION_TO_WIDTH[precision], rows, cols)
    body = np.ascontiguousarray(words).astype(words.dtype.newbyteorder("<"))
    Path(path).write_bytes(header + body.tobytes())


def read_matrix(path: str | Path) -> tuple[np.ndarray, Precision]:
    raw = Path(path).read_bytes()
    if len(raw) < _MATRIX_HEADER.size:
        raise DumpFormatError(f"{path}: truncated header")
    magic, version, width, rows, cols = _MATRIX_HEADER.unpack_from(raw)
    if magic != WFMX_MAGIC:
        raise DumpFormatError(f"{path}: bad magic {magic!r}")
    if version != WFMX_VERSION:
        raise DumpVersionError(f"{path}: matrix dump version {version}, "
                               f"expected {WFMX_VERSION}")
    if width not in _WIDTH_TO_PRECISION:
        raise DumpFormatError(f"{path}: unknown storage width {width}")
    precision = _WIDTH_TO_PRECISION[width]
    dt = np.dtype(word_dtype[precision]).newbyteorder("<")
    want = rows * cols * dt.itemsize
    body = raw[_MATRIX_HEADER.size:]
    if len(body) != want:
        raise DumpFormatError(f"{path}: body is {len(body)} bytes, expected {want}")
    words = np.frombuffer(body, dtype=dt).astype(word_dtype[precision])
    return words.reshape(rows, cols), precision


@dataclass(frozen=True)
class ConvWeights:
    """One layer's weights in GEMM form: rows are output channels, columns
    are flattened receptive-field patches."""

    kernel_h: int
    kernel_w: int
    stride: int
    weights: np.ndarray  # (out_channels, kernel_h*kernel_w*in_channels) u32
    bias: np.ndarray  # (out_channels,) u32

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValidationError("weights are a matrix and bias a vector")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValidationError("bias length must match output channels")
        if self.weights.dtype != np.uint32 or self.bias.dtype != np.uint32:
            raise ValidationError("weight dumps carry raw FP32 words")


def write_weights(path: str | Path, layers: list[ConvWeights]) -> None:
    if not layers:
        raise ValidationError("a weight dump needs at least one layer")
    chunks = [_WEIGHTS_HEADER.pack(WFNN_MAGIC, WFNN_VERSION, len(layers))]
    for layer in layers:
        out_c, patch = layer.weights.shape
        chunks.append(_LAYER_HEADER.pack(out_c, patch, layer.kernel_h,
                                         layer.kernel_w, layer.stride, 0))
        chunks.append(np.ascontiguousarray(layer.weights)
                      .astype("<u4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias).astype("<u4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_weights(path: str | Path) -> list[ConvWeights]:
    raw = Path(path).read_bytes()
    if len(raw) < _WEIGHTS_HEADER.size:
        raise DumpFormatError(f"{path}: truncated header")
    magic, version, count = _WEIGHTS_HEADER.unpack_from(raw)
    if magic != WFNN_MAGIC:
        raise DumpFormatError(f"{path}: bad magic {magic!r}")
    if version != WFNN_VERSION:
        raise DumpVersionError(f"{path}: weight dump version {version}, "
                               f"expected {WFNN_VERSION}")
    offset = _WEIGHTS_HEADER.size
    layers = []
    for i in range(count):
        if offset + _LAYER_HEADER.size > len(raw):
            raise DumpFormatError(f"{path}: layer {i} header truncated")
        out_c, patch, kh, kw, stride, _ = _LAYER_HEADER.unpack_from(raw, offset)
        offset += _LAYER_HEADER.size
        w_bytes = out_c * patch * 4
        b_bytes = out_c * 4
        if offset + w_bytes + b_bytes > len(raw):
            raise DumpFormatError(f"{path}: layer {i} body truncated")
        weights = (np.frombuffer(raw, dtype="<u4", count=out_c * patch,
                                 offset=offset)
                   .astype(np.uint32).reshape(out_c, patch))
        offset += w_bytes
        bias = (np.frombuffer(raw, dtype="<u4", count=out_c, offset=offset)
                .astype(np.uint32))
        offset += b_bytes
        layers.append(ConvWeights(kernel_h=kh, kernel_w=kw, stride=stride,
                                  weights=weights, bias=bias))
    if offset != len(raw):
        raise DumpFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return layers
