"""A small fixed-weight detection network whose layers run as GEMM kernels.

The network exists to give injected faults something realistic to corrupt:
four convolution layers (the first three followed by LeakyReLU) ending in
an 8x8 detection grid with two box slots per cell and four classes.  Every
convolution is lowered to a matrix multiply over im2col patches and runs
through the instrumented GEMM engine, so a fault descriptor can target any
layer's kernel by index.

Weights and input frames are generated from fixed seeds using arithmetic
that stays bit-stable across platforms (no transcendental functions on the
data path), which makes golden outputs reproducible everywhere.  Weights
are FP32; the FP16 network variant rounds them once at load.

Criticality of an SDC is judged by decoding detections from the golden and
faulted raw outputs and comparing the two sets: extra boxes, lost boxes,
changed classes, and drifted boxes, in that order of severity.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import kernels
from .analysis import Criticality
from .engine import (
    Algorithm,
    ExecStatus,
    GemmResult,
    KernelConfig,
    TraceProfile,
    golden_padded,
    run_gemm,
    trace_profile,
)
from .errors import ValidationError
from .faults import FaultDescriptor, child_seed, rng_for
from .matio import ConvWeights
from .numerics import Precision, RoundingMode, word_from_float

NETWORK_SEED = 1001
FRAMES_SEED = 2002
FRAME_SHAPE = (4, 16, 16)
FRAME_COUNT = 16

GRID = 8
BOXES_PER_CELL = 2
CLASS_COUNT = 4
FIELDS_PER_BOX = 5 + CLASS_COUNT  # tx ty tw th conf + class logits

CONF_THRESHOLD = 0.6
NMS_IOU = 0.5
MATCH_IOU = 0.5
TOLERABLE_IOU = 0.8

LEAKY_SLOPE = 0.1

#: (out_channels, kernel, stride, leaky activation afterwards)
_LAYER_PLAN = [
    (8, 3, 1, True),
    (12, 3, 1, True),
    (16, 3, 1, True),
    (BOXES_PER_CELL * FIELDS_PER_BOX, 3, 1, False),
]

#: Global multiplier on the variance-preserving weight scale, and the bias
#: applied to the two confidence logit channels.  Both were calibrated
#: against the shipped frames so every frame decodes to a handful of golden
#: boxes; see tests for the frozen expectations.
WEIGHT_GAIN = 1.4
CONF_BIAS = -0.35


def squash01(t: float) -> float:
    """Monotonic map from the reals onto (0, 1) with squash01(0) = 0.5.

    Algebraic on purpose: the rational form is bit-deterministic across
    platforms, which exp-based sigmoids are not.
    """
    return 0.5 * (1.0 + t / (1.0 + abs(t)))


# ---------------------------------------------------------------------------
# assets: weights and frames
# ---------------------------------------------------------------------------

def generate_reference_weights() -> list[ConvWeights]:
    """The published reference weights, derived from NETWORK_SEED.

    Draws are uniform rather than normal to keep libm out of asset
    generation; the byte-for-byte content is platform independent.
    """
    layers = []
    in_c = FRAME_SHAPE[0]
    for index, (out_c, ksize, stride, _) in enumerate(_LAYER_PLAN):
        fan_in = in_c * ksize * ksize
        # uniform(-a, a) has variance a^2/3; a = gain * sqrt(3 / fan_in)
        # keeps layer output variance near its input variance
        a = WEIGHT_GAIN * (3.0 / fan_in) ** 0.5
        rng = rng_for(child_seed(NETWORK_SEED, "layer", index))
        vals = rng.uniform(-a, a, size=(out_c, fan_in))
        bias_vals = np.zeros(out_c, dtype=np.float64)
        if index == len(_LAYER_PLAN) - 1:
            taps = ksize * ksize
            for slot in range(BOXES_PER_CELL):
                conf_row = slot * FIELDS_PER_BOX + 4
                # zero the per-channel tap sums of the confidence rows, so a
                # spatially constant activation field scores exactly the
                # bias: detections come from local contrast, not from how
                # bright a frame happens to be overall
                grouped = vals[conf_row].reshape(in_c, taps)
                grouped -= grouped.mean(axis=1, keepdims=True)
                bias_vals[conf_row] = CONF_BIAS
        weights = np.array([word_from_float(float(v), Precision.FP32)
                            for v in vals.ravel()], dtype=np.uint32)
        weights = weights.reshape(out_c, fan_in)
        bias = np.array([word_from_float(float(v), Precision.FP32)
                         for v in bias_vals], dtype=np.uint32)
        layers.append(ConvWeights(kernel_h=ksize, kernel_w=ksize, stride=stride,
                                  weights=weights, bias=bias))
        in_c = out_c
    return layers


def generate_frames(count: int = FRAME_COUNT) -> list[np.ndarray]:
    """Deterministic synthetic frames as FP32 word tensors (C, H, W).

    Four recipe families rotate across the set: soft blobs, linear ramps,
    checkerboards, and stripes, each over a low-amplitude noise floor.
    Blob falloff is the rational 1/(1+d^2) rather than a gaussian, again to
    keep libm out of asset generation.
    """
    c, h, w = FRAME_SHAPE
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = []
    for i in range(count):
        rng = rng_for(child_seed(FRAMES_SEED, "frame", i))
        img = 0.3 * rng.uniform(-1.0, 1.0, size=FRAME_SHAPE)
        recipe = i % 4
        if recipe == 0:
            for _ in range(int(rng.integers(2, 5))):
                cy, cx = rng.uniform(2, h - 2), rng.uniform(2, w - 2)
                amp = rng.uniform(0.5, 1.0) * (1 if rng.integers(2) else -1)
                radius = rng.uniform(1.5, 3.0)
                blob = amp / (1.0 + ((yy - cy) ** 2 + (xx - cx) ** 2) / radius ** 2)
                img[int(rng.integers(c))] += blob
        elif recipe == 1:
            for ch in range(c):
                gy, gx = rng.uniform(-1, 1), rng.uniform(-1, 1)
                img[ch] += (gy * (yy / h) + gx * (xx / w))
        elif recipe == 2:
            period = int(rng.integers(2, 5))
            tile = ((yy // period + xx // period) % 2) * 2.0 - 1.0
            img[int(rng.integers(c))] += rng.uniform(0.4, 0.9) * tile
        else:
            period = int(rng.integers(2, 6))
            phase = int(rng.integers(period))
            stripes = (((xx + phase) // period) % 2) * 2.0 - 1.0
            img[int(rng.integers(c))] += rng.uniform(0.4, 0.9) * stripes
        # equalize frame energy: the network is positively homogeneous, so
        # detection counts would otherwise track pattern amplitude, not bias
        img *= 0.5 / np.sqrt(np.mean(img * img))
        img = np.clip(img, -1.0, 1.0)
        words = np.array([word_from_float(float(v), Precision.FP32)
                          for v in img.ravel()], dtype=np.uint32)
        frames.append(words.reshape(FRAME_SHAPE))
    return frames


# ---------------------------------------------------------------------------
# lowering
# ---------------------------------------------------------------------------

def im2col(tensor: np.ndarray, kernel_h: int, kernel_w: int,
           stride: int) -> np.ndarray:
    """Unfold (C, H, W) words into a (C*kh*kw, out_h*out_w) patch matrix.

    Column p holds the flattened receptive field of output position p
    (row-major positions, channel-major flattening), so a convolution
    becomes weights @ patches.  Pure gather: bits move, values don't.
    """
    if tensor.ndim != 3:
        raise ValidationError(f"im2col wants (C, H, W), got {tensor.shape}")
    c, h, w = tensor.shape
    if kernel_h > h or kernel_w > w or stride < 1:
        raise ValidationError(
            f"kernel {kernel_h}x{kernel_w} stride {stride} does not fit {h}x{w}")
    out_h = (h - kernel_h) // stride + 1
    out_w = (w - kernel_w) // stride + 1
    out = np.empty((c * kernel_h * kernel_w, out_h * out_w), dtype=tensor.dtype)
    row = 0
    for cc in range(c):
        for ky in range(kernel_h):
            for kx in range(kernel_w):
                patch = tensor[cc,
                               ky:ky + out_h * stride:stride,
                               kx:kx + out_w * stride:stride]
                out[row] = patch.reshape(-1)
                row += 1
    return out


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    w: float
    h: float
    class_id: int
    confidence: float

    def to_json(self) -> dict:
        return {"bbox": [self.x, self.y, self.w, self.h],
                "class_id": self.class_id,
                "confidence": self.confidence}


def iou(a: Detection, b: Detection) -> float:
    ax1, ay1 = a.x - a.w / 2, a.y - a.h / 2
    ax2, ay2 = a.x + a.w / 2, a.y + a.h / 2
    bx1, by1 = b.x - b.w / 2, b.y - b.h / 2
    bx2, by2 = b.x + b.w / 2, b.y + b.h / 2
    ix = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    iy = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    if not union > 0:
        return 0.0
    return inter / union


def decode_detections(raw: np.ndarray, precision: Precision,
                      conf_threshold: float = CONF_THRESHOLD,
                      nms_iou: float = NMS_IOU) -> list[Detection]:
    """Turn the head's raw logit words into a deterministic detection list.

    Per cell and box slot: the box center lands inside its own cell, width
    and height are squashed to (0, 1), and the class is the argmax logit
    (lowest index wins ties).  Candidates at or above the confidence
    threshold are ordered by confidence descending, then cell index, then
    slot, and greedy NMS drops any candidate overlapping a kept one at
    `nms_iou` or more.  NaN confidences never pass the threshold.
    """
    expected = (BOXES_PER_CELL * FIELDS_PER_BOX, GRID, GRID)
    if raw.shape != expected:
        raise ValidationError(f"raw head tensor is {raw.shape}, expected {expected}")
    vals = kernels.values_from_words(raw.reshape(raw.shape[0], -1), precision)
    candidates = []
    for gy in range(GRID):
        for gx in range(GRID):
            cell = gy * GRID + gx
            for slot in range(BOXES_PER_CELL):
                base = slot * FIELDS_PER_BOX
                conf = squash01(vals[base + 4, cell])
                if not conf >= conf_threshold:
                    continue
                det = Detection(
                    x=(gx + squash01(vals[base + 0, cell])) / GRID,
                    y=(gy + squash01(vals[base + 1, cell])) / GRID,
                    w=squash01(vals[base + 2, cell]),
                    h=squash01(vals[base + 3, cell]),
                    class_id=int(np.argmax(vals[base + 5:base + 5 + CLASS_COUNT,
                                                cell])),
                    confidence=conf,
                )
                candidates.append((-conf, cell, slot, det))
    candidates.sort(key=lambda item: item[:3])
    kept: list[Detection] = []
    for _, _, _, det in candidates:
        if all(iou(det, other) < nms_iou for other in kept):
            kept.append(det)
    return kept


_SEVERITY = [Criticality.FALSE_POSITIVE, Criticality.MISDETECTION,
             Criticality.CLASS_CHANGE, Criticality.BOX_DRIFT]


def classify_criticality(golden: Sequence[Detection], faulty: Sequence[Detection],
                         match_iou: float = MATCH_IOU,
                         tolerable_iou: float = TOLERABLE_IOU) -> Criticality:
    """Compare detection sets and report the worst damage found.

    Greedy one-to-one matching by IoU (best pairs first, index order breaks
    ties).  An unmatched faulty box is a false positive, an unmatched
    golden box a misdetection; matched pairs can still differ by class or,
    below `tolerable_iou`, by box position.
    """
    pairs = []
    for gi, g in enumerate(golden):
        for fi, f in enumerate(faulty):
            overlap = iou(g, f)
            if overlap >= match_iou:
                pairs.append((-overlap, gi, fi))
    pairs.sort()
    matched_g: dict[int, int] = {}
    matched_f: set[int] = set()
    for _, gi, fi in pairs:
        if gi in matched_g or fi in matched_f:
            continue
        matched_g[gi] = fi
        matched_f.add(fi)

    found = set()
    if len(faulty) > len(matched_f):
        found.add(Criticality.FALSE_POSITIVE)
    if len(golden) > len(matched_g):
        found.add(Criticality.MISDETECTION)
    for gi, fi in matched_g.items():
        g, f = golden[gi], faulty[fi]
        if g.class_id != f.class_id:
            found.add(Criticality.CLASS_CHANGE)
        elif iou(g, f) < tolerable_iou:
            found.add(Criticality.BOX_DRIFT)
    for crit in _SEVERITY:
        if crit in found:
            return crit
    return Criticality.TOLERABLE


# ---------------------------------------------------------------------------
# the network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InferenceResult:
    status: ExecStatus
    raw: np.ndarray | None  # (channels, grid*grid) words when completed
    detections: list[Detection] | None
    status_reason: str | None = None
    #: dynamic instructions retired by the faulted layer's interpreted warp;
    #: None for golden inference (nothing was interpreted)
    dynamic_instruction_count: int | None = None


class Network:
    """The reference network bound to one precision and GEMM algorithm.

    Layer kernels are indexed 0..3 for fault targeting; `profiles` is the
    site-sampling view of those kernels.  All inference is bit-deterministic,
    and per-frame golden state is cached on first use.
    """

    def __init__(self, weights: list[ConvWeights],
                 precision: Precision = Precision.FP32,
                 algorithm: Algorithm = Algorithm.SOFTWARE_GEMM,
                 conf_threshold: float = CONF_THRESHOLD,
                 nms_iou: float = NMS_IOU):
        if len(weights) != len(_LAYER_PLAN):
            raise ValidationError(
                f"reference network has {len(_LAYER_PLAN)} layers, "
                f"got {len(weights)}")
        self.precision = precision
        self.algorithm = algorithm
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self._weights = []
        self._biases = []
        self._layers = weights
        for layer in weights:
            w, b = layer.weights, layer.bias
            if precision is Precision.FP16:
                w, b = kernels.narrow_words(w), kernels.narrow_words(b)
            self._weights.append(w)
            self._biases.append(b)
        self.configs = []
        in_c, in_h, in_w = FRAME_SHAPE
        for layer, w in zip(weights, self._weights):
            out_h = (in_h - layer.kernel_h) // layer.stride + 1
            out_w = (in_w - layer.kernel_w) // layer.stride + 1
            m, k = w.shape
            self.configs.append(KernelConfig(
                algorithm=algorithm, precision=precision,
                m=m, n=out_h * out_w, k=k))
            in_c, in_h, in_w = m, out_h, out_w
        if (in_h, in_w) != (GRID, GRID):
            raise ValidationError(
                f"head grid is {in_h}x{in_w}, the decoder wants {GRID}x{GRID}")
        self.profiles: list[TraceProfile] = [
            trace_profile(cfg, kernel_index=i)
            for i, cfg in enumerate(self.configs)
        ]
        self._frame_cache: dict[bytes, dict] = {}

    # -- forward pieces ----------------------------------------------------

    def _ingest(self, frame32: np.ndarray) -> np.ndarray:
        if frame32.shape != FRAME_SHAPE or frame32.dtype != np.uint32:
            raise ValidationError(
                f"frames are FP32 word tensors of shape {FRAME_SHAPE}")
        if self.precision is Precision.FP16:
            return kernels.narrow_words(frame32)
        return frame32

    def _post(self, index: int, gemm_out: np.ndarray) -> np.ndarray:
        """Bias add and, on inner layers, LeakyReLU; all in network precision."""
        one = word_from_float(1.0, self.precision)
        ones = np.full_like(gemm_out, one)
        bias = np.broadcast_to(self._biases[index][:, None], gemm_out.shape)
        out = kernels.fma_words(bias.astype(gemm_out.dtype), ones, gemm_out,
                                self.precision)
        if _LAYER_PLAN[index][3]:
            vals = kernels.values_from_words(out, self.precision)
            neg = vals < 0
            if neg.any():
                slope = np.full_like(out, word_from_float(LEAKY_SLOPE,
                                                          self.precision))
                zero = np.zeros_like(out)
                scaled = kernels.fma_words(out, slope, zero, self.precision)
                out = np.where(neg, scaled, out)
        return out

    def _gemm_clean(self, index: int, patches: np.ndarray) -> np.ndarray:
        cfg = self.configs[index]
        pad = golden_padded(self._weights[index], patches, cfg)
        return pad[:cfg.m, :cfg.n]

    def _layer_input(self, index: int, tensor: np.ndarray) -> np.ndarray:
        layer = self._layers[index]
        return im2col(tensor, layer.kernel_h, layer.kernel_w, layer.stride)

    def _forward_from(self, index: int, activations: np.ndarray,
                      fault_layer_out: np.ndarray | None = None) -> np.ndarray:
        """Run layers `index`.. on an activations tensor (C, H, W)."""
        t = activations
        for i in range(index, len(self.configs)):
            if i == index and fault_layer_out is not None:
                c = fault_layer_out
            else:
                c = self._gemm_clean(i, self._layer_input(i, t))
            c = self._post(i, c)
            cfg = self.configs[i]
            side = int(round(cfg.n ** 0.5))
            t = c.reshape(cfg.m, side, side)
        return t.reshape(self.configs[-1].m, GRID * GRID)

    # -- cached golden state -------------------------------------------------

    def _frame_state(self, frame32: np.ndarray) -> dict:
        key = frame32.tobytes()
        state = self._frame_cache.get(key)
        if state is not None:
            return state
        tensors = [self._ingest(frame32)]
        patches = []
        padded = []
        t = tensors[0]
        for i, cfg in enumerate(self.configs):
            p = self._layer_input(i, t)
            pad = golden_padded(self._weights[i], p, cfg)
            patches.append(p)
            padded.append(pad)
            c = self._post(i, pad[:cfg.m, :cfg.n])
            side = int(round(cfg.n ** 0.5))
            t = c.reshape(cfg.m, side, side)
            tensors.append(t)
        raw = tensors[-1].reshape(self.configs[-1].m, GRID * GRID)
        state = {
            "tensors": tensors,
            "patches": patches,
            "padded": padded,
            "raw": raw,
            "detections": self._decode(raw),
        }
        self._frame_cache[key] = state
        return state

    def _decode(self, raw: np.ndarray) -> list[Detection]:
        return decode_detections(raw.reshape(-1, GRID, GRID), self.precision,
                                 self.conf_threshold, self.nms_iou)

    # -- public API ----------------------------------------------------------

    def golden(self, frame32: np.ndarray) -> InferenceResult:
        state = self._frame_state(frame32)
        return InferenceResult(status=ExecStatus.COMPLETED, raw=state["raw"],
                               detections=list(state["detections"]))

    def infer(self, frame32: np.ndarray,
              fault: FaultDescriptor | None = None) -> InferenceResult:
        """Golden inference, or inference with one layer's GEMM faulted."""
        if fault is None:
            return self.golden(frame32)
        index = fault.site.kernel_index
        if not 0 <= index < len(self.configs):
            raise ValidationError(f"kernel index {index} is not a layer")
        state = self._frame_state(frame32)
        res: GemmResult = run_gemm(
            self._weights[index], state["patches"][index], self.configs[index],
            fault, profile=self.profiles[index], golden=state["padded"][index])
        if res.status is not ExecStatus.COMPLETED:
            return InferenceResult(status=res.status, raw=None, detections=None,
                                   status_reason=res.status_reason,
                                   dynamic_instruction_count=res.dynamic_instruction_count)
        raw = self._forward_from(index, state["tensors"][index],
                                 fault_layer_out=res.c)
        return InferenceResult(status=ExecStatus.COMPLETED, raw=raw,
                               detections=self._decode(raw),
                               dynamic_instruction_count=res.dynamic_instruction_count)


def frame_for_seed(seed: int, frame_count: int = FRAME_COUNT) -> int:
    """Which frame an injection with this child seed runs against."""
    return int(rng_for(child_seed(seed, "frame", 0)).integers(frame_count))
