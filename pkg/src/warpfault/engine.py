"""Warp-level execution engine for tiled GEMM kernels.

Two kernel flavors share one machine model:

* SoftwareGemm: every lane owns one output element (binary32) or one packed
  pair of adjacent elements (binary16) and walks the k dimension with a
  fused multiply-add per step, rounding to nearest even.
* TensorCoreGemm: the warp is carved into 4x4 fragments; one MMA instruction
  consumes a 4x4 A and B fragment and performs four toward-zero fp32
  accumulation steps.  The binary32 variant narrows its inputs to binary16
  through explicit cast instructions first; the binary16 variant keeps
  packed pairs everywhere and truncates the accumulator tile to binary16
  after every MMA.

Machine model, in brief:

* A warp has 32 lanes; configurations whose tile does not need all of them
  leave the tail lanes inactive for the whole kernel.  Every architectural
  register is one 32-bit word per lane (binary16 data rides in packed
  pairs), so fault payloads and bit indices are uniform across kernels.
* Addresses are in element units over a flat space: a guard page, then the
  A, B and C regions back to back.  Loads from C read zeros (the output
  buffer starts zeroed and stores become visible at warp retirement); any
  access outside the mapped regions is a Crash.
* Loop control lives in a counter register tested by ISETP each iteration.
  The branch must be warp-uniform: if active lanes disagree, the lanes
  would part ways and meet a barrier on different sides, so the warp is
  declared Hung (the watchdog model).  Exceeding the instruction budget is
  also a Hang.
* Warps retire in ascending id and their epilogue stores land in that
  order, which decides who wins when a corrupted store pointer writes into
  another warp's territory.

The fault-free path never runs the interpreter; it goes through the
vectorized kernels, which tests pin as bit-identical to a scalar reference.
A faulted run re-executes only the affected warp and splices its stores
into the cached fault-free output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import InvalidSiteError, ValidationError
from .faults import (
    ALL_LANES,
    FaultDescriptor,
    RegisterClass,
    apply_fault,
)
from .numerics import Precision

GUARD_WORDS = 4096
WARP_LANES = 32


class Algorithm(Enum):
    SOFTWARE_GEMM = "software_gemm"
    TENSOR_CORE_GEMM = "tensor_core_gemm"


class ExecStatus(Enum):
    COMPLETED = "completed"
    HANG = "hang"
    CRASH = "crash"


def _default_tile_n(precision: Precision) -> int:
    return 8 if precision is Precision.FP16 else 4


@dataclass(frozen=True)
class KernelConfig:
    algorithm: Algorithm
    precision: Precision
    m: int
    n: int
    k: int
    tile_m: int = 8
    tile_n: int = 0  # 0 = default for the precision (4 for FP32, 8 for FP16)
    tile_k: int = 4
    instruction_budget: int = 0  # 0 = 4x the fault-free count

    def __post_init__(self):
        if self.tile_n == 0:
            object.__setattr__(self, "tile_n", _default_tile_n(self.precision))
        if min(self.m, self.n, self.k) < 1:
            raise ValidationError("matrix dimensions must be positive")
        if min(self.tile_m, self.tile_n, self.tile_k) < 1:
            raise ValidationError("tile sizes must be positive")
        if self.algorithm is Algorithm.TENSOR_CORE_GEMM:
            if self.tile_m % 4 or self.tile_n % 4 or self.tile_k % 4:
                raise ValidationError("tensor-core tiles must be multiples of 4")
        if self.precision is Precision.FP16 and self.tile_n % 2:
            raise ValidationError("binary16 tiles pack column pairs; tile_n must be even")
        epl = 2 if self.precision is Precision.FP16 else 1
        elems = self.tile_m * self.tile_n
        if elems % epl:
            raise ValidationError("tile element count must cover whole packed pairs")
        if elems // epl > WARP_LANES:
            raise ValidationError(
                f"tile {self.tile_m}x{self.tile_n} needs {elems // epl} lanes; a warp has {WARP_LANES}")

    @property
    def elems_per_lane(self) -> int:
        return 2 if self.precision is Precision.FP16 else 1

    @property
    def active_lanes(self) -> int:
        return (self.tile_m * self.tile_n) // self.elems_per_lane

    @property
    def m_p(self) -> int:
        return math.ceil(self.m / self.tile_m) * self.tile_m

    @property
    def n_p(self) -> int:
        return math.ceil(self.n / self.tile_n) * self.tile_n

    @property
    def k_p(self) -> int:
        step = self.tile_k if self.algorithm is Algorithm.SOFTWARE_GEMM else max(self.tile_k, 4)
        return math.ceil(self.k / step) * step

    @property
    def k_iters(self) -> int:
        if self.algorithm is Algorithm.SOFTWARE_GEMM:
            return self.k_p
        return self.k_p // 4

    @property
    def warps_rows(self) -> int:
        return self.m_p // self.tile_m

    @property
    def warps_cols(self) -> int:
        return self.n_p // self.tile_n

    @property
    def warp_count(self) -> int:
        return self.warps_rows * self.warps_cols


@dataclass(frozen=True)
class Instr:
    sem: str
    opcode: str
    dest: Optional[str]
    reg_class: Optional[RegisterClass]
    it: Optional[int] = None
    operand: Optional[str] = None


@dataclass(frozen=True)
class GemmResult:
    c: Optional[np.ndarray]
    status: ExecStatus
    dynamic_instruction_count: int
    status_reason: Optional[str] = None


_ARITH = RegisterClass.ARITHMETIC_DEST
_LOOP = RegisterClass.LOOP_COUNTER
_ADDR = RegisterClass.ADDRESS_BASE
_PRED = RegisterClass.PREDICATE_MASK


def _build_program(config: KernelConfig) -> tuple[Instr, ...]:
    instrs: list[Instr] = []

    def add(sem, opcode, dest, rc, it=None, operand=None):
        instrs.append(Instr(sem, opcode, dest, rc, it, operand))

    add("kk0", "IMOV", "kk", _LOOP)
    add("pa0", "IADD", "pA", _ADDR)
    add("pb0", "IADD", "pB", _ADDR)
    add("pc0", "IADD", "pC", _ADDR)
    add("acc0", "FMOV", "acc", _ARITH)
    sw = config.algorithm is Algorithm.SOFTWARE_GEMM
    f32_tc = not sw and config.precision is Precision.FP32
    k_per_iter = 1 if sw else 4
    for it in range(config.k_iters):
        add("ld_a", "LD", "ra", _ARITH, it, "A")
        if f32_tc:
            add("cast_a", "F2H", "fa", _ARITH, it, "A")
        add("ld_b", "LD", "rb", _ARITH, it, "B")
        if f32_tc:
            add("cast_b", "F2H", "fb", _ARITH, it, "B")
        if sw:
            add("ffma", "FFMA", "acc", _ARITH, it)
        else:
            add("mma", "MMA", "acc", _ARITH, it)
        add("inc_pa", "IADD", "pA", _ADDR, it)
        add("inc_pb", "IADD", "pB", _ADDR, it)
        add("inc_kk", "IADD", "kk", _LOOP, it)
        add("setp", "ISETP", "pred", _PRED, it)
        if ((it + 1) * k_per_iter) % config.tile_k == 0:
            add("sync", "SYNC", None, None, it)
    add("store", "ST", None, None)
    return tuple(instrs)


@dataclass
class TraceProfile:
    """Deterministic per-kernel trace summary every warp shares.

    All warps of a kernel execute the same instruction template, so the
    profile is one program plus the warp count; fault-site sampling treats
    (warp, lane, dynamic index) as a product space over it.
    """

    kernel_index: int
    config: KernelConfig
    program: tuple[Instr, ...]
    _class_sites: dict = field(default_factory=dict, repr=False)

    @property
    def warp_count(self) -> int:
        return self.config.warp_count

    @property
    def active_lanes(self) -> int:
        return self.config.active_lanes

    @property
    def per_warp_instructions(self) -> int:
        return len(self.program)

    @property
    def instruction_total(self) -> int:
        return self.warp_count * len(self.program)

    @property
    def budget(self) -> int:
        if self.config.instruction_budget:
            return self.config.instruction_budget
        return 4 * len(self.program)

    def sites_for(self, classes: Iterable[RegisterClass]) -> np.ndarray:
        key = frozenset(classes)
        if key not in self._class_sites:
            idx = [i for i, ins in enumerate(self.program) if ins.reg_class in key]
            self._class_sites[key] = np.array(idx, dtype=np.int64)
        return self._class_sites[key]

    def find_instructions(self, sem: Optional[str] = None,
                          operand: Optional[str] = None,
                          it: Optional[int] = None) -> list[int]:
        out = []
        for i, ins in enumerate(self.program):
            if sem is not None and ins.sem != sem:
                continue
            if operand is not None and ins.operand != operand:
                continue
            if it is not None and ins.it != it:
                continue
            out.append(i)
        return out


def trace_profile(config: KernelConfig, kernel_index: int = 0) -> TraceProfile:
    return TraceProfile(kernel_index=kernel_index, config=config,
                        program=_build_program(config))


class _Lanes:
    """Per-warp lane geometry: output ownership, load coordinates, pointers."""

    def __init__(self, config: KernelConfig, warp_id: int):
        if not 0 <= warp_id < config.warp_count:
            raise InvalidSiteError(f"warp {warp_id} outside grid of {config.warp_count}")
        self.config = config
        self.warp_id = warp_id
        self.r0 = (warp_id // config.warps_cols) * config.tile_m
        self.c0 = (warp_id % config.warps_cols) * config.tile_n
        n = config.active_lanes
        lane = np.arange(n)
        sw = config.algorithm is Algorithm.SOFTWARE_GEMM
        fp16 = config.precision is Precision.FP16
        if sw and not fp16:
            self.gi = self.r0 + lane // config.tile_n
            self.gj = self.c0 + lane % config.tile_n
            self.frag_r0 = None
        elif sw and fp16:
            ppr = config.tile_n // 2
            self.gi = self.r0 + lane // ppr
            self.gj = self.c0 + 2 * (lane % ppr)
            self.frag_r0 = None
        else:
            fh = config.tile_n // 4
            lpf = 16 if not fp16 else 8
            f = lane // lpf
            q = lane % lpf
            fr, fc = f // fh, f % fh
            self.frag_r0 = self.r0 + 4 * fr
            self.frag_c0 = self.c0 + 4 * fc
            self.frag = f
            if not fp16:
                self.gi = self.frag_r0 + q // 4
                self.gj = self.frag_c0 + q % 4
                self.a_k_off = q % 4
                self.b_k_off = q // 4
            else:
                self.gi = self.frag_r0 + q // 2
                self.gj = self.frag_c0 + 2 * (q % 2)
                self.a_k_off = 2 * (q % 2)
                self.b_k_off = q // 2

    def own_elements(self, lane: int) -> tuple[tuple[int, int], ...]:
        i, j = int(self.gi[lane]), int(self.gj[lane])
        if self.config.precision is Precision.FP16:
            return ((i, j), (i, j + 1))
        return ((i, j),)

    def a_coords(self, lane: int, it: int) -> tuple[tuple[int, int], ...]:
        """A-matrix elements read by ld_a at iteration/chunk `it`."""
        cfg = self.config
        i = int(self.gi[lane])
        if cfg.algorithm is Algorithm.SOFTWARE_GEMM:
            return ((i, it),)
        base = 4 * it + int(self.a_k_off[lane])
        if cfg.precision is Precision.FP16:
            return ((i, base), (i, base + 1))
        return ((i, base),)

    def b_coords(self, lane: int, it: int) -> tuple[tuple[int, int], ...]:
        cfg = self.config
        j = int(self.gj[lane])
        if cfg.algorithm is Algorithm.SOFTWARE_GEMM:
            if cfg.precision is Precision.FP16:
                return ((it, j), (it, j + 1))
            return ((it, j),)
        row = 4 * it + int(self.b_k_off[lane])
        if cfg.precision is Precision.FP16:
            return ((row, j), (row, j + 1))
        return ((row, j),)

    def feeds(self, lane: int, sem: str) -> tuple[tuple[int, int], ...]:
        """Output elements the register written by `sem` flows into."""
        cfg = self.config
        if cfg.algorithm is Algorithm.SOFTWARE_GEMM or sem in ("acc0", "ffma", "mma"):
            return self.own_elements(lane)
        if sem in ("ld_a", "cast_a"):
            # an A element feeds its whole fragment output row
            row = int(self.gi[lane])
            c0 = int(self.frag_c0[lane])
            return tuple((row, c0 + c) for c in range(4))
        if sem in ("ld_b", "cast_b"):
            # a B element feeds its whole fragment output column
            r0 = int(self.frag_r0[lane])
            j = int(self.gj[lane])
            cols = (j, j + 1) if cfg.precision is Precision.FP16 else (j,)
            return tuple((r0 + r, c) for r in range(4) for c in cols)
        raise InvalidSiteError(f"no dataflow footprint for {sem}")


class _Space:
    """Flat element-addressed memory: guard page, then A, B, C regions."""

    def __init__(self, config: KernelConfig, a_pad: np.ndarray, b_pad: np.ndarray):
        self.a_base = GUARD_WORDS
        self.b_base = self.a_base + config.m_p * config.k_p
        self.c_base = self.b_base + config.k_p * config.n_p
        self.end = self.c_base + config.m_p * config.n_p
        self.a_flat = a_pad.reshape(-1)
        self.b_flat = b_pad.reshape(-1)

    def load(self, addrs: np.ndarray) -> np.ndarray:
        a = addrs.astype(np.int64)
        if ((a < self.a_base) | (a >= self.end)).any():
            raise _CrashSignal("oob_load")
        out = np.zeros(len(a), dtype=np.uint32)
        in_a = a < self.b_base
        if in_a.any():
            out[in_a] = self.a_flat[a[in_a] - self.a_base].astype(np.uint32)
        in_b = (a >= self.b_base) & (a < self.c_base)
        if in_b.any():
            out[in_b] = self.b_flat[a[in_b] - self.b_base].astype(np.uint32)
        # C-region reads see the zero-initialized output buffer
        return out

    def check_store(self, addrs: np.ndarray):
        a = addrs.astype(np.int64)
        if ((a < self.a_base) | (a >= self.end)).any():
            raise _CrashSignal("oob_store")


class _CrashSignal(Exception):
    pass


class _HangSignal(Exception):
    pass


class _WarpRun:
    """Interprets one warp's program, with an optional fault at one site."""

    def __init__(self, config: KernelConfig, profile: TraceProfile,
                 space: _Space, warp_id: int,
                 fault: Optional[FaultDescriptor] = None):
        self.config = config
        self.profile = profile
        self.space = space
        self.lanes = _Lanes(config, warp_id)
        self.fault = fault
        self.fault_dyn = fault.site.dyn_inst if fault is not None else -1
        self.dyn = 0
        self.stores: list[tuple[np.ndarray, np.ndarray]] = []
        n = config.active_lanes
        self.active = np.zeros(WARP_LANES, dtype=bool)
        self.active[:n] = True
        self.regs = {r: np.zeros(WARP_LANES, dtype=np.uint32)
                     for r in ("kk", "pA", "pB", "pC", "pred", "acc", "ra", "rb", "fa", "fb")}
        sw = config.algorithm is Algorithm.SOFTWARE_GEMM
        kp, np_ = config.k_p, config.n_p
        if sw:
            a0 = self.lanes.gi * kp
            b0 = self.lanes.gj.copy()
            self.a_step, self.b_step = 1, np_
        else:
            a0 = self.lanes.gi * kp + self.lanes.a_k_off
            b0 = self.lanes.b_k_off * np_ + self.lanes.gj
            self.a_step, self.b_step = 4, 4 * np_
        c0 = self.lanes.gi * np_ + self.lanes.gj
        self.addr0 = {
            "pA": (space.a_base + a0).astype(np.uint32),
            "pB": (space.b_base + b0).astype(np.uint32),
            "pC": (space.c_base + c0).astype(np.uint32),
        }

    # -- plumbing ----------------------------------------------------------

    def _commit(self, dest: str, words: np.ndarray):
        if self.dyn == self.fault_dyn:
            words = apply_fault(words, self.fault, self.active)
        self.regs[dest] = words

    def _full(self, active_words: np.ndarray) -> np.ndarray:
        out = np.zeros(WARP_LANES, dtype=np.uint32)
        out[self.active] = active_words
        return out

    def _load16(self, addrs: np.ndarray) -> np.ndarray:
        return self.space.load(addrs) & np.uint32(0xFFFF)

    # -- instruction semantics ---------------------------------------------

    def _step(self, ins: Instr):
        if self.dyn >= self.profile.budget:
            raise _HangSignal("budget")
        sem = ins.sem
        cfg = self.config
        fp16 = cfg.precision is Precision.FP16
        act = self.active
        if sem == "kk0":
            self._commit("kk", np.zeros(WARP_LANES, dtype=np.uint32))
        elif sem in ("pa0", "pb0", "pc0"):
            name = {"pa0": "pA", "pb0": "pB", "pc0": "pC"}[sem]
            self._commit(name, self._full(self.addr0[name]))
        elif sem == "acc0":
            self._commit("acc", np.zeros(WARP_LANES, dtype=np.uint32))
        elif sem == "ld_a":
            p = self.regs["pA"][act]
            if cfg.algorithm is Algorithm.SOFTWARE_GEMM and fp16:
                w = self._load16(p)
                self._commit("ra", self._full(w | (w << np.uint32(16))))
            elif fp16:
                lo = self._load16(p)
                hi = self._load16(p + np.uint32(1))
                self._commit("ra", self._full(lo | (hi << np.uint32(16))))
            else:
                self._commit("ra", self._full(self.space.load(p)))
        elif sem == "ld_b":
            p = self.regs["pB"][act]
            if fp16:
                lo = self._load16(p)
                hi = self._load16(p + np.uint32(1))
                self._commit("rb", self._full(lo | (hi << np.uint32(16))))
            else:
                self._commit("rb", self._full(self.space.load(p)))
        elif sem == "cast_a":
            h = kernels.narrow_words(self.regs["ra"]).astype(np.uint32)
            self._commit("fa", h)
        elif sem == "cast_b":
            h = kernels.narrow_words(self.regs["rb"]).astype(np.uint32)
            self._commit("fb", h)
        elif sem == "ffma":
            if fp16:
                acc = kernels.packed_fma_words(self.regs["ra"], self.regs["rb"],
                                               self.regs["acc"])
            else:
                acc = kernels.fma_words(self.regs["ra"], self.regs["rb"],
                                        self.regs["acc"], Precision.FP32)
            self._commit("acc", acc)
        elif sem == "mma":
            self._commit("acc", self._mma())
        elif sem == "inc_pa":
            self._commit("pA", self.regs["pA"] + np.uint32(self.a_step))
        elif sem == "inc_pb":
            self._commit("pB", self.regs["pB"] + np.uint32(self.b_step))
        elif sem == "inc_kk":
            self._commit("kk", self.regs["kk"] + np.uint32(1))
        elif sem == "setp":
            pred = (self.regs["kk"] < np.uint32(self.config.k_iters)).astype(np.uint32)
            self._commit("pred", pred)
        elif sem == "sync":
            pass  # uniform execution reaches barriers together by construction
        elif sem == "store":
            self._store()
        else:
            raise AssertionError(f"unknown instruction {sem}")
        self.dyn += 1

    def _mma(self) -> np.ndarray:
        cfg = self.config
        fp16 = cfg.precision is Precision.FP16
        new_acc = self.regs["acc"].copy()
        lpf = 8 if fp16 else 16
        frags = cfg.active_lanes // lpf
        for f in range(frags):
            lo = f * lpf
            sl = slice(lo, lo + lpf)
            if fp16:
                a_frag = _gather_pairs(self.regs["ra"][sl])
                b_frag = _gather_pairs(self.regs["rb"][sl])
                c_frag = _gather_pairs(self.regs["acc"][sl])
                av = kernels.values_from_words(a_frag, Precision.FP16)
                bv = kernels.values_from_words(b_frag, Precision.FP16)
                accv = kernels.values_from_words(c_frag, Precision.FP16)
            else:
                fa16 = (self.regs["fa"][sl] & np.uint32(0xFFFF)).astype(np.uint16)
                fb16 = (self.regs["fb"][sl] & np.uint32(0xFFFF)).astype(np.uint16)
                av = kernels.values_from_words(fa16, Precision.FP16).reshape(4, 4)
                bv = kernels.values_from_words(fb16, Precision.FP16).reshape(4, 4)
                accv = kernels.values_from_words(self.regs["acc"][sl],
                                                 Precision.FP32).reshape(4, 4)
            with np.errstate(invalid="ignore"):
                for t in range(4):
                    prod = av[:, t][:, None] * bv[t, :][None, :]
                    accv = kernels.rtz_add_f32(accv, prod)
                if fp16:
                    accv = kernels.trunc_to_f16(accv)
            if fp16:
                words = kernels.words_from_values(accv, Precision.FP16)
                new_acc[sl] = _scatter_pairs(words)
            else:
                new_acc[sl] = kernels.words_from_values(accv, Precision.FP32).reshape(-1)
        return new_acc

    def _store(self):
        act = self.active
        p = self.regs["pC"][act]
        acc = self.regs["acc"][act]
        if self.config.precision is Precision.FP16:
            addrs = np.column_stack([p, p + np.uint32(1)]).reshape(-1)
            words = np.column_stack([acc & np.uint32(0xFFFF),
                                     acc >> np.uint32(16)]).reshape(-1)
        else:
            addrs, words = p, acc
        self.space.check_store(addrs)
        self.stores.append((addrs.astype(np.int64), words))

    # -- top-level control flow --------------------------------------------

    def run(self) -> tuple[ExecStatus, Optional[str]]:
        prog = self.profile.program
        prologue = [i for i in prog if i.it is None and i.sem != "store"]
        body = [i for i in prog if i.it == 0 and i.sem != "sync"]
        sync_ins = next(i for i in prog if i.sem == "sync")
        store_ins = next(i for i in prog if i.sem == "store")
        k_per_iter = 1 if self.config.algorithm is Algorithm.SOFTWARE_GEMM else 4
        sync_every = self.config.tile_k // k_per_iter
        try:
            for ins in prologue:
                self._step(ins)
            it_done = 0
            while True:
                for ins in body:
                    self._step(ins)
                it_done += 1
                taken = self.regs["pred"][self.active] != 0
                if taken.any() != taken.all():
                    raise _HangSignal("deadlock")
                if it_done % sync_every == 0:
                    self._step(sync_ins)
                if not taken[0]:
                    break
            self._step(store_ins)
        except _CrashSignal as sig:
            return ExecStatus.CRASH, str(sig)
        except _HangSignal as sig:
            return ExecStatus.HANG, str(sig)
        return ExecStatus.COMPLETED, None


def _gather_pairs(words8: np.ndarray) -> np.ndarray:
    """8 packed-pair registers -> 4x4 uint16 fragment.

    Every fragment operand lays its pairs the same way: lane p holds the
    elements at (p // 2, 2*(p % 2)) and (p // 2, 2*(p % 2) + 1), so the
    lane-major half sequence is exactly the fragment in row-major order.
    """
    lo = (words8 & np.uint32(0xFFFF)).astype(np.uint16)
    hi = (words8 >> np.uint32(16)).astype(np.uint16)
    halves = np.column_stack([lo, hi])  # (8, 2)
    return halves.reshape(4, 4)


def _scatter_pairs(frag: np.ndarray) -> np.ndarray:
    """4x4 uint16 fragment -> 8 packed-pair registers (inverse gather)."""
    flat = frag.reshape(-1)
    lo = flat[0::2].astype(np.uint32)
    hi = flat[1::2].astype(np.uint32)
    return lo | (hi << np.uint32(16))


def _pad_matrix(words: np.ndarray, rows: int, cols: int) -> np.ndarray:
    if words.shape == (rows, cols):
        return words
    out = np.zeros((rows, cols), dtype=words.dtype)
    out[: words.shape[0], : words.shape[1]] = words
    return out


def golden_padded(a_words: np.ndarray, b_words: np.ndarray,
                  config: KernelConfig) -> np.ndarray:
    """Fault-free padded output through the vectorized kernels."""
    a_pad = _pad_matrix(a_words, config.m_p, config.k_p)
    b_pad = _pad_matrix(b_words, config.k_p, config.n_p)
    if config.algorithm is Algorithm.SOFTWARE_GEMM:
        return kernels.software_gemm_words(a_pad, b_pad, config.precision)
    return kernels.tensor_gemm_words(a_pad, b_pad, config.precision)


def _validate_inputs(a_words, b_words, config):
    dt = kernels.word_dtype[config.precision]
    if a_words.dtype != dt or b_words.dtype != dt:
        raise ValidationError(f"matrices must be {np.dtype(dt).name} words")
    if a_words.shape != (config.m, config.k) or b_words.shape != (config.k, config.n):
        raise ValidationError(
            f"shapes {a_words.shape} x {b_words.shape} do not match config "
            f"{config.m}x{config.k} @ {config.k}x{config.n}")


def _validate_site(fault: FaultDescriptor, profile: TraceProfile):
    site = fault.site
    cfg = profile.config
    if site.kernel_index != profile.kernel_index:
        raise InvalidSiteError(
            f"site addresses kernel {site.kernel_index}, profile is kernel {profile.kernel_index}")
    if not 0 <= site.warp_id < cfg.warp_count:
        raise InvalidSiteError(f"warp {site.warp_id} outside grid")
    if not 0 <= site.dyn_inst < len(profile.program):
        raise InvalidSiteError(f"dynamic index {site.dyn_inst} beyond trace")
    ins = profile.program[site.dyn_inst]
    if ins.dest is None:
        raise InvalidSiteError(f"instruction {ins.opcode} at {site.dyn_inst} writes no register")
    if ins.reg_class is not site.register_class:
        raise InvalidSiteError(
            f"site class {site.register_class.value} but instruction writes {ins.reg_class.value}")
    if fault.model.warp_wide:
        if site.lane != ALL_LANES:
            raise InvalidSiteError("warp-wide fault must use lane = ALL")
    elif not 0 <= site.lane < cfg.active_lanes:
        raise InvalidSiteError(f"lane {site.lane} outside the {cfg.active_lanes} active lanes")


def _splice(golden_pad: np.ndarray, run: _WarpRun, config: KernelConfig,
            space: _Space) -> np.ndarray:
    """Merge a re-executed warp's stores into the cached fault-free output.

    Warps retire in ascending id; the faulted warp's stores overwrite
    territory of lower-id warps (already retired) and lose to higher-id
    warps (retire later).  Its own elements start from the zeroed output
    buffer, so anything it failed to write reads as zero.
    """
    c = golden_pad.copy()
    flat = c.reshape(-1)
    n_p = config.n_p
    w = run.lanes.warp_id
    lanes = config.active_lanes
    for lane in range(lanes):
        for (i, j) in run.lanes.own_elements(lane):
            flat[i * n_p + j] = 0
    for addrs, words in run.stores:
        for a, word in zip(addrs, words):
            if not space.c_base <= a < space.end:
                continue  # A/B-region stores retire after every read
            el = int(a - space.c_base)
            i, j = divmod(el, n_p)
            owner = (i // config.tile_m) * config.warps_cols + (j // config.tile_n)
            if owner <= w:
                flat[el] = word
    return c


def run_gemm(a_words: np.ndarray, b_words: np.ndarray, config: KernelConfig,
             fault: Optional[FaultDescriptor] = None, *,
             profile: Optional[TraceProfile] = None,
             golden: Optional[np.ndarray] = None) -> GemmResult:
    """Execute the kernel, optionally with one injected fault.

    `golden` may carry a precomputed padded fault-free output (from
    `golden_padded`) so campaigns do not recompute it per injection.
    """
    _validate_inputs(a_words, b_words, config)
    if profile is None:
        profile = trace_profile(config)
    if fault is not None:
        _validate_site(fault, profile)
    if golden is None:
        golden = golden_padded(a_words, b_words, config)
    elif golden.shape != (config.m_p, config.n_p):
        raise ValidationError(
            f"golden must be the padded {config.m_p}x{config.n_p} output, got {golden.shape}")
    if fault is None:
        c = golden[: config.m, : config.n].copy()
        return GemmResult(c=c, status=ExecStatus.COMPLETED,
                          dynamic_instruction_count=len(profile.program))
    a_pad = _pad_matrix(a_words, config.m_p, config.k_p)
    b_pad = _pad_matrix(b_words, config.k_p, config.n_p)
    space = _Space(config, a_pad, b_pad)
    run = _WarpRun(config, profile, space, fault.site.warp_id, fault)
    status, reason = run.run()
    if status is not ExecStatus.COMPLETED:
        return GemmResult(c=None, status=status,
                          dynamic_instruction_count=run.dyn, status_reason=reason)
    c_pad = _splice(golden, run, config, space)
    return GemmResult(c=c_pad[: config.m, : config.n], status=status,
                      dynamic_instruction_count=run.dyn)


def execute_warp_clean(a_words: np.ndarray, b_words: np.ndarray,
                       config: KernelConfig, warp_id: int) -> tuple[int, list]:
    """Run one warp through the interpreter with no fault; returns its
    dynamic instruction count and stores.  Exists for self-consistency
    checks between the interpreter and the vectorized path."""
    _validate_inputs(a_words, b_words, config)
    profile = trace_profile(config)
    a_pad = _pad_matrix(a_words, config.m_p, config.k_p)
    b_pad = _pad_matrix(b_words, config.k_p, config.n_p)
    space = _Space(config, a_pad, b_pad)
    run = _WarpRun(config, profile, space, warp_id)
    status, reason = run.run()
    if status is not ExecStatus.COMPLETED:
        raise AssertionError(f"clean warp {warp_id} ended {status}: {reason}")
    return run.dyn, run.stores


def site_to_elements(site, config: KernelConfig,
                     profile: Optional[TraceProfile] = None) -> frozenset:
    """Output coordinates fed by the register a site writes (dataflow map).

    Defined for arithmetic destinations; loop counters, pointers and
    predicates influence the output through control or addressing, not
    dataflow, and raise InvalidSiteError.  Coordinates in padding are
    dropped.
    """
    if profile is None:
        profile = trace_profile(config)
    if not 0 <= site.dyn_inst < len(profile.program):
        raise InvalidSiteError(f"dynamic index {site.dyn_inst} beyond trace")
    ins = profile.program[site.dyn_inst]
    if ins.reg_class is not RegisterClass.ARITHMETIC_DEST:
        raise InvalidSiteError("dataflow map covers arithmetic destinations only")
    lanes = _Lanes(config, site.warp_id)
    targets = range(config.active_lanes) if site.lane == ALL_LANES else [site.lane]
    coords = set()
    for lane in targets:
        if not 0 <= lane < config.active_lanes:
            raise InvalidSiteError(f"lane {lane} inactive")
        coords.update(lanes.feeds(lane, ins.sem))
    return frozenset((i, j) for (i, j) in coords if i < config.m and j < config.n)


def element_owner(config: KernelConfig, i: int, j: int) -> tuple[int, int]:
    """(warp, lane) that computes and stores output element (i, j)."""
    if not (0 <= i < config.m_p and 0 <= j < config.n_p):
        raise ValidationError(f"element ({i}, {j}) outside the padded output")
    warp = (i // config.tile_m) * config.warps_cols + (j // config.tile_n)
    lanes = _Lanes(config, warp)
    for lane in range(config.active_lanes):
        if any((i, j) == el for el in lanes.own_elements(lane)):
            return warp, lane
    raise AssertionError("unowned element")  # unreachable by construction


def load_coords(config: KernelConfig, warp_id: int, lane: int, it: int,
                operand: str) -> tuple[tuple[int, int], ...]:
    """Matrix coordinates read by a lane's ld_a / ld_b at iteration `it`."""
    lanes = _Lanes(config, warp_id)
    if operand == "A":
        return lanes.a_coords(lane, it)
    if operand == "B":
        return lanes.b_coords(lane, it)
    raise ValidationError(f"operand must be 'A' or 'B', got {operand!r}")
