"""Fault models: site sampling, payloads, mutation, and the ECC filter.

A fault is described by a FaultDescriptor that is fully self-contained:
replaying the descriptor against the same kernel reproduces the identical
outcome, bit for bit.  Sampling is driven by a counter-based generator
(Philox) seeded from a per-injection child seed, so campaign workers can
draw sites in any order without affecting each other.

Every architectural register in the executor is a 32-bit word (binary16
kernels keep packed pairs in them), so bit indices always span [0, 31] and
value replacement always overwrites the full word.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import NoSitesError, ValidationError
from .numerics import flip_bits

ALL_LANES = -1


class FaultModel(Enum):
    SINGLE_BIT_FLIP = "single_bit_flip"
    DOUBLE_BIT_FLIP = "double_bit_flip"
    SINGLE_RANDOM_VALUE = "single_random_value"
    WARP_RANDOM_VALUE = "warp_random_value"
    WARP_ZERO_VALUE = "warp_zero_value"

    @property
    def warp_wide(self) -> bool:
        return self in (FaultModel.WARP_RANDOM_VALUE, FaultModel.WARP_ZERO_VALUE)


class RegisterClass(Enum):
    ARITHMETIC_DEST = "arithmetic_dest"
    LOOP_COUNTER = "loop_counter"
    ADDRESS_BASE = "address_base"
    PREDICATE_MASK = "predicate_mask"


class StorageClass(Enum):
    PROTECTED_REGISTER = "protected_register"
    UNPROTECTED_DATAPATH = "unprotected_datapath"


class EccMode(Enum):
    OFF = "off"
    SECDED = "secded"


class EccAction(Enum):
    PASS = "pass"
    CORRECTED = "corrected"
    DUE_DOUBLE_BIT = "due_double_bit"


def default_storage_class(model: FaultModel) -> StorageClass:
    """Bit flips live in the protected register file; value replacement
    models datapath corruption that ECC never sees."""
    if model in (FaultModel.SINGLE_BIT_FLIP, FaultModel.DOUBLE_BIT_FLIP):
        return StorageClass.PROTECTED_REGISTER
    return StorageClass.UNPROTECTED_DATAPATH


@dataclass(frozen=True)
class FaultSite:
    kernel_index: int
    warp_id: int
    lane: int  # ALL_LANES for warp-wide models
    dyn_inst: int
    register_class: RegisterClass
    storage_class: StorageClass

    def to_json(self) -> dict:
        return {
            "kernel": self.kernel_index,
            "warp": self.warp_id,
            "lane": self.lane,
            "dyn_inst": self.dyn_inst,
            "reg_class": self.register_class.value,
            "storage_class": self.storage_class.value,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FaultSite":
        return cls(
            kernel_index=int(obj["kernel"]),
            warp_id=int(obj["warp"]),
            lane=int(obj["lane"]),
            dyn_inst=int(obj["dyn_inst"]),
            register_class=RegisterClass(obj["reg_class"]),
            storage_class=StorageClass(obj["storage_class"]),
        )


@dataclass(frozen=True)
class FaultDescriptor:
    model: FaultModel
    site: FaultSite
    payload: tuple[int, ...]
    seed: int

    def __post_init__(self):
        n = len(self.payload)
        if self.model is FaultModel.SINGLE_BIT_FLIP and n != 1:
            raise ValidationError("single bit flip carries exactly one bit index")
        if self.model is FaultModel.DOUBLE_BIT_FLIP and n != 2:
            raise ValidationError("double bit flip carries exactly two bit indices")
        if self.model is FaultModel.SINGLE_RANDOM_VALUE and n != 1:
            raise ValidationError("single random value carries exactly one word")
        if self.model is FaultModel.WARP_ZERO_VALUE and n != 0:
            raise ValidationError("warp zero value carries no payload")
        if self.model is FaultModel.WARP_RANDOM_VALUE and n == 0:
            raise ValidationError("warp random value carries one word per active lane")
        wide = self.model.warp_wide
        if wide != (self.site.lane == ALL_LANES):
            raise ValidationError("lane must be ALL exactly for warp-wide models")

    def to_json(self) -> dict:
        obj = {"model": self.model.value, "seed": self.seed}
        obj.update(self.site.to_json())
        if self.model in (FaultModel.SINGLE_BIT_FLIP, FaultModel.DOUBLE_BIT_FLIP):
            obj["payload_hex"] = [f"{b:d}" for b in self.payload]
        else:
            obj["payload_hex"] = [f"{w:08x}" for w in self.payload]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "FaultDescriptor":
        model = FaultModel(obj["model"])
        if model in (FaultModel.SINGLE_BIT_FLIP, FaultModel.DOUBLE_BIT_FLIP):
            payload = tuple(int(s) for s in obj["payload_hex"])
        else:
            payload = tuple(int(s, 16) for s in obj["payload_hex"])
        return cls(model=model, site=FaultSite.from_json(obj),
                   payload=payload, seed=int(obj["seed"]))


def child_seed(master_seed: int, label: str, index: int) -> int:
    """Per-injection 64-bit seed, stable across platforms and worker counts."""
    digest = hashlib.sha256(f"{master_seed}:{label}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _site_counts(profiles: Sequence, target_classes) -> list[tuple[int, np.ndarray, int]]:
    out = []
    for prof in profiles:
        idx = prof.sites_for(target_classes)
        out.append((prof.warp_count, idx, prof.active_lanes))
    return out


def sample_site(rng: np.random.Generator, profiles: Sequence,
                model: FaultModel,
                target_classes: Iterable[RegisterClass],
                storage_class: StorageClass | None = None) -> FaultSite:
    """Draw a site uniformly over (kernel, warp, lane, dynamic instruction)
    tuples whose destination register is in `target_classes`.

    For warp-wide models the lane dimension is collapsed, so the draw is
    uniform over (kernel, warp, dynamic instruction).
    """
    classes = frozenset(target_classes)
    per_kernel = _site_counts(profiles, classes)
    lane_dim = not model.warp_wide
    weights = []
    for warps, idx, lanes in per_kernel:
        weights.append(warps * len(idx) * (lanes if lane_dim else 1))
    total = sum(weights)
    if total == 0:
        raise NoSitesError(f"no instruction sites for classes {sorted(c.value for c in classes)}")
    flat = int(rng.integers(total))
    kernel_index = 0
    while flat >= weights[kernel_index]:
        flat -= weights[kernel_index]
        kernel_index += 1
    warps, idx, lanes = per_kernel[kernel_index]
    if lane_dim:
        lane = flat % lanes
        flat //= lanes
    else:
        lane = ALL_LANES
    inst_pos = flat % len(idx)
    warp_id = flat // len(idx)
    prof = profiles[kernel_index]
    dyn = int(idx[inst_pos])
    return FaultSite(
        kernel_index=prof.kernel_index,
        warp_id=warp_id,
        lane=lane,
        dyn_inst=dyn,
        register_class=prof.program[dyn].reg_class,
        storage_class=storage_class or default_storage_class(model),
    )


def draw_payload(rng: np.random.Generator, model: FaultModel,
                 active_lanes: int) -> tuple[int, ...]:
    """Payload words or bit indices for a descriptor, frozen at sample time.

    Random words are uniform over all 2^32 patterns; NaN and Inf encodings
    are as likely as any other, which is the point of a datapath fault.
    """
    if model is FaultModel.SINGLE_BIT_FLIP:
        return (int(rng.integers(32)),)
    if model is FaultModel.DOUBLE_BIT_FLIP:
        bits = rng.choice(32, size=2, replace=False)
        return (int(bits[0]), int(bits[1]))
    if model is FaultModel.SINGLE_RANDOM_VALUE:
        return (int(rng.integers(1 << 32)),)
    if model is FaultModel.WARP_RANDOM_VALUE:
        return tuple(int(w) for w in rng.integers(1 << 32, size=active_lanes))
    return ()


def make_descriptor(seed: int, profiles: Sequence, model: FaultModel,
                    target_classes: Iterable[RegisterClass],
                    storage_class: StorageClass | None = None) -> FaultDescriptor:
    """Site plus payload from one child seed; the campaign's injection unit."""
    rng = rng_for(seed)
    site = sample_site(rng, profiles, model, target_classes, storage_class)
    prof = next(p for p in profiles if p.kernel_index == site.kernel_index)
    payload = draw_payload(rng, model, prof.active_lanes)
    return FaultDescriptor(model=model, site=site, payload=payload, seed=seed)


def apply_fault(clean_words: np.ndarray, descriptor: FaultDescriptor,
                active_mask: np.ndarray) -> np.ndarray:
    """Mutate a 32-lane register vector according to the descriptor.

    Warp-wide models touch exactly the active lanes; single-lane models
    touch their one lane (which must be active).
    """
    model = descriptor.model
    out = clean_words.copy()
    if model.warp_wide:
        active = np.flatnonzero(active_mask)
        if model is FaultModel.WARP_ZERO_VALUE:
            out[active] = 0
        else:
            if len(descriptor.payload) < len(active):
                raise ValidationError("warp payload shorter than active lane count")
            out[active] = np.array(descriptor.payload[: len(active)], dtype=np.uint32)
        return out
    lane = descriptor.site.lane
    if lane < 0 or lane >= len(out) or not active_mask[lane]:
        raise ValidationError(f"lane {lane} not active at fault site")
    if model in (FaultModel.SINGLE_BIT_FLIP, FaultModel.DOUBLE_BIT_FLIP):
        out[lane] = flip_bits(int(out[lane]), descriptor.payload)
    else:
        out[lane] = np.uint32(descriptor.payload[0])
    return out


def ecc_filter(site: FaultSite, model: FaultModel, mode: EccMode) -> EccAction:
    """Behavioral SEC-DED: correct one flipped bit, trap on two, and see
    nothing at all on the unprotected datapath."""
    if mode is EccMode.OFF:
        return EccAction.PASS
    if site.storage_class is not StorageClass.PROTECTED_REGISTER:
        return EccAction.PASS
    if model is FaultModel.SINGLE_BIT_FLIP:
        return EccAction.CORRECTED
    if model is FaultModel.DOUBLE_BIT_FLIP:
        return EccAction.DUE_DOUBLE_BIT
    return EccAction.PASS
