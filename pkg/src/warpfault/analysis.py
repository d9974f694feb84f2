"""Outcome taxonomy, error geometry, and campaign statistics.

Every injection run reduces to one Outcome: Masked (output bit-identical
to golden), SDC (corrupted output, further classified by the spatial shape
of the corruption and, for network campaigns, by how badly it hurt the
detections), or DUE (the run never produced an output: hang, crash, or an
ECC double-bit trap).

The statistics here are deliberately plain: counts, fractions, Wilson 95%
intervals, and a FIT projection from a measured cross section.  Everything
is a pure function over immutable inputs, so partial tallies from parallel
workers combine without coordination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Collection, Iterable, Mapping

import numpy as np

from .errors import ValidationError
from .numerics import Precision, float_from_word

#: z for a two-sided 95% interval.  Pinned as the conventional 1.96 rather
#: than the exact normal quantile so logged intervals are reproducible.
Z95 = 1.96


class GeometryClass(Enum):
    """Spatial shape of corrupted elements in an output matrix."""

    SINGLE = "single"
    LINE = "line"
    SQUARE = "square"
    RANDOM = "random"


class DueReason(Enum):
    HANG = "hang"
    CRASH = "crash"
    ECC_DOUBLE_BIT = "ecc_double_bit"


class Criticality(Enum):
    """How much an SDC damaged decoded detections.

    TOLERABLE means the detection sets still match; everything else is a
    critical SDC, ordered here from worst to mildest.
    """

    FALSE_POSITIVE = "false_positive"
    MISDETECTION = "misdetection"
    CLASS_CHANGE = "class_change"
    BOX_DRIFT = "box_drift"
    TOLERABLE = "tolerable"

    @property
    def is_critical(self) -> bool:
        return self is not Criticality.TOLERABLE


class OutcomeKind(Enum):
    MASKED = "masked"
    SDC = "sdc"
    DUE = "due"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    geometry: GeometryClass | None = None
    criticality: Criticality | None = None
    due_reason: DueReason | None = None

    def __post_init__(self):
        if self.kind is OutcomeKind.SDC:
            if self.geometry is None:
                raise ValidationError("an SDC outcome carries its geometry")
            if self.due_reason is not None:
                raise ValidationError("SDC excludes a DUE reason")
        elif self.kind is OutcomeKind.DUE:
            if self.due_reason is None:
                raise ValidationError("a DUE outcome carries its reason")
            if self.geometry is not None or self.criticality is not None:
                raise ValidationError("DUE excludes SDC attributes")
        else:
            if (self.geometry is not None or self.criticality is not None
                    or self.due_reason is not None):
                raise ValidationError("Masked carries no attributes")

    @classmethod
    def masked(cls) -> "Outcome":
        return cls(kind=OutcomeKind.MASKED)

    @classmethod
    def sdc(cls, geometry: GeometryClass,
            criticality: Criticality | None = None) -> "Outcome":
        return cls(kind=OutcomeKind.SDC, geometry=geometry, criticality=criticality)

    @classmethod
    def due(cls, reason: DueReason) -> "Outcome":
        return cls(kind=OutcomeKind.DUE, due_reason=reason)

    def to_json(self) -> dict:
        obj: dict = {"kind": self.kind.value}
        if self.geometry is not None:
            obj["geometry"] = self.geometry.value
        if self.criticality is not None:
            obj["criticality"] = self.criticality.value
        if self.due_reason is not None:
            obj["due_reason"] = self.due_reason.value
        return obj

    @classmethod
    def from_json(cls, obj: Mapping) -> "Outcome":
        return cls(
            kind=OutcomeKind(obj["kind"]),
            geometry=GeometryClass(obj["geometry"]) if "geometry" in obj else None,
            criticality=Criticality(obj["criticality"]) if "criticality" in obj else None,
            due_reason=DueReason(obj["due_reason"]) if "due_reason" in obj else None,
        )


# ---------------------------------------------------------------------------
# diffing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diff:
    """Corrupted coordinates of an observed matrix against its golden.

    `magnitudes` keeps the (golden_word, observed_word) pair per corrupted
    coordinate so reports can show what the corruption looked like.
    """

    corrupted: frozenset[tuple[int, int]]
    magnitudes: Mapping[tuple[int, int], tuple[int, int]]
    dims: tuple[int, int]

    def __bool__(self) -> bool:
        return bool(self.corrupted)

    def __len__(self) -> int:
        return len(self.corrupted)


def diff(golden: np.ndarray, observed: np.ndarray,
         rel_tol: float | None = None,
         precision: Precision | None = None) -> Diff:
    """Compare two word matrices.

    The default policy is exact bitwise equality, which is the right
    comparison for a deterministic simulator (identical NaN encodings are
    equal).  Passing `rel_tol` switches to a relative-error policy for
    ingesting dumps from real hardware; that policy needs `precision` to
    decode the words, and treats any NaN as corrupted, its own golden twin
    included.
    """
    if golden.shape != observed.shape:
        raise ValidationError(f"shape mismatch {golden.shape} vs {observed.shape}")
    if rel_tol is None:
        unequal = golden != observed
    else:
        if precision is None:
            raise ValidationError("relative comparison needs the precision")
        decode = np.vectorize(lambda w: float_from_word(int(w), precision),
                              otypes=[np.float64])
        g = decode(golden)
        o = decode(observed)
        with np.errstate(invalid="ignore"):
            close = np.abs(o - g) <= rel_tol * np.abs(g)
            close |= o == g  # covers signed zeros and equal infinities
        close &= ~(np.isnan(g) | np.isnan(o))
        unequal = ~close
    coords = np.argwhere(unequal)
    corrupted = frozenset((int(r), int(c)) for r, c in coords)
    magnitudes = {(int(r), int(c)): (int(golden[r, c]), int(observed[r, c]))
                  for r, c in coords}
    return Diff(corrupted=corrupted, magnitudes=magnitudes, dims=golden.shape)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def classify_geometry(d: Diff | Collection[tuple[int, int]],
                      square_density: float = 0.5) -> GeometryClass:
    """Classify a nonempty corruption footprint.

    The rules apply in order and the first match wins, so four elements in
    one row are a Line, never a Square:

      1. one element                                        -> Single
      2. all elements share a row, or all share a column    -> Line
      3. at least four elements spanning >= 2 rows and
         >= 2 columns, filling >= `square_density` of their
         bounding box                                       -> Square
      4. anything else                                      -> Random
    """
    coords = d.corrupted if isinstance(d, Diff) else frozenset(d)
    if not coords:
        raise ValidationError("empty diff has no geometry; that run was masked")
    if len(coords) == 1:
        return GeometryClass.SINGLE
    rows = {r for r, _ in coords}
    cols = {c for _, c in coords}
    if len(rows) == 1 or len(cols) == 1:
        return GeometryClass.LINE
    if len(coords) >= 4 and len(rows) >= 2 and len(cols) >= 2:
        bbox = (max(rows) - min(rows) + 1) * (max(cols) - min(cols) + 1)
        if len(coords) / bbox >= square_density:
            return GeometryClass.SQUARE
    return GeometryClass.RANDOM


# ---------------------------------------------------------------------------
# intervals and rates
# ---------------------------------------------------------------------------

def wilson_ci95(k: int, n: int) -> tuple[float, float]:
    """Wilson score interval for k successes in n trials at z = 1.96."""
    if n < 1:
        raise ValidationError("interval needs at least one trial")
    if k < 0 or k > n:
        raise ValidationError(f"successes {k} outside [0, {n}]")
    z2 = Z95 * Z95
    p = k / n
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = (Z95 / denom) * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n))
    # the boundary cases are exactly 0 and 1 in real arithmetic; pin them so
    # rounding noise cannot leave p-hat outside its own interval
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class FitParams:
    """Beam bookkeeping for the FIT projection.

    The default flux is the conventional sea-level neutron flux in
    particles per cm^2 per hour.
    """

    fluence: float
    reference_flux: float = 13.0

    def __post_init__(self):
        if not self.fluence > 0:
            raise ValidationError("fluence must be positive")
        if not self.reference_flux > 0:
            raise ValidationError("reference flux must be positive")


def fit_rate(n_errors: int, params: FitParams) -> float:
    """Failures per 10^9 device-hours from an observed error count.

    Cross section is errors over fluence; FIT scales it by the reference
    flux and 10^9 hours.  The product is computed before the division so
    the round-number cases stay exact.
    """
    if n_errors < 0:
        raise ValidationError("error count cannot be negative")
    return n_errors * params.reference_flux * 1.0e9 / params.fluence


# ---------------------------------------------------------------------------
# campaign statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignStats:
    """Counted outcomes of one campaign configuration.

    `rows()` flattens everything into (label, count, fraction, ci_lo, ci_hi)
    tuples, one per outcome class, which is the shape the CSV and JSON
    reports want.  Labels are colon-paths: "sdc", "sdc:single",
    "sdc:critical:class_change", "due:hang".
    """

    n_injections: int
    masked: int
    sdc: int
    due: int
    geometry: Mapping[GeometryClass, int] = field(default_factory=dict)
    criticality: Mapping[Criticality, int] = field(default_factory=dict)
    due_reasons: Mapping[DueReason, int] = field(default_factory=dict)

    @property
    def svf(self) -> float:
        """Fraction of injections that produced silent data corruption."""
        return self.sdc / self.n_injections

    @property
    def svf_ci95(self) -> tuple[float, float]:
        return wilson_ci95(self.sdc, self.n_injections)

    def critical_sdc(self) -> int:
        return sum(count for crit, count in self.criticality.items()
                   if crit.is_critical)

    def rows(self) -> list[tuple[str, int, float, float, float]]:
        out = []

        def emit(label: str, count: int):
            lo, hi = wilson_ci95(count, self.n_injections)
            out.append((label, count, count / self.n_injections, lo, hi))

        emit("masked", self.masked)
        emit("sdc", self.sdc)
        emit("due", self.due)
        for geo in GeometryClass:
            if geo in self.geometry:
                emit(f"sdc:{geo.value}", self.geometry[geo])
        if self.criticality:
            emit("sdc:critical", self.critical_sdc())
            for crit in Criticality:
                if crit in self.criticality:
                    emit(f"sdc:critical:{crit.value}" if crit.is_critical
                         else "sdc:tolerable", self.criticality[crit])
        for reason in DueReason:
            if reason in self.due_reasons:
                emit(f"due:{reason.value}", self.due_reasons[reason])
        return out

    def to_json(self) -> dict:
        return {
            "n_injections": self.n_injections,
            "svf": self.svf,
            "svf_ci95": list(self.svf_ci95),
            "classes": {
                label: {"count": count, "fraction": frac, "ci95": [lo, hi]}
                for label, count, frac, lo, hi in self.rows()
            },
        }


def svf(outcomes: Iterable[Outcome]) -> CampaignStats:
    """Tally outcomes into CampaignStats.

    Counting is commutative, so any permutation of the same outcomes (for
    instance, results gathered from a different number of workers) gives
    identical statistics.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValidationError("no outcomes to summarize")
    masked = sdc = due = 0
    geometry: dict[GeometryClass, int] = {}
    criticality: dict[Criticality, int] = {}
    due_reasons: dict[DueReason, int] = {}
    for oc in outcomes:
        if oc.kind is OutcomeKind.MASKED:
            masked += 1
        elif oc.kind is OutcomeKind.SDC:
            sdc += 1
            geometry[oc.geometry] = geometry.get(oc.geometry, 0) + 1
            if oc.criticality is not None:
                criticality[oc.criticality] = criticality.get(oc.criticality, 0) + 1
        else:
            due += 1
            due_reasons[oc.due_reason] = due_reasons.get(oc.due_reason, 0) + 1
    return CampaignStats(
        n_injections=len(outcomes),
        masked=masked, sdc=sdc, due=due,
        geometry=geometry, criticality=criticality, due_reasons=due_reasons,
    )
