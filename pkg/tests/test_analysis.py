"""Diffing, geometry classes, Wilson intervals, FIT, outcome tallies."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.stats.proportion import proportion_confint

from warpfault.analysis import (
    CampaignStats,
    Criticality,
    Diff,
    DueReason,
    FitParams,
    GeometryClass,
    Outcome,
    OutcomeKind,
    classify_geometry,
    diff,
    fit_rate,
    svf,
    wilson_ci95,
)
from warpfault.errors import ValidationError
from warpfault.numerics import Precision

from reference import oracle_geometry, random_coord_sets


# ---------------------------------------------------------------------------
# diff
# ---------------------------------------------------------------------------

def test_diff_identical_is_empty():
    m = np.arange(12, dtype=np.uint32).reshape(3, 4)
    d = diff(m, m.copy())
    assert not d
    assert len(d) == 0
    assert d.dims == (3, 4)


def test_diff_single_flipped_word():
    golden = np.arange(12, dtype=np.uint32).reshape(3, 4)
    observed = golden.copy()
    observed[1, 2] ^= 0x1
    d = diff(golden, observed)
    assert d.corrupted == {(1, 2)}
    assert d.magnitudes[(1, 2)] == (6, 7)


def test_diff_shape_mismatch_rejected():
    with pytest.raises(ValidationError):
        diff(np.zeros((2, 2), dtype=np.uint32), np.zeros((2, 3), dtype=np.uint32))


def test_diff_exact_treats_identical_nans_as_equal():
    golden = np.full((2, 2), 0x7FC00000, dtype=np.uint32)
    assert not diff(golden, golden.copy())


def test_diff_epsilon_forgives_one_ulp():
    golden = np.full((4, 4), 0x3F800000, dtype=np.uint32)  # 1.0f
    observed = golden.copy()
    observed[2, 3] += 1  # next representable float up
    assert diff(golden, observed)  # exact policy sees it
    d = diff(golden, observed, rel_tol=1e-6, precision=Precision.FP32)
    assert not d


def test_diff_epsilon_never_forgives_nan():
    golden = np.full((2, 2), 0x7FC00000, dtype=np.uint32)
    d = diff(golden, golden.copy(), rel_tol=1e-3, precision=Precision.FP32)
    assert d.corrupted == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_diff_epsilon_zero_golden():
    golden = np.zeros((1, 3), dtype=np.uint32)
    observed = golden.copy()
    observed[0, 1] = 0x80000000  # minus zero: equal as values
    observed[0, 2] = 0x00000001  # smallest subnormal: corrupted
    d = diff(golden, observed, rel_tol=1e-3, precision=Precision.FP32)
    assert d.corrupted == {(0, 2)}


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def test_geometry_examples():
    assert classify_geometry({(3, 5)}) is GeometryClass.SINGLE
    assert classify_geometry({(2, 0), (2, 5), (2, 9)}) is GeometryClass.LINE
    assert classify_geometry({(0, 4), (7, 4)}) is GeometryClass.LINE
    assert classify_geometry({(1, 1), (1, 2), (2, 1), (2, 2)}) is GeometryClass.SQUARE
    assert classify_geometry({(0, 0), (5, 9), (11, 3)}) is GeometryClass.RANDOM


def test_geometry_precedence_line_beats_square():
    # four elements, but all in one row
    assert classify_geometry({(3, 0), (3, 1), (3, 2), (3, 3)}) is GeometryClass.LINE


def test_geometry_sparse_rectangle_is_random():
    # 4 corners of a 10x10 box: density 0.04
    corners = {(0, 0), (0, 9), (9, 0), (9, 9)}
    assert classify_geometry(corners) is GeometryClass.RANDOM


def test_geometry_density_knob():
    corners = {(0, 0), (0, 9), (9, 0), (9, 9)}
    assert classify_geometry(corners, square_density=0.04) is GeometryClass.SQUARE


def test_geometry_empty_rejected():
    with pytest.raises(ValidationError):
        classify_geometry(set())


def test_geometry_matches_brute_force_oracle():
    sets = list(random_coord_sets(seed=20240601, count=1000))
    assert len(sets) == 1000
    seen = set()
    for coords in sets:
        got = classify_geometry(coords)
        assert got is oracle_geometry(coords), sorted(coords)
        seen.add(got)
    assert seen == set(GeometryClass)


# ---------------------------------------------------------------------------
# Wilson interval
# ---------------------------------------------------------------------------

def test_wilson_frozen_midpoint_case():
    lo, hi = wilson_ci95(50, 100)
    assert abs(lo - 0.40383) < 1e-5
    assert abs(hi - 0.59617) < 1e-5


def test_wilson_boundaries():
    assert wilson_ci95(0, 20)[0] == 0.0
    assert wilson_ci95(0, 20)[1] > 0.0
    assert wilson_ci95(20, 20)[1] == 1.0
    assert wilson_ci95(20, 20)[0] < 1.0


def test_wilson_rejects_bad_counts():
    with pytest.raises(ValidationError):
        wilson_ci95(5, 4)
    with pytest.raises(ValidationError):
        wilson_ci95(-1, 4)
    with pytest.raises(ValidationError):
        wilson_ci95(0, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=10000), st.data())
def test_wilson_matches_statsmodels(n, data):
    k = data.draw(st.integers(min_value=0, max_value=n))
    lo, hi = wilson_ci95(k, n)
    ref_lo, ref_hi = proportion_confint(k, n, alpha=0.05, method="wilson")
    # statsmodels uses the exact normal quantile, we pin z = 1.96
    assert abs(lo - ref_lo) < 1e-4
    assert abs(hi - ref_hi) < 1e-4
    assert 0.0 <= lo <= k / n <= hi <= 1.0


# ---------------------------------------------------------------------------
# FIT
# ---------------------------------------------------------------------------

def test_fit_frozen_case_is_exact():
    assert fit_rate(100, FitParams(fluence=1e10, reference_flux=13.0)) == 130.0


def test_fit_zero_errors():
    assert fit_rate(0, FitParams(fluence=1e10)) == 0.0


def test_fit_scaling_relations():
    base = FitParams(fluence=3.7e9, reference_flux=13.0)
    f = fit_rate(250, base)
    assert fit_rate(500, base) == 2 * f
    assert fit_rate(250, FitParams(fluence=2 * 3.7e9, reference_flux=13.0)) == f / 2
    doubled_flux = FitParams(fluence=3.7e9, reference_flux=26.0)
    assert fit_rate(250, doubled_flux) == 2 * f


def test_fit_rejects_bad_params():
    with pytest.raises(ValidationError):
        FitParams(fluence=0.0)
    with pytest.raises(ValidationError):
        FitParams(fluence=1e10, reference_flux=-1.0)
    with pytest.raises(ValidationError):
        fit_rate(-1, FitParams(fluence=1e10))


# ---------------------------------------------------------------------------
# outcomes and stats
# ---------------------------------------------------------------------------

def test_outcome_invariants():
    Outcome.masked()
    Outcome.sdc(GeometryClass.LINE)
    Outcome.sdc(GeometryClass.SINGLE, Criticality.TOLERABLE)
    Outcome.due(DueReason.CRASH)
    with pytest.raises(ValidationError):
        Outcome(kind=OutcomeKind.SDC)
    with pytest.raises(ValidationError):
        Outcome(kind=OutcomeKind.DUE)
    with pytest.raises(ValidationError):
        Outcome(kind=OutcomeKind.MASKED, geometry=GeometryClass.SINGLE)
    with pytest.raises(ValidationError):
        Outcome(kind=OutcomeKind.DUE, due_reason=DueReason.HANG,
                criticality=Criticality.TOLERABLE)


def test_outcome_json_round_trip():
    cases = [
        Outcome.masked(),
        Outcome.sdc(GeometryClass.SQUARE),
        Outcome.sdc(GeometryClass.RANDOM, Criticality.FALSE_POSITIVE),
        Outcome.due(DueReason.ECC_DOUBLE_BIT),
    ]
    for oc in cases:
        assert Outcome.from_json(oc.to_json()) == oc


def _mixed_outcomes():
    out = []
    out += [Outcome.masked()] * 40
    out += [Outcome.sdc(GeometryClass.SINGLE, Criticality.TOLERABLE)] * 20
    out += [Outcome.sdc(GeometryClass.SQUARE, Criticality.CLASS_CHANGE)] * 25
    out += [Outcome.sdc(GeometryClass.LINE, Criticality.FALSE_POSITIVE)] * 5
    out += [Outcome.due(DueReason.HANG)] * 6
    out += [Outcome.due(DueReason.CRASH)] * 4
    return out


def test_svf_counts_and_fractions():
    stats = svf(_mixed_outcomes())
    assert stats.n_injections == 100
    assert stats.masked + stats.sdc + stats.due == 100
    assert stats.sdc == 50
    assert stats.svf == 0.5
    lo, hi = stats.svf_ci95
    assert abs(lo - 0.40383) < 1e-5
    assert abs(hi - 0.59617) < 1e-5
    assert stats.geometry[GeometryClass.SINGLE] == 20
    assert stats.critical_sdc() == 30
    assert stats.due_reasons[DueReason.HANG] == 6


def test_svf_is_order_invariant():
    outs = _mixed_outcomes()
    rng = np.random.default_rng(4)
    shuffled = [outs[i] for i in rng.permutation(len(outs))]
    assert svf(outs) == svf(shuffled)


def test_svf_all_masked():
    stats = svf([Outcome.masked()] * 30)
    assert stats.svf == 0.0
    lo, hi = stats.svf_ci95
    assert lo == 0.0 and hi > 0.0


def test_svf_rejects_empty():
    with pytest.raises(ValidationError):
        svf([])


def test_stats_rows_cover_every_class():
    stats = svf(_mixed_outcomes())
    rows = {label: (count, frac) for label, count, frac, _, _ in stats.rows()}
    assert rows["masked"] == (40, 0.40)
    assert rows["sdc"] == (50, 0.50)
    assert rows["due"] == (10, 0.10)
    assert rows["sdc:single"] == (20, 0.20)
    assert rows["sdc:critical"] == (30, 0.30)
    assert rows["sdc:critical:false_positive"] == (5, 0.05)
    assert rows["sdc:tolerable"] == (20, 0.20)
    assert rows["due:crash"] == (4, 0.04)
    json_obj = stats.to_json()
    assert json_obj["classes"]["sdc"]["count"] == 50
