"""End-to-end acceptance suite: ten advertised behaviours, one test each.

Every test prints a single PASS/FAIL line with its wall time, so

    pytest tests/test_acceptance.py -v -s

doubles as the sign-off checklist.  All seeds are frozen literals; a run is
bit-reproducible down to the campaign logs it writes into tmp dirs.  Each
criterion also carries a wall-clock ceiling, asserted like any other
expectation.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np

from warpfault.analysis import (
    DueReason,
    FitParams,
    GeometryClass,
    classify_geometry,
    diff,
    fit_rate,
    wilson_ci95,
)
from warpfault.campaign import (
    CampaignConfig,
    GemmTarget,
    NetworkTarget,
    render_report,
    replay_log,
    run_campaign,
)
from warpfault.engine import (
    Algorithm,
    ExecStatus,
    KernelConfig,
    golden_padded,
    load_coords,
    run_gemm,
    trace_profile,
)
from warpfault.faults import (
    EccMode,
    FaultDescriptor,
    FaultModel,
    FaultSite,
    RegisterClass,
    StorageClass,
    child_seed,
    draw_payload,
    rng_for,
)
from warpfault.network import im2col
from warpfault.numerics import (
    Precision,
    Tile4x4,
    float_from_word,
    mma_4x4,
)

from reference import (
    oracle_geometry,
    random_coord_sets,
    random_matrix,
    scalar_direct_conv,
    scalar_software_gemm,
)


@contextmanager
def criterion(tag: str, budget_s: float):
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        if elapsed >= budget_s:
            raise AssertionError(
                f"{tag} took {elapsed:.1f}s, over its {budget_s:.0f}s budget")
    except BaseException:
        print(f"{tag}: FAIL ({time.perf_counter() - t0:.1f}s)")
        raise
    print(f"{tag}: PASS ({elapsed:.1f}s)")


def _gemm_inputs(master_seed: int, m: int, n: int, k: int, precision: Precision):
    a = random_matrix(rng_for(child_seed(master_seed, "gemm_a", 0)), (m, k), precision)
    b = random_matrix(rng_for(child_seed(master_seed, "gemm_b", 0)), (k, n), precision)
    return a, b


def _campaign(tmp_path, name: str, target, mix, seed: int, **kw):
    config = CampaignConfig(target=target, fault_mix=tuple(mix),
                            master_seed=seed, **kw)
    out = tmp_path / name
    out.mkdir()
    return run_campaign(config, out)


# ---------------------------------------------------------------------------
# 1. single bit flips corrupt exactly one output element
# ---------------------------------------------------------------------------

def test_single_bit_flips_stay_single(tmp_path):
    with criterion("[ 1/10] 644 single-bit flips, fp32 gemm: every SDC is Single", 120):
        target = GemmTarget(m=256, n=256, k=256,
                            algorithm=Algorithm.SOFTWARE_GEMM,
                            precision=Precision.FP32)
        res = _campaign(tmp_path, "sbf", target,
                        [(FaultModel.SINGLE_BIT_FLIP, 644)], seed=31001)
        stats = res.overall
        assert res.anomalies == 0
        assert stats.n_injections == 644
        assert stats.sdc > 0
        assert stats.geometry.get(GeometryClass.SINGLE, 0) == stats.sdc


# ---------------------------------------------------------------------------
# 2. a random value in a packed fp16 accumulator corrupts the whole pair
# ---------------------------------------------------------------------------

def test_fp16_value_replacement_corrupts_pairs():
    with criterion("[ 2/10] 644 random values at packed fma sites: every SDC has >= 2 elements", 120):
        cfg = KernelConfig(m=256, n=256, k=256,
                           algorithm=Algorithm.SOFTWARE_GEMM,
                           precision=Precision.FP16)
        prof = trace_profile(cfg)
        ffma = prof.find_instructions("ffma")
        a, b = _gemm_inputs(31007, 256, 256, 256, Precision.FP16)
        padded = golden_padded(a, b, cfg)
        gold = padded[:256, :256]

        sdc = 0
        for i in range(644):
            seed = child_seed(31007, "srv_ffma", i)
            rng = rng_for(seed)
            dyn = ffma[int(rng.integers(len(ffma)))]
            warp = int(rng.integers(cfg.warp_count))
            lane = int(rng.integers(cfg.active_lanes))
            site = FaultSite(kernel_index=0, warp_id=warp, lane=lane,
                             dyn_inst=dyn,
                             register_class=RegisterClass.ARITHMETIC_DEST,
                             storage_class=StorageClass.UNPROTECTED_DATAPATH)
            # the descriptor draw order matches make_descriptor: site, then payload
            payload = draw_payload(rng, FaultModel.SINGLE_RANDOM_VALUE,
                                   cfg.active_lanes)
            desc = FaultDescriptor(model=FaultModel.SINGLE_RANDOM_VALUE,
                                   site=site, payload=payload, seed=seed)
            res = run_gemm(a, b, cfg, desc, profile=prof, golden=padded)
            assert res.status is ExecStatus.COMPLETED
            d = diff(gold, res.c)
            if d:
                sdc += 1
                assert len(d) >= 2, sorted(d.corrupted)
        assert sdc > 0


# ---------------------------------------------------------------------------
# 3. warp-wide random values produce square-ish error regions
# ---------------------------------------------------------------------------

def test_warp_faults_make_square_regions(tmp_path):
    with criterion("[ 3/10] 644 warp random values per precision: Square fraction >= 0.90", 300):
        for precision in (Precision.FP32, Precision.FP16):
            target = GemmTarget(m=256, n=256, k=256,
                                algorithm=Algorithm.SOFTWARE_GEMM,
                                precision=precision)
            res = _campaign(tmp_path, f"wrv_{precision.value}", target,
                            [(FaultModel.WARP_RANDOM_VALUE, 644)], seed=31003)
            stats = res.overall
            assert stats.sdc > 0
            square = stats.geometry.get(GeometryClass.SQUARE, 0)
            assert square / stats.sdc >= 0.90, (precision, square, stats.sdc)


# ---------------------------------------------------------------------------
# 4. SecDed corrects single flips, detects double flips, ignores the datapath
# ---------------------------------------------------------------------------

def test_ecc_filters_protected_faults(tmp_path):
    with criterion("[ 4/10] SecDed: 200 flips corrected, 200 double flips DUE, datapath untouched", 180):
        target = GemmTarget(m=64, n=64, k=64,
                            algorithm=Algorithm.SOFTWARE_GEMM,
                            precision=Precision.FP32)

        corrected = _campaign(tmp_path, "ecc_sbf", target,
                              [(FaultModel.SINGLE_BIT_FLIP, 200)],
                              seed=31004, ecc=EccMode.SECDED)
        assert corrected.overall.masked == 200

        detected = _campaign(tmp_path, "ecc_dbf", target,
                             [(FaultModel.DOUBLE_BIT_FLIP, 200)],
                             seed=31004, ecc=EccMode.SECDED)
        assert detected.overall.due == 200
        assert detected.overall.due_reasons == {DueReason.ECC_DOUBLE_BIT: 200}

        mix = [(FaultModel.WARP_RANDOM_VALUE, 200)]
        with_ecc = _campaign(tmp_path, "ecc_wrv", target, mix,
                             seed=31004, ecc=EccMode.SECDED)
        without = _campaign(tmp_path, "noecc_wrv", target, mix, seed=31004)
        lo_e, hi_e = with_ecc.overall.svf_ci95
        lo_o, hi_o = without.overall.svf_ci95
        assert lo_e <= hi_o and lo_o <= hi_e  # overlapping 95% intervals
        assert with_ecc.overall.svf == without.overall.svf  # datapath is out of ECC reach


# ---------------------------------------------------------------------------
# 5. criticality ordering across fault models on the detection network
# ---------------------------------------------------------------------------

def _critical_fraction(stats):
    crit = stats.critical_sdc()
    lo, hi = wilson_ci95(crit, stats.n_injections)
    return crit / stats.n_injections, (hi - lo) / 2


def test_fault_model_severity_ordering(tmp_path):
    with criterion("[ 5/10] 2000 injections per model per precision: severity ordering with CI gaps", 1800):
        mix = [(model, 2000) for model in FaultModel]
        for precision in (Precision.FP32, Precision.FP16):
            res = _campaign(tmp_path, f"nn_{precision.value}",
                            NetworkTarget(precision=precision), mix,
                            seed=31005, workers=2)
            assert res.anomalies == 0
            frac = {}
            half = {}
            for model in FaultModel:
                frac[model], half[model] = _critical_fraction(res.per_model[model])
            mix_frac, mix_half = _critical_fraction(res.overall)

            wrv, srv, sbf = (FaultModel.WARP_RANDOM_VALUE,
                             FaultModel.SINGLE_RANDOM_VALUE,
                             FaultModel.SINGLE_BIT_FLIP)
            wzv = FaultModel.WARP_ZERO_VALUE
            assert frac[wrv] - frac[srv] > half[wrv] + half[srv], (precision, frac)
            assert frac[srv] - frac[sbf] > half[srv] + half[sbf], (precision, frac)
            assert mix_frac - frac[wzv] > mix_half + half[wzv], (precision, frac, mix_frac)


# ---------------------------------------------------------------------------
# 6. geometry classifier agrees with a brute-force transcription of the rules
# ---------------------------------------------------------------------------

def test_geometry_against_brute_force():
    with criterion("[ 6/10] 1000 random coordinate sets: classifier == brute-force oracle", 10):
        seen = set()
        for coords in random_coord_sets(seed=20260816, count=1000):
            assert 1 <= len(coords) <= 64
            got = classify_geometry(coords)
            assert got is oracle_geometry(coords), sorted(coords)
            seen.add(got)
        assert seen == set(GeometryClass)


# ---------------------------------------------------------------------------
# 7. FIT arithmetic: the worked example plus exact linearity
# ---------------------------------------------------------------------------

def test_fit_rate_example_and_linearity():
    with criterion("[ 7/10] 100 errors at fluence 1e10, flux 13 -> 130 FIT; linear in all factors", 1):
        assert fit_rate(100, FitParams(fluence=1e10, reference_flux=13.0)) == 130.0

        rng = np.random.default_rng(31006)
        for _ in range(100):
            n = int(rng.integers(1, 1_000_001))
            fluence = float(10.0 ** rng.uniform(6, 14))
            flux = float(rng.uniform(1.0, 100.0))
            base = fit_rate(n, FitParams(fluence=fluence, reference_flux=flux))
            assert fit_rate(2 * n, FitParams(fluence=fluence, reference_flux=flux)) == 2 * base
            assert fit_rate(n, FitParams(fluence=2 * fluence, reference_flux=flux)) == base / 2
            assert fit_rate(n, FitParams(fluence=fluence, reference_flux=2 * flux)) == 2 * base


# ---------------------------------------------------------------------------
# 8. campaigns are reproducible and replayable regardless of worker count
# ---------------------------------------------------------------------------

def test_campaign_reproducibility_and_replay(tmp_path):
    with criterion("[ 8/10] identical logs and stats across reruns and worker counts; replay 100%", 300):
        mix = [(FaultModel.SINGLE_BIT_FLIP, 40), (FaultModel.WARP_RANDOM_VALUE, 40)]
        target = NetworkTarget(precision=Precision.FP32)
        runs = []
        for name, workers in (("first", 1), ("second", 1), ("parallel", 3)):
            config = CampaignConfig(target=target, fault_mix=tuple(mix),
                                    master_seed=31008, workers=workers)
            out = tmp_path / name
            out.mkdir()
            res = run_campaign(config, out)
            runs.append((res, res.log_path.read_bytes(),
                         render_report(res.per_model, res.overall, config, "json")))
        (res0, log0, report0) = runs[0]
        for res, log, report in runs[1:]:
            assert log == log0
            assert report == report0

        replayed, mismatches = replay_log(res0.log_path)
        assert replayed == 80
        assert mismatches == []


# ---------------------------------------------------------------------------
# 9. fault-free paths match slow scalar references bit for bit
# ---------------------------------------------------------------------------

def test_fault_free_matches_scalar_references():
    with criterion("[ 9/10] 100 clean gemms per precision + 50 convs match scalar loops bitwise", 120):
        for precision in (Precision.FP32, Precision.FP16):
            for case in range(100):
                rng = rng_for(child_seed(31009, f"gemm_{precision.value}", case))
                m, n, k = (int(v) for v in rng.integers(1, 13, size=3))
                a = random_matrix(rng, (m, k), precision)
                b = random_matrix(rng, (k, n), precision)
                cfg = KernelConfig(m=m, n=n, k=k,
                                   algorithm=Algorithm.SOFTWARE_GEMM,
                                   precision=precision)
                res = run_gemm(a, b, cfg)
                assert res.status is ExecStatus.COMPLETED
                assert np.array_equal(res.c, scalar_software_gemm(a, b, precision))

        for case in range(50):
            precision = Precision.FP16 if case % 2 else Precision.FP32
            rng = rng_for(child_seed(31009, "conv", case))
            channels = int(rng.integers(1, 4))
            kh, kw = (int(v) for v in rng.integers(1, 4, size=2))
            h = int(rng.integers(kh, 9))
            w = int(rng.integers(kw, 9))
            stride = int(rng.integers(1, 3))
            out_c = int(rng.integers(1, 5))
            tensor = random_matrix(rng, (channels, h * w), precision).reshape(channels, h, w)
            weights = random_matrix(rng, (out_c, channels * kh * kw), precision)

            patches = im2col(tensor, kh, kw, stride)
            cfg = KernelConfig(m=out_c, n=patches.shape[1], k=patches.shape[0],
                               algorithm=Algorithm.SOFTWARE_GEMM, precision=precision)
            lowered = run_gemm(weights, patches, cfg)
            direct = scalar_direct_conv(tensor, weights, kh, kw, stride, precision)
            assert lowered.status is ExecStatus.COMPLETED
            assert np.array_equal(lowered.c, direct)


# ---------------------------------------------------------------------------
# 10. toward-zero narrowing masks low mantissa bits; mma matches exact rationals
# ---------------------------------------------------------------------------

_FP32_GRID = (23, -126, 127)
_FP16_GRID = (10, -14, 15)


def _round_toward_zero(x: Fraction, grid) -> Fraction:
    """Independent toward-zero rounding of an exact rational onto a binary grid."""
    mant, emin, emax = grid
    if x == 0:
        return Fraction(0)
    sign = -1 if x < 0 else 1
    m = abs(x)
    e = m.numerator.bit_length() - m.denominator.bit_length()
    while Fraction(2) ** e > m:
        e -= 1
    while Fraction(2) ** (e + 1) <= m:
        e += 1
    if e > emax:
        return sign * (2 ** (mant + 1) - 1) * Fraction(2) ** (emax - mant)
    quantum = Fraction(2) ** (max(e, emin) - mant)
    steps = m / quantum
    return sign * (steps.numerator // steps.denominator) * quantum


def _exact_mma(a: Tile4x4, b: Tile4x4, c: Tile4x4, out_precision: Precision):
    expected = []
    for i in range(4):
        for j in range(4):
            acc = Fraction(float_from_word(c.at(i, j), out_precision))
            for kk in range(4):
                av = Fraction(float_from_word(a.at(i, kk), Precision.FP16))
                bv = Fraction(float_from_word(b.at(kk, j), Precision.FP16))
                acc = _round_toward_zero(av * bv + acc, _FP32_GRID)
            if out_precision is Precision.FP16:
                acc = _round_toward_zero(acc, _FP16_GRID)
            expected.append(acc)
    return expected


def _a_load_site(cfg, profile, r, t):
    """Site whose ld_a destination holds a[r, t], in the row's first warp."""
    warp = (r // cfg.tile_m) * cfg.warps_cols
    it = t if cfg.algorithm is Algorithm.SOFTWARE_GEMM else t // 4
    for lane in range(cfg.active_lanes):
        if (r, t) in load_coords(cfg, warp, lane, it, "A"):
            dyn = profile.find_instructions("ld_a", it=it)[0]
            return FaultSite(kernel_index=0, warp_id=warp, lane=lane,
                             dyn_inst=dyn,
                             register_class=RegisterClass.ARITHMETIC_DEST,
                             storage_class=StorageClass.UNPROTECTED_DATAPATH)
    raise AssertionError(f"no lane loads a[{r}, {t}]")


def test_truncation_masks_low_bits_and_mma_is_exact():
    with criterion("[10/10] low-bit flips: tensor-core masks >= software; mma == exact rationals", 180):
        M = N = K = 64
        sw = KernelConfig(m=M, n=N, k=K, algorithm=Algorithm.SOFTWARE_GEMM,
                          precision=Precision.FP32)
        tc = KernelConfig(m=M, n=N, k=K, algorithm=Algorithm.TENSOR_CORE_GEMM,
                          precision=Precision.FP32)
        a, b = _gemm_inputs(31010, M, N, K, Precision.FP32)
        pipelines = [(cfg, trace_profile(cfg), golden_padded(a, b, cfg))
                     for cfg in (sw, tc)]

        masked = [0, 0]
        for i in range(644):
            seed = child_seed(31010, "lowbit", i)
            rng = rng_for(seed)
            r = int(rng.integers(M))
            t = int(rng.integers(K))
            bit = int(rng.integers(13))  # below everything binary16 keeps
            for which, (cfg, prof, padded) in enumerate(pipelines):
                site = _a_load_site(cfg, prof, r, t)
                desc = FaultDescriptor(model=FaultModel.SINGLE_BIT_FLIP,
                                       site=site, payload=(bit,), seed=seed)
                res = run_gemm(a, b, cfg, desc, profile=prof, golden=padded)
                if not diff(padded[:M, :N], res.c):
                    masked[which] += 1
        assert masked[1] >= masked[0], masked
        assert masked[0] < 644  # software still sees some of them

        for case in range(100):
            rng = rng_for(child_seed(31011, "mma", case))
            out_p = Precision.FP16 if case % 2 else Precision.FP32
            scale = 2.0 ** -20 if case % 10 == 9 else 1.0
            ta = Tile4x4.from_floats([float(v) * scale for v in rng.uniform(-2, 2, 16)],
                                     Precision.FP16)
            tb = Tile4x4.from_floats([float(v) * scale for v in rng.uniform(-2, 2, 16)],
                                     Precision.FP16)
            tc_tile = Tile4x4.from_floats([float(v) * scale for v in rng.uniform(-1, 1, 16)],
                                          out_p)
            got = mma_4x4(ta, tb, tc_tile, out_p)
            expected = _exact_mma(ta, tb, tc_tile, out_p)
            for idx in range(16):
                assert Fraction(float_from_word(got.words[idx], out_p)) == expected[idx]
