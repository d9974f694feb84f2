"""warpfault: deterministic warp-level fault injection for GPU-style GEMM kernels.

The package simulates lockstep 32-lane warps running tiled matrix multiplies
(a plain FMA pipeline and a tensor-style 4x4 MMA pipeline), injects transient
faults into instruction destination registers, and classifies the outcomes the
way beam-test campaigns do: masked, silent data corruption with a spatial
pattern, or detected/unrecoverable events.  A small detection network built on
the same kernels grades how much a corruption matters, and the campaign layer
turns all of it into seeded, replayable injection runs.
"""

__version__ = "0.1.0"

from .analysis import (
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
from .campaign import (
    CampaignConfig,
    CampaignResult,
    GemmTarget,
    NetworkTarget,
    Thresholds,
    generate_assets,
    load_log,
    parse_config,
    render_report,
    replay_log,
    run_campaign,
)
from .engine import (
    Algorithm,
    ExecStatus,
    KernelConfig,
    golden_padded,
    run_gemm,
    site_to_elements,
    trace_profile,
)
from .errors import (
    DumpFormatError,
    DumpVersionError,
    InvalidSiteError,
    LogFormatError,
    LogVersionError,
    NoSitesError,
    ValidationError,
    WarpFaultError,
)
from .faults import (
    EccAction,
    EccMode,
    FaultDescriptor,
    FaultModel,
    FaultSite,
    RegisterClass,
    StorageClass,
    apply_fault,
    child_seed,
    ecc_filter,
    make_descriptor,
    rng_for,
)
from .matio import read_matrix, read_weights, write_matrix, write_weights
from .network import (
    Detection,
    Network,
    classify_criticality,
    decode_detections,
    frame_for_seed,
    generate_frames,
    generate_reference_weights,
    im2col,
)
from .numerics import (
    Precision,
    RoundingMode,
    Tile4x4,
    f16_to_f32,
    f32_to_f16,
    flip_bits,
    float_from_word,
    fma,
    mma_4x4,
    pack_fp16_pair,
    unpack_fp16_pair,
    word_from_float,
)

__all__ = [
    "__version__",
    # numerics
    "Precision", "RoundingMode", "Tile4x4", "fma", "mma_4x4",
    "pack_fp16_pair", "unpack_fp16_pair", "flip_bits",
    "f16_to_f32", "f32_to_f16", "word_from_float", "float_from_word",
    # engine
    "Algorithm", "ExecStatus", "KernelConfig", "run_gemm", "golden_padded",
    "trace_profile", "site_to_elements",
    # faults
    "FaultModel", "RegisterClass", "StorageClass", "EccMode", "EccAction",
    "FaultSite", "FaultDescriptor", "make_descriptor", "apply_fault",
    "ecc_filter", "child_seed", "rng_for",
    # analysis
    "Outcome", "OutcomeKind", "GeometryClass", "Criticality", "DueReason",
    "Diff", "diff", "classify_geometry", "wilson_ci95", "svf",
    "CampaignStats", "FitParams", "fit_rate",
    # network
    "Network", "Detection", "decode_detections", "classify_criticality",
    "generate_reference_weights", "generate_frames", "frame_for_seed",
    "im2col",
    # campaign
    "CampaignConfig", "CampaignResult", "GemmTarget", "NetworkTarget",
    "Thresholds", "run_campaign", "replay_log", "load_log", "parse_config",
    "render_report", "generate_assets",
    # dump and log formats
    "read_matrix", "write_matrix", "read_weights", "write_weights",
    # errors
    "WarpFaultError", "ValidationError", "InvalidSiteError", "NoSitesError",
    "LogFormatError", "LogVersionError", "DumpFormatError", "DumpVersionError",
]
