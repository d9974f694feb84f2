"""Campaign orchestration: config files, parallel seeded injection, logs, reports.

A campaign is a reproducible experiment: one target (a GEMM kernel or the
reference detection network), a mix of fault models with injection counts, an
ECC mode, and a master seed.  Every injection derives a child seed from
(master seed, model name, index), so any record can be recomputed in isolation
and the whole log is a pure function of the config: running with one worker or
eight produces byte-identical files.

The log is JSON lines: a header object first, then one record per injection in
canonical order (models in declaration order, indices ascending).  The writer
flushes after every record, which is what makes `--resume` safe: after a crash
the file is a clean prefix of the canonical sequence.  The per-record `timing`
field is the dynamic instruction count of the interpreted warp, a simulated
cost; wall-clock time never enters the log, by design.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import __version__, kernels
from .analysis import (
    CampaignStats,
    Criticality,
    DueReason,
    FitParams,
    GeometryClass,
    Outcome,
    classify_geometry,
    diff,
    fit_rate,
    svf,
    wilson_ci95,
)
from .engine import (
    Algorithm,
    ExecStatus,
    KernelConfig,
    golden_padded,
    run_gemm,
    trace_profile,
)
from .errors import LogFormatError, LogVersionError, ValidationError
from .faults import (
    EccAction,
    EccMode,
    FaultModel,
    RegisterClass,
    StorageClass,
    child_seed,
    ecc_filter,
    make_descriptor,
    rng_for,
)
from .matio import read_matrix, read_weights, write_matrix, write_weights
from .network import (
    CONF_THRESHOLD,
    FRAME_SHAPE,
    MATCH_IOU,
    NMS_IOU,
    TOLERABLE_IOU,
    Network,
    classify_criticality,
    frame_for_seed,
    generate_frames,
    generate_reference_weights,
)
from .numerics import Precision

LOG_FORMAT = "wfcl"
LOG_VERSION = 1

_MODEL_ORDER = {model: i for i, model in enumerate(FaultModel)}

_ALGORITHM_NAMES = {
    "software": Algorithm.SOFTWARE_GEMM,
    "software_gemm": Algorithm.SOFTWARE_GEMM,
    "tensor_core": Algorithm.TENSOR_CORE_GEMM,
    "tensor_core_gemm": Algorithm.TENSOR_CORE_GEMM,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GemmTarget:
    m: int
    n: int
    k: int
    algorithm: Algorithm
    precision: Precision

    kind = "gemm"

    def __post_init__(self):
        for name in ("m", "n", "k"):
            if getattr(self, name) < 1:
                raise ValidationError(f"gemm dimension {name} must be positive")

    def to_json(self) -> dict:
        return {"kind": self.kind, "m": self.m, "n": self.n, "k": self.k,
                "algorithm": self.algorithm.value,
                "precision": self.precision.value}


@dataclass(frozen=True)
class NetworkTarget:
    precision: Precision
    weights_path: str | None = None
    frames_dir: str | None = None

    kind = "network"

    def __post_init__(self):
        if self.weights_path is not None and not Path(self.weights_path).is_file():
            raise ValidationError(f"weights file not found: {self.weights_path}")
        if self.frames_dir is not None and not Path(self.frames_dir).is_dir():
            raise ValidationError(f"frames directory not found: {self.frames_dir}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "precision": self.precision.value,
                "weights": self.weights_path, "frames": self.frames_dir}


@dataclass(frozen=True)
class Thresholds:
    square_density: float = 0.5
    confidence: float = CONF_THRESHOLD
    nms_iou: float = NMS_IOU
    match_iou: float = MATCH_IOU
    tolerable_iou: float = TOLERABLE_IOU

    def __post_init__(self):
        if not 0.0 < self.square_density <= 1.0:
            raise ValidationError("square_density must be in (0, 1]")
        for name in ("confidence", "nms_iou", "match_iou", "tolerable_iou"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1]")

    def to_json(self) -> dict:
        return {"square_density": self.square_density,
                "confidence": self.confidence, "nms_iou": self.nms_iou,
                "match_iou": self.match_iou, "tolerable_iou": self.tolerable_iou}


@dataclass(frozen=True)
class CampaignConfig:
    """Everything that identifies a campaign, plus the worker count.

    The worker count controls scheduling only; it is deliberately excluded
    from `to_json` and the config hash because logs and stats must not
    depend on it.
    """

    target: GemmTarget | NetworkTarget
    fault_mix: tuple[tuple[FaultModel, int], ...]
    master_seed: int
    register_classes: frozenset[RegisterClass] = frozenset(
        {RegisterClass.ARITHMETIC_DEST})
    storage_override: StorageClass | None = None
    ecc: EccMode = EccMode.OFF
    workers: int = 1
    thresholds: Thresholds = Thresholds()
    fit: FitParams | None = None

    def __post_init__(self):
        if not self.fault_mix:
            raise ValidationError("fault mix is empty")
        seen = set()
        for model, count in self.fault_mix:
            if model in seen:
                raise ValidationError(f"duplicate fault model {model.value}")
            seen.add(model)
            if not isinstance(count, int) or count < 1:
                raise ValidationError(
                    f"injection count for {model.value} must be a positive "
                    f"integer, got {count!r}")
        object.__setattr__(self, "fault_mix", tuple(
            sorted(self.fault_mix, key=lambda mc: _MODEL_ORDER[mc[0]])))
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValidationError("master_seed must fit in 64 bits")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if not self.register_classes:
            raise ValidationError("register class set is empty")

    @property
    def total_injections(self) -> int:
        return sum(count for _, count in self.fault_mix)

    def sequence(self) -> list[tuple[FaultModel, int]]:
        """Canonical (model, index) order; the log follows it exactly."""
        return [(model, i) for model, count in self.fault_mix
                for i in range(count)]

    def to_json(self) -> dict:
        return {
            "target": self.target.to_json(),
            "fault_mix": {m.value: c for m, c in self.fault_mix},
            "register_classes": sorted(c.value for c in self.register_classes),
            "storage": (None if self.storage_override is None
                        else self.storage_override.value),
            "ecc": self.ecc.value,
            "master_seed": self.master_seed,
            "thresholds": self.thresholds.to_json(),
            "fit": (None if self.fit is None else
                    {"fluence": self.fit.fluence,
                     "reference_flux": self.fit.reference_flux}),
        }

    @classmethod
    def from_json(cls, obj: Mapping, workers: int = 1) -> "CampaignConfig":
        tgt = obj["target"]
        if tgt["kind"] == "gemm":
            target: GemmTarget | NetworkTarget = GemmTarget(
                m=tgt["m"], n=tgt["n"], k=tgt["k"],
                algorithm=Algorithm(tgt["algorithm"]),
                precision=Precision(tgt["precision"]))
        elif tgt["kind"] == "network":
            target = NetworkTarget(precision=Precision(tgt["precision"]),
                                   weights_path=tgt.get("weights"),
                                   frames_dir=tgt.get("frames"))
        else:
            raise ValidationError(f"unknown target kind {tgt['kind']!r}")
        th = obj.get("thresholds") or {}
        fit = obj.get("fit")
        return cls(
            target=target,
            fault_mix=tuple((FaultModel(m), int(c))
                            for m, c in obj["fault_mix"].items()),
            master_seed=int(obj["master_seed"]),
            register_classes=frozenset(RegisterClass(c)
                                       for c in obj["register_classes"]),
            storage_override=(None if obj.get("storage") is None
                              else StorageClass(obj["storage"])),
            ecc=EccMode(obj["ecc"]),
            workers=workers,
            thresholds=Thresholds(**th),
            fit=(None if fit is None else
                 FitParams(fluence=fit["fluence"],
                           reference_flux=fit["reference_flux"])),
        )

    def config_hash(self) -> str:
        return hashlib.sha256(_dumps(self.to_json()).encode()).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _enum_by_value(enum_cls, text: str, what: str):
    try:
        return enum_cls(text)
    except ValueError:
        valid = ", ".join(member.value for member in enum_cls)
        raise ValidationError(f"unknown {what} {text!r} (valid: {valid})") from None


def _getint(section, key: str, where: str) -> int:
    try:
        return int(section[key])
    except (KeyError, ValueError):
        raise ValidationError(f"[{where}] needs integer {key!r}") from None


def _getfloat(section, key: str) -> float:
    try:
        return float(section[key])
    except ValueError:
        raise ValidationError(f"{key!r} must be a number, got "
                              f"{section[key]!r}") from None


_CAMPAIGN_KEYS = {"master_seed", "workers", "ecc", "classes", "storage"}
_GEMM_KEYS = {"kind", "m", "n", "k", "algorithm", "precision"}
_NETWORK_KEYS = {"kind", "precision", "weights", "frames"}
_THRESHOLD_KEYS = {"square_density", "confidence", "nms_iou", "match_iou",
                   "tolerable_iou"}
_FIT_KEYS = {"fluence", "flux"}


def parse_config(path) -> CampaignConfig:
    """Read an INI campaign file; every key is checked, typos are errors."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None

    known = {"campaign", "target", "faults", "thresholds", "fit"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValidationError(f"unknown section(s): {', '.join(sorted(extra))}")
    for required in ("campaign", "target", "faults"):
        if required not in cp:
            raise ValidationError(f"missing [{required}] section")

    camp = cp["campaign"]
    if unknown := set(camp) - _CAMPAIGN_KEYS:
        raise ValidationError(f"unknown [campaign] key(s): "
                              f"{', '.join(sorted(unknown))}")
    master_seed = _getint(camp, "master_seed", "campaign")
    workers = _getint(camp, "workers", "campaign") if "workers" in camp else 1
    ecc = _enum_by_value(EccMode, camp.get("ecc", "off"), "ecc mode")
    if "classes" in camp:
        classes = frozenset(
            _enum_by_value(RegisterClass, token.strip(), "register class")
            for token in camp["classes"].split(",") if token.strip())
    else:
        classes = frozenset({RegisterClass.ARITHMETIC_DEST})
    storage = None
    if "storage" in camp:
        storage = {"protected": StorageClass.PROTECTED_REGISTER,
                   "unprotected": StorageClass.UNPROTECTED_DATAPATH}.get(
                       camp["storage"])
        if storage is None:
            raise ValidationError("storage must be 'protected' or "
                                  "'unprotected' (omit for per-model defaults)")

    tgt = cp["target"]
    kind = tgt.get("kind")
    if kind == "gemm":
        if unknown := set(tgt) - _GEMM_KEYS:
            raise ValidationError(f"unknown [target] key(s): "
                                  f"{', '.join(sorted(unknown))}")
        target: GemmTarget | NetworkTarget = GemmTarget(
            m=_getint(tgt, "m", "target"),
            n=_getint(tgt, "n", "target"),
            k=_getint(tgt, "k", "target"),
            algorithm=_ALGORITHM_NAMES.get(tgt.get("algorithm", ""))
            or _enum_by_value(Algorithm, tgt.get("algorithm", ""), "algorithm"),
            precision=_enum_by_value(Precision, tgt.get("precision", ""),
                                     "precision"))
    elif kind == "network":
        if unknown := set(tgt) - _NETWORK_KEYS:
            raise ValidationError(f"unknown [target] key(s): "
                                  f"{', '.join(sorted(unknown))}")
        target = NetworkTarget(
            precision=_enum_by_value(Precision, tgt.get("precision", ""),
                                     "precision"),
            weights_path=tgt.get("weights"),
            frames_dir=tgt.get("frames"))
    else:
        raise ValidationError("[target] kind must be 'gemm' or 'network'")

    mix = []
    for key, value in cp["faults"].items():
        model = _enum_by_value(FaultModel, key, "fault model")
        try:
            count = int(value)
        except ValueError:
            raise ValidationError(f"injection count for {key} must be an "
                                  f"integer, got {value!r}") from None
        mix.append((model, count))

    thresholds = Thresholds()
    if "thresholds" in cp:
        section = cp["thresholds"]
        if unknown := set(section) - _THRESHOLD_KEYS:
            raise ValidationError(f"unknown [thresholds] key(s): "
                                  f"{', '.join(sorted(unknown))}")
        thresholds = Thresholds(**{key: _getfloat(section, key)
                                   for key in section})

    fit = None
    if "fit" in cp:
        section = cp["fit"]
        if unknown := set(section) - _FIT_KEYS:
            raise ValidationError(f"unknown [fit] key(s): "
                                  f"{', '.join(sorted(unknown))}")
        if "fluence" not in section:
            raise ValidationError("[fit] needs fluence")
        fit = FitParams(fluence=_getfloat(section, "fluence"),
                        reference_flux=(_getfloat(section, "flux")
                                        if "flux" in section else 13.0))

    return CampaignConfig(target=target, fault_mix=tuple(mix),
                          master_seed=master_seed, register_classes=classes,
                          storage_override=storage, ecc=ecc, workers=workers,
                          thresholds=thresholds, fit=fit)


# ---------------------------------------------------------------------------
# target execution state
# ---------------------------------------------------------------------------

class _GemmState:
    """One GEMM target: fixed seeded inputs, cached golden, one profile."""

    def __init__(self, config: CampaignConfig):
        target = config.target
        self.kernel = KernelConfig(algorithm=target.algorithm,
                                   precision=target.precision,
                                   m=target.m, n=target.n, k=target.k)
        self.profiles = [trace_profile(self.kernel)]
        rng_a = rng_for(child_seed(config.master_seed, "gemm_a", 0))
        rng_b = rng_for(child_seed(config.master_seed, "gemm_b", 0))
        self.a = kernels.words_from_values(
            rng_a.uniform(-1.0, 1.0, size=(target.m, target.k)), target.precision)
        self.b = kernels.words_from_values(
            rng_b.uniform(-1.0, 1.0, size=(target.k, target.n)), target.precision)
        self.padded = golden_padded(self.a, self.b, self.kernel)
        self.golden = self.padded[: target.m, : target.n]
        self.square_density = config.thresholds.square_density

    def run(self, descriptor) -> tuple[Outcome, int, int | None]:
        res = run_gemm(self.a, self.b, self.kernel, descriptor,
                       profile=self.profiles[0], golden=self.padded)
        timing = res.dynamic_instruction_count
        if res.status is ExecStatus.HANG:
            return Outcome.due(DueReason.HANG), timing, None
        if res.status is ExecStatus.CRASH:
            return Outcome.due(DueReason.CRASH), timing, None
        d = diff(self.golden, res.c)
        if not d:
            return Outcome.masked(), timing, None
        return Outcome.sdc(classify_geometry(d, self.square_density)), timing, None


class _NetworkState:
    """The reference (or file-loaded) network plus its evaluation frames."""

    def __init__(self, config: CampaignConfig):
        target = config.target
        th = config.thresholds
        weights = (read_weights(target.weights_path) if target.weights_path
                   else generate_reference_weights())
        self.frames = (_load_frames(target.frames_dir) if target.frames_dir
                       else generate_frames())
        self.net = Network(weights, precision=target.precision,
                           conf_threshold=th.confidence, nms_iou=th.nms_iou)
        self.profiles = self.net.profiles
        self.th = th

    def run(self, descriptor) -> tuple[Outcome, int, int | None]:
        frame_idx = frame_for_seed(descriptor.seed, len(self.frames))
        frame = self.frames[frame_idx]
        golden = self.net.golden(frame)
        res = self.net.infer(frame, descriptor)
        timing = res.dynamic_instruction_count or 0
        if res.status is ExecStatus.HANG:
            return Outcome.due(DueReason.HANG), timing, frame_idx
        if res.status is ExecStatus.CRASH:
            return Outcome.due(DueReason.CRASH), timing, frame_idx
        d = diff(golden.raw, res.raw)
        if not d:
            return Outcome.masked(), timing, frame_idx
        geometry = classify_geometry(d, self.th.square_density)
        criticality = classify_criticality(golden.detections, res.detections,
                                           self.th.match_iou,
                                           self.th.tolerable_iou)
        return Outcome.sdc(geometry, criticality), timing, frame_idx


def _load_frames(frames_dir) -> list[np.ndarray]:
    paths = sorted(Path(frames_dir).glob("frame_*.wfmx"))
    if not paths:
        raise ValidationError(f"no frame_*.wfmx files in {frames_dir}")
    plane_shape = (FRAME_SHAPE[0] * FRAME_SHAPE[1], FRAME_SHAPE[2])
    frames = []
    for p in paths:
        words, precision = read_matrix(p)
        if precision is not Precision.FP32 or words.shape != plane_shape:
            raise ValidationError(
                f"{p} is not a {plane_shape[0]}x{plane_shape[1]} FP32 frame")
        frames.append(words.reshape(FRAME_SHAPE))
    return frames


def _build_state(config: CampaignConfig):
    if isinstance(config.target, GemmTarget):
        return _GemmState(config)
    return _NetworkState(config)


def _validate_sites(config: CampaignConfig, profiles) -> None:
    total = sum(int(profile.sites_for(config.register_classes).size)
                * profile.warp_count for profile in profiles)
    if total == 0:
        names = ", ".join(sorted(c.value for c in config.register_classes))
        raise ValidationError(f"target trace has no sites for classes: {names}")


# ---------------------------------------------------------------------------
# record computation
# ---------------------------------------------------------------------------

def _compute_record(state, config: CampaignConfig, seq: int,
                    model: FaultModel, index: int) -> dict:
    record: dict = {"seq": seq, "model": model.value, "index": index,
                    "descriptor": None, "frame": None, "outcome": None,
                    "timing": 0, "anomaly": None}
    try:
        seed = child_seed(config.master_seed, model.value, index)
        descriptor = make_descriptor(seed, state.profiles, model,
                                     config.register_classes,
                                     config.storage_override)
        record["descriptor"] = descriptor.to_json()
        action = ecc_filter(descriptor.site, model, config.ecc)
        if action is EccAction.CORRECTED:
            outcome, timing, frame = Outcome.masked(), 0, None
        elif action is EccAction.DUE_DOUBLE_BIT:
            outcome, timing, frame = Outcome.due(DueReason.ECC_DOUBLE_BIT), 0, None
        else:
            outcome, timing, frame = state.run(descriptor)
        record["outcome"] = outcome.to_json()
        record["timing"] = timing
        record["frame"] = frame
    except Exception as exc:  # noqa: BLE001 - anomalies go in the log, never up
        record["anomaly"] = f"{type(exc).__name__}: {exc}"
    return record


# worker-process globals, filled once per process by _pool_init
_POOL: dict = {}


def _pool_init(config_json: str) -> None:
    config = CampaignConfig.from_json(json.loads(config_json))
    _POOL["config"] = config
    _POOL["state"] = _build_state(config)
    _POOL["sequence"] = config.sequence()


def _pool_record(seq: int) -> str:
    config = _POOL["config"]
    model, index = _POOL["sequence"][seq]
    return _dumps(_compute_record(_POOL["state"], config, seq, model, index))


# ---------------------------------------------------------------------------
# running and logging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CampaignResult:
    log_path: Path
    per_model: dict
    overall: CampaignStats
    anomalies: int


def _header(config: CampaignConfig) -> dict:
    return {"format": LOG_FORMAT, "log_version": LOG_VERSION,
            "tool_version": __version__, "config_hash": config.config_hash(),
            "config": config.to_json()}


def run_campaign(config: CampaignConfig, out_dir, resume: bool = False,
                 log_name: str = "campaign.jsonl",
                 progress: Callable[[int, int], None] | None = None
                 ) -> CampaignResult:
    """Execute every configured injection and write the JSON-lines log.

    Validation happens before anything runs.  Records are computed in
    parallel when config.workers > 1 but written strictly in canonical
    order with a flush per record, so the log is always a clean prefix.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / log_name

    state = _build_state(config)
    _validate_sites(config, state.profiles)

    sequence = config.sequence()
    header_line = _dumps(_header(config))

    existing: list[str] = []
    if resume and log_path.exists() and log_path.stat().st_size > 0:
        raw = log_path.read_bytes()
        keep = raw[: raw.rfind(b"\n") + 1]  # drop a torn final line
        lines = keep.decode("utf-8").splitlines()
        if lines:
            if lines[0] != header_line:
                raise ValidationError(
                    "existing log belongs to a different config or tool "
                    "version; refusing to resume")
            existing = lines[1:]
            if len(existing) > len(sequence):
                raise ValidationError("existing log has more records than "
                                      "the config asks for")

    done = len(existing)
    pending = list(range(done, len(sequence)))
    total = len(sequence)

    with open(log_path, "wb") as log:
        log.write((header_line + "\n").encode("utf-8"))
        for line in existing:
            log.write((line + "\n").encode("utf-8"))
        log.flush()

        def emit(line: str):
            log.write((line + "\n").encode("utf-8"))
            log.flush()

        if progress:
            progress(done, total)
        if config.workers == 1 or not pending:
            for seq in pending:
                model, index = sequence[seq]
                emit(_dumps(_compute_record(state, config, seq, model, index)))
                done += 1
                if progress:
                    progress(done, total)
        else:
            chunk = max(1, min(64, len(pending) // (config.workers * 4) or 1))
            with ProcessPoolExecutor(
                    max_workers=config.workers, initializer=_pool_init,
                    initargs=(_dumps(config.to_json()),)) as pool:
                for line in pool.map(_pool_record, pending, chunksize=chunk):
                    emit(line)
                    done += 1
                    if progress:
                        progress(done, total)

    _, records = load_log(log_path)
    per_model, overall, anomalies = stats_from_records(records)
    return CampaignResult(log_path=log_path, per_model=per_model,
                          overall=overall, anomalies=anomalies)


def load_log(path) -> tuple[dict, list[dict]]:
    """Parse a campaign log; raises on bad format or version mismatch."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"log file not found: {path}")
    lines = path.read_text("utf-8").splitlines()
    if not lines:
        raise LogFormatError("log is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"unreadable log header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != LOG_FORMAT:
        raise LogFormatError("not a campaign log (bad format marker)")
    if header.get("log_version") != LOG_VERSION:
        raise LogVersionError(f"log version {header.get('log_version')!r}, "
                              f"this tool reads version {LOG_VERSION}")
    if header.get("tool_version") != __version__:
        raise LogVersionError(
            f"log written by tool {header.get('tool_version')!r}, "
            f"running {__version__!r}; outcomes are not comparable")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"bad record at line {lineno}: {exc}") from None
    return header, records


def stats_from_records(records: Sequence[Mapping]
                       ) -> tuple[dict, CampaignStats, int]:
    """Aggregate log records into per-model and pooled campaign stats."""
    by_model: dict[FaultModel, list[Outcome]] = {}
    anomalies = 0
    for rec in records:
        if rec.get("anomaly") is not None:
            anomalies += 1
            continue
        model = FaultModel(rec["model"])
        by_model.setdefault(model, []).append(Outcome.from_json(rec["outcome"]))
    pooled = [o for model in FaultModel for o in by_model.get(model, [])]
    if not pooled:
        raise ValidationError("log holds no classifiable outcomes")
    per_model = {model: svf(by_model[model])
                 for model in FaultModel if model in by_model}
    return per_model, svf(pooled), anomalies


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayMismatch:
    seq: int
    field: str
    recorded: object
    recomputed: object


def replay_log(path, record_index: int | None = None
               ) -> tuple[int, list[ReplayMismatch]]:
    """Recompute log records from their seeds and compare field by field.

    Returns (records replayed, mismatches).  Descriptor, outcome, timing,
    and frame are all compared, so a tampered payload is caught even when
    it happens not to change the outcome.
    """
    header, records = load_log(path)
    config = CampaignConfig.from_json(header["config"])
    if config.config_hash() != header.get("config_hash"):
        raise LogFormatError("config hash does not match the embedded config")
    if record_index is not None:
        selected = [rec for rec in records if rec.get("seq") == record_index]
        if not selected:
            raise ValidationError(f"no record with seq {record_index}")
    else:
        selected = records
    state = _build_state(config)
    mismatches = []
    replayed = 0
    for rec in selected:
        if rec.get("anomaly") is not None:
            continue
        replayed += 1
        fresh = _compute_record(state, config, rec["seq"],
                                FaultModel(rec["model"]), rec["index"])
        for field_name in ("descriptor", "outcome", "timing", "frame"):
            if fresh[field_name] != rec.get(field_name):
                mismatches.append(ReplayMismatch(
                    seq=rec["seq"], field=field_name,
                    recorded=rec.get(field_name),
                    recomputed=fresh[field_name]))
    return replayed, mismatches


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def class_labels(config: CampaignConfig) -> list[str]:
    """The fixed per-config class list used by tabular reports."""
    labels = ["masked", "sdc", "due"]
    labels += [f"sdc:{g.value}" for g in GeometryClass]
    if isinstance(config.target, NetworkTarget):
        labels.append("sdc:critical")
        labels += [f"sdc:critical:{c.value}" for c in Criticality
                   if c.is_critical]
        labels.append("sdc:tolerable")
    labels += [f"due:{r.value}" for r in DueReason]
    return labels


def _row_lookup(stats: CampaignStats) -> dict[str, tuple[int, float, float, float]]:
    return {label: (count, frac, lo, hi)
            for label, count, frac, lo, hi in stats.rows()}


def _config_rows(per_model: Mapping, overall: CampaignStats):
    for model in FaultModel:
        if model in per_model:
            yield model.value, per_model[model]
    yield "overall", overall


def render_report(per_model: Mapping, overall: CampaignStats,
                  config: CampaignConfig, fmt: str, anomalies: int = 0) -> str:
    """Emit the campaign summary as json, csv, or markdown."""
    if overall.n_injections < 1:
        raise ValidationError("stats require at least one injection")
    if fmt == "json":
        return _report_json(per_model, overall, config, anomalies)
    if fmt == "csv":
        return _report_csv(per_model, overall, config)
    if fmt == "markdown":
        return _report_markdown(per_model, overall, config, anomalies)
    raise ValidationError(f"unknown report format {fmt!r} "
                          "(valid: json, csv, markdown)")


def _fit_block(stats: CampaignStats, params: FitParams) -> dict:
    return {"sdc_fit": fit_rate(stats.sdc, params),
            "due_fit": fit_rate(stats.due, params)}


def _report_json(per_model, overall, config, anomalies) -> str:
    obj = {
        "config_hash": config.config_hash(),
        "anomalies": anomalies,
        "models": {name: stats.to_json()
                   for name, stats in _config_rows(per_model, overall)
                   if name != "overall"},
        "overall": overall.to_json(),
    }
    if config.fit is not None:
        obj["fit"] = {name: _fit_block(stats, config.fit)
                      for name, stats in _config_rows(per_model, overall)}
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _report_csv(per_model, overall, config) -> str:
    labels = class_labels(config)
    lines = ["config,class,count,fraction,ci_lo,ci_hi"]
    for name, stats in _config_rows(per_model, overall):
        rows = _row_lookup(stats)
        for label in labels:
            if label in rows:
                count, frac, lo, hi = rows[label]
            else:
                count, frac = 0, 0.0
                lo, hi = wilson_ci95(0, stats.n_injections)
            lines.append(f"{name},{label},{count},{frac!r},{lo!r},{hi!r}")
    return "\n".join(lines) + "\n"


def _target_line(config: CampaignConfig) -> str:
    t = config.target
    if isinstance(t, GemmTarget):
        return (f"gemm {t.m}x{t.n}x{t.k} {t.algorithm.value} "
                f"{t.precision.value}")
    src = t.weights_path or "built-in reference"
    return f"network ({src}) {t.precision.value}"


def _report_markdown(per_model, overall, config, anomalies) -> str:
    is_network = isinstance(config.target, NetworkTarget)
    out = ["# Campaign report", ""]
    out.append(f"- target: {_target_line(config)}")
    out.append(f"- ecc: {config.ecc.value}")
    out.append(f"- master seed: {config.master_seed}")
    out.append(f"- injections: {overall.n_injections}"
               + (f" (anomalies: {anomalies})" if anomalies else ""))
    out.append("")
    head = "| config | n | masked | sdc | due |"
    rule = "|---|---|---|---|---|"
    if is_network:
        head += " critical sdc |"
        rule += "---|"
    head += " svf (95% ci) |"
    rule += "---|"
    out += [head, rule]
    for name, stats in _config_rows(per_model, overall):
        n = stats.n_injections
        cells = [name, str(n),
                 f"{stats.masked / n:.4f}",
                 f"{stats.sdc / n:.4f}",
                 f"{stats.due / n:.4f}"]
        if is_network:
            cells.append(f"{stats.critical_sdc() / n:.4f}")
        lo, hi = stats.svf_ci95
        cells.append(f"{stats.svf:.4f} [{lo:.4f}, {hi:.4f}]")
        out.append("| " + " | ".join(cells) + " |")
    if config.fit is not None:
        out += ["", "## FIT projection", "",
                f"- fluence: {config.fit.fluence:g} n/cm^2, reference flux: "
                f"{config.fit.reference_flux:g} n/(cm^2 h)", "",
                "| config | sdc FIT | due FIT |", "|---|---|---|"]
        for name, stats in _config_rows(per_model, overall):
            block = _fit_block(stats, config.fit)
            out.append(f"| {name} | {block['sdc_fit']:.3f} | "
                       f"{block['due_fit']:.3f} |")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# assets
# ---------------------------------------------------------------------------

def generate_assets(out_dir) -> list[Path]:
    """Write the reference weights and evaluation frames as binary dumps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "reference.wfnn"]
    write_weights(paths[0], generate_reference_weights())
    plane = (FRAME_SHAPE[0] * FRAME_SHAPE[1], FRAME_SHAPE[2])
    for i, frame in enumerate(generate_frames()):
        p = out_dir / f"frame_{i:02d}.wfmx"
        write_matrix(p, frame.reshape(plane), Precision.FP32)
        paths.append(p)
    return paths
