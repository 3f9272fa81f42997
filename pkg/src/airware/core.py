"""Domain vocabulary, pipeline configuration and dataset containers.

Everything downstream (simulation, feature extraction, classifiers,
evaluation) shares the types defined here. All containers are immutable
after construction so they can be handed to parallel workers freely.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import GridViolation, NyquistViolation, ShapeMismatch

RECORD_MAGIC = b"AWR1"

MODE_IR_REQUIRED = "ir-required"
MODE_FREE_FORM = "free-form"
SEGMENTATION_MODES = (MODE_IR_REQUIRED, MODE_FREE_FORM)

PROVENANCE_SYNTHETIC = "synthetic"
PROVENANCE_IMPORTED = "imported"
PROVENANCES = (PROVENANCE_SYNTHETIC, PROVENANCE_IMPORTED)

# Parameter grid covered by the STFT search; values outside it need an
# explicit override flag on the config.
WINDOW_GRID = (1024, 2048, 4096)
OVERLAP_GRID = (0.25, 0.5, 0.75)
HALF_WIDTH_GRID = (8, 16)


class GestureClass(enum.IntEnum):
    """The 21-gesture vocabulary with stable codes 0..20.

    Codes double as row/column indices of confusion matrices, so the
    ordering here must never change.
    """

    FLICK_LEFT = 0
    FLICK_RIGHT = 1
    FLICK_UP = 2
    FLICK_DOWN = 3
    PAN_LEFT = 4
    PAN_RIGHT = 5
    PAN_UP = 6
    PAN_DOWN = 7
    SLICE_LEFT = 8
    SLICE_RIGHT = 9
    ZOOM_IN = 10
    ZOOM_OUT = 11
    WHIP = 12
    SNAP = 13
    MAGIC_WAND = 14
    CLICK = 15
    DOUBLE_CLICK = 16
    TAP = 17
    DOUBLE_TAP = 18
    CIRCLE = 19
    ERASE = 20

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_label(cls, label: str) -> "GestureClass":
        return cls[label.strip().upper().replace("-", "_")]


N_CLASSES = len(GestureClass)


class GestureSet(str, enum.Enum):
    """Application-specific vocabularies: the full set and three subsets."""

    FULL = "full"
    GENERIC = "generic"
    MAPPING = "mapping"
    GAMING = "gaming"


_SET_MEMBERS = {
    GestureSet.FULL: tuple(GestureClass),
    GestureSet.GENERIC: (
        GestureClass.FLICK_LEFT,
        GestureClass.FLICK_RIGHT,
        GestureClass.FLICK_UP,
        GestureClass.FLICK_DOWN,
        GestureClass.SNAP,
        GestureClass.DOUBLE_TAP,
        GestureClass.ERASE,
    ),
    GestureSet.MAPPING: (
        GestureClass.PAN_LEFT,
        GestureClass.PAN_RIGHT,
        GestureClass.PAN_UP,
        GestureClass.PAN_DOWN,
        GestureClass.ZOOM_IN,
        GestureClass.ZOOM_OUT,
        GestureClass.ERASE,
    ),
    GestureSet.GAMING: (
        GestureClass.SLICE_LEFT,
        GestureClass.SLICE_RIGHT,
        GestureClass.WHIP,
        GestureClass.SNAP,
    ),
}


def gesture_set_members(set_id: GestureSet | str) -> tuple[GestureClass, ...]:
    """Return the members of a gesture set, ordered by class code."""
    set_id = GestureSet(set_id)
    return tuple(sorted(_SET_MEMBERS[set_id], key=int))


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the sensing pipeline in one immutable value.

    The derived quantities (hop, segment length, carrier bin) are
    properties so they can never drift out of sync with the fields.
    """

    carrier_hz: float = 18000.0
    sample_rate_hz: int = 48000
    stft_window: int = 4096
    stft_overlap: float = 0.5
    band_half_width: int = 16
    buffer_half_len_s: float = 1.25
    energy_threshold_db: float = 10.0
    speed_of_sound_mps: float = 343.0
    rng_seed: int = 0
    # escape hatches, off by default
    allow_nonstandard_grid: bool = False
    per_column_norm: bool = False
    distance_exponent: float = 2.0

    @property
    def hop(self) -> int:
        return int(round(self.stft_window * (1.0 - self.stft_overlap)))

    @property
    def segment_len_s(self) -> float:
        return 2.0 * self.buffer_half_len_s

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_len_s * self.sample_rate_hz))

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / self.stft_window

    @property
    def carrier_bin(self) -> int:
        return int(round(self.carrier_hz * self.stft_window / self.sample_rate_hz))

    @property
    def frames_per_segment(self) -> int:
        return (self.segment_samples - self.stft_window) // self.hop + 1


def config_errors(cfg: PipelineConfig) -> list[str]:
    """Collect every problem with a config; empty list means valid."""
    problems = []
    if cfg.sample_rate_hz <= 0:
        problems.append("sample_rate_hz must be positive")
    if cfg.carrier_hz <= 0:
        problems.append("carrier_hz must be positive")
    elif cfg.carrier_hz >= cfg.sample_rate_hz / 2.0:
        problems.append(
            "NyquistViolation: carrier %g Hz >= Nyquist %g Hz"
            % (cfg.carrier_hz, cfg.sample_rate_hz / 2.0)
        )
    w = cfg.stft_window
    if w < 2 or (w & (w - 1)) != 0:
        # the transform is radix-2 only, no override for this one
        problems.append("stft_window must be a power of two >= 2, got %r" % (w,))
    if not cfg.allow_nonstandard_grid:
        if w not in WINDOW_GRID:
            problems.append("stft_window %r outside searched grid %r" % (w, WINDOW_GRID))
        if cfg.stft_overlap not in OVERLAP_GRID:
            problems.append(
                "stft_overlap %r outside searched grid %r" % (cfg.stft_overlap, OVERLAP_GRID)
            )
        if cfg.band_half_width not in HALF_WIDTH_GRID:
            problems.append(
                "band_half_width %r outside searched grid %r"
                % (cfg.band_half_width, HALF_WIDTH_GRID)
            )
    if not 0.0 < cfg.stft_overlap < 1.0:
        problems.append("stft_overlap must lie in (0, 1)")
    if cfg.band_half_width < 1:
        problems.append("band_half_width must be >= 1")
    if cfg.buffer_half_len_s <= 0:
        problems.append("buffer_half_len_s must be positive")
    if cfg.speed_of_sound_mps <= 0:
        problems.append("speed_of_sound_mps must be positive")
    if cfg.energy_threshold_db <= 0:
        problems.append("energy_threshold_db must be positive")
    if not problems and cfg.segment_samples < cfg.stft_window:
        problems.append("segment shorter than one analysis window")
    return problems


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """Check a config against the supported grid and normalize field types.

    Raises NyquistViolation or GridViolation; idempotent on valid input.
    """
    cfg = dataclasses.replace(
        cfg,
        carrier_hz=float(cfg.carrier_hz),
        sample_rate_hz=int(cfg.sample_rate_hz),
        stft_window=int(cfg.stft_window),
        stft_overlap=float(cfg.stft_overlap),
        band_half_width=int(cfg.band_half_width),
        buffer_half_len_s=float(cfg.buffer_half_len_s),
        energy_threshold_db=float(cfg.energy_threshold_db),
        speed_of_sound_mps=float(cfg.speed_of_sound_mps),
        rng_seed=int(cfg.rng_seed),
        allow_nonstandard_grid=bool(cfg.allow_nonstandard_grid),
        per_column_norm=bool(cfg.per_column_norm),
        distance_exponent=float(cfg.distance_exponent),
    )
    problems = config_errors(cfg)
    if problems:
        message = "; ".join(problems)
        if any(p.startswith("NyquistViolation") for p in problems):
            raise NyquistViolation(message)
        raise GridViolation(message)
    return cfg


def save_config(cfg: PipelineConfig, path) -> None:
    """Write a config as line-oriented ``key = value`` text."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append("%s = %s" % (f.name, value))
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read ``key = value`` lines into a PipelineConfig.

    Unknown keys raise ValueError; missing keys keep the values of
    `base` (defaults when base is None). '#' starts a comment.
    """
    cfg = base if base is not None else PipelineConfig()
    known = {f.name: f for f in dataclasses.fields(cfg)}
    overrides = {}
    for raw_line in Path(path).read_text().splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError("malformed config line: %r" % raw_line)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ValueError("unknown config key: %r" % key)
        current = getattr(cfg, key)
        if isinstance(current, bool):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError("bad boolean for %s: %r" % (key, value))
            overrides[key] = value.lower() in ("true", "1")
        elif isinstance(current, int):
            overrides[key] = int(value)
        else:
            overrides[key] = float(value)
    return validate_config(dataclasses.replace(cfg, **overrides))


@dataclass(frozen=True)
class Waveform:
    """A mono audio signal with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeMismatch("waveform samples must be 1-D")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


class IrEvent(NamedTuple):
    """One proximity-sensor activation: when, how fast, which heading.

    speed is the sensor's normalized 0..100 scale; angle_deg uses
    0 = motion toward device-right, measured counterclockwise,
    wrapped to (-180, 180].
    """

    time_s: float
    speed: float
    angle_deg: float


@dataclass(frozen=True)
class IrStream:
    """All IR events observed over a recording of known duration."""

    events: tuple[IrEvent, ...]
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(IrEvent(*e) for e in self.events))

    def times(self) -> np.ndarray:
        return np.array([e.time_s for e in self.events], dtype=np.float64)

    @property
    def is_empty(self) -> bool:
        return len(self.events) == 0


@dataclass(frozen=True)
class FeatureTensor:
    """The classifier input: doppler band [F x 2*half_width] + IR [F x 2].

    The doppler matrix excludes the carrier bin itself; the IR matrix
    carries (speed, angle) per frame, zero where no event mapped.
    """

    doppler: np.ndarray
    ir: np.ndarray

    def __post_init__(self):
        doppler = np.asarray(self.doppler, dtype=np.float64)
        ir = np.asarray(self.ir, dtype=np.float64)
        if doppler.ndim != 2 or ir.ndim != 2:
            raise ShapeMismatch("doppler and ir must both be 2-D matrices")
        if ir.shape[1] != 2:
            raise ShapeMismatch("ir matrix must have 2 columns, got %d" % ir.shape[1])
        if doppler.shape[0] != ir.shape[0]:
            raise ShapeMismatch(
                "frame counts disagree: doppler %d vs ir %d"
                % (doppler.shape[0], ir.shape[0])
            )
        object.__setattr__(self, "doppler", doppler)
        object.__setattr__(self, "ir", ir)

    @property
    def frames(self) -> int:
        return self.doppler.shape[0]


@dataclass(frozen=True)
class SampleRecord:
    """One labeled gesture sample; optionally keeps its raw signals."""

    user_id: int
    gesture: GestureClass
    rep_index: int
    features: FeatureTensor
    provenance: str = PROVENANCE_SYNTHETIC
    segmentation_mode: str = MODE_IR_REQUIRED
    wave: Waveform | None = None
    ir_stream: IrStream | None = None

    def __post_init__(self):
        object.__setattr__(self, "gesture", GestureClass(self.gesture))
        if self.provenance not in PROVENANCES:
            raise ValueError("bad provenance %r" % (self.provenance,))
        if self.segmentation_mode not in SEGMENTATION_MODES:
            raise ValueError("bad segmentation mode %r" % (self.segmentation_mode,))

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.user_id, int(self.gesture), self.rep_index)


def build_manifest(records) -> dict[int, dict[int, int]]:
    """Per-user, per-class record counts."""
    manifest: dict[int, dict[int, int]] = {}
    for rec in records:
        per_user = manifest.setdefault(rec.user_id, {})
        code = int(rec.gesture)
        per_user[code] = per_user.get(code, 0) + 1
    return manifest


@dataclass(frozen=True)
class Dataset:
    """An immutable collection of records sharing one PipelineConfig."""

    config: PipelineConfig
    records: tuple[SampleRecord, ...]
    manifest: dict[int, dict[int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        keys = [r.key for r in self.records]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (user, gesture, rep) keys in dataset")
        manifest = build_manifest(self.records)
        if self.manifest is not None and self.manifest != manifest:
            raise ValueError("manifest counts disagree with records")
        object.__setattr__(self, "manifest", manifest)

    def __len__(self) -> int:
        return len(self.records)

    def users(self) -> list[int]:
        return sorted({r.user_id for r in self.records})

    def classes(self) -> list[int]:
        return sorted({int(r.gesture) for r in self.records})

    def filter(self, predicate) -> "Dataset":
        return Dataset(self.config, tuple(r for r in self.records if predicate(r)))


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, task-id...) pair.

    Workers handling different keys get non-overlapping streams, so a
    parallel run reproduces the sequential one bit for bit.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# on-disk dataset format: directory of binary record files + manifest.json

_PROV_CODE = {PROVENANCE_SYNTHETIC: 0, PROVENANCE_IMPORTED: 1}
_MODE_CODE = {MODE_IR_REQUIRED: 0, MODE_FREE_FORM: 1}
_PROV_FROM = {v: k for k, v in _PROV_CODE.items()}
_MODE_FROM = {v: k for k, v in _MODE_CODE.items()}


def _write_f32(fh, arr) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(fh, count) -> np.ndarray:
    buf = fh.read(4 * count)
    if len(buf) != 4 * count:
        raise IOError("truncated record file")
    return np.frombuffer(buf, dtype="<f4").astype(np.float64)


def record_filename(rec: SampleRecord) -> str:
    return "u%03d_g%02d_r%03d.awr" % (rec.user_id, int(rec.gesture), rec.rep_index)


def save_record(rec: SampleRecord, path) -> None:
    """Serialize one record: header, doppler block, ir block, raw blocks."""
    flags = 1 if (rec.wave is not None and rec.ir_stream is not None) else 0
    with open(path, "wb") as fh:
        fh.write(RECORD_MAGIC)
        fh.write(
            struct.pack(
                "<iiiBBBx",
                rec.user_id,
                int(rec.gesture),
                rec.rep_index,
                _PROV_CODE[rec.provenance],
                _MODE_CODE[rec.segmentation_mode],
                flags,
            )
        )
        d, ir = rec.features.doppler, rec.features.ir
        fh.write(struct.pack("<II", *d.shape))
        _write_f32(fh, d)
        fh.write(struct.pack("<II", *ir.shape))
        _write_f32(fh, ir)
        if flags & 1:
            wave = rec.wave
            fh.write(struct.pack("<QId", len(wave.samples), wave.sample_rate_hz, 0.0))
            _write_f32(fh, wave.samples)
            events = rec.ir_stream.events
            fh.write(struct.pack("<Id", len(events), rec.ir_stream.duration_s))
            _write_f32(fh, np.array(events, dtype=np.float64).reshape(len(events), 3))


def load_record(path) -> SampleRecord:
    with open(path, "rb") as fh:
        if fh.read(4) != RECORD_MAGIC:
            raise IOError("not a record file: %s" % path)
        user, gesture, rep, prov, mode, flags = struct.unpack("<iiiBBBx", fh.read(16))
        fd, bd = struct.unpack("<II", fh.read(8))
        doppler = _read_f32(fh, fd * bd).reshape(fd, bd)
        fi, bi = struct.unpack("<II", fh.read(8))
        ir = _read_f32(fh, fi * bi).reshape(fi, bi)
        wave = ir_stream = None
        if flags & 1:
            n, sr, _ = struct.unpack("<QId", fh.read(20))
            wave = Waveform(_read_f32(fh, n), sr)
            n_ev, duration = struct.unpack("<Id", fh.read(12))
            ev = _read_f32(fh, n_ev * 3).reshape(n_ev, 3)
            ir_stream = IrStream(tuple(IrEvent(*row) for row in ev), duration)
    return SampleRecord(
        user_id=user,
        gesture=GestureClass(gesture),
        rep_index=rep,
        features=FeatureTensor(doppler, ir),
        provenance=_PROV_FROM[prov],
        segmentation_mode=_MODE_FROM[mode],
        wave=wave,
        ir_stream=ir_stream,
    )


def save_dataset(ds: Dataset, path) -> Path:
    """Write a dataset directory: manifest.json plus one file per record."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for rec in ds.records:
        name = record_filename(rec)
        save_record(rec, out / name)
        files.append(name)
    manifest = {
        "format": 1,
        "config": dataclasses.asdict(ds.config),
        "n_records": len(ds.records),
        "counts": {
            str(user): {str(code): n for code, n in sorted(per_user.items())}
            for user, per_user in sorted(ds.manifest.items())
        },
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    cfg = validate_config(PipelineConfig(**manifest["config"]))
    records = tuple(load_record(root / name) for name in manifest["files"])
    return Dataset(cfg, records)
