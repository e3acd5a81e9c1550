"""Synthetic sub-bottom survey generator.

Produces ping sequences with per-ping ground truth and a labeled cell table,
standing in for AUV field recordings so every downstream stage can be tested
against known answers. Echo shapes are deliberately simple: smooth Gaussian
envelopes whose class-dependent structure (secondary layer echo, broadened
return, jittered multi-peak return) mirrors what a parametric probe records
over crust, sediment and nodule seafloors.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

SURVEY_MAGIC = b"CPSV"
SURVEY_VERSION = 1

_HEADER = struct.Struct("<4sIddIQ")
_PING_META = struct.Struct("<Qdddd")


class SeafloorClass(IntEnum):
    """The three seafloor types of interest, serialized as stable integers."""

    MN_CRUST = 0
    SEDIMENT = 1
    NODULES = 2

    @property
    def display_name(self) -> str:
        return {0: "MnCrust", 1: "Sediment", 2: "Nodules"}[int(self)]


@dataclass(frozen=True)
class EchoSignature:
    """Tunable per-class echo shape parameters.

    Separability between classes is controlled here so experiments can dial
    the difficulty of the downstream classification problem.
    """

    pulse_std_samples: float = 6.0
    primary_amplitude: float = 0.8
    # Crust: secondary echo from the layer bottom, delayed by the thickness.
    crust_secondary_ratio: float = 0.5
    crust_sound_speed_mps: float = 2932.0
    thickness_delay_factor: float = 1.0
    # Sediment: single broadened, weaker return.
    sediment_width_factor: float = 3.0
    sediment_amplitude_ratio: float = 0.5
    # Nodules: a handful of jittered sub-peaks around the incidence point.
    nodule_subpeak_counts: tuple[int, int] = (2, 4)
    nodule_jitter_samples: int = 8
    nodule_amplitude_ratio: float = 0.85
    nodule_amp_jitter: tuple[float, float] = (0.9, 1.0)
    # Linear altitude -> sample-index map. Absolute calibration is irrelevant
    # downstream because tile extraction is peak-relative.
    range_to_sample_slope: float = 1000.0

    def validate(self) -> None:
        if self.pulse_std_samples <= 0:
            raise ValidationError("pulse_std_samples must be positive")
        if not 0 < self.primary_amplitude <= 1:
            raise ValidationError("primary_amplitude must be in (0, 1]")
        if self.crust_sound_speed_mps <= 0:
            raise ValidationError("crust_sound_speed_mps must be positive")
        if self.thickness_delay_factor <= 0:
            raise ValidationError("thickness_delay_factor must be positive")
        lo, hi = self.nodule_subpeak_counts
        if lo < 1 or hi < lo:
            raise ValidationError("nodule_subpeak_counts must satisfy 1 <= lo <= hi")
        if self.range_to_sample_slope <= 0:
            raise ValidationError("range_to_sample_slope must be positive")


@dataclass(frozen=True)
class Patch:
    """One contiguous seafloor section along the transect."""

    start_m: float
    end_m: float
    seafloor_class: SeafloorClass
    thickness_m: Optional[float] = None


@dataclass(frozen=True)
class SceneSpec:
    """Full description of a synthetic survey scene."""

    transect_length_m: float
    patches: tuple[Patch, ...]
    auv_velocity_mps: float = 0.1
    auv_altitude_m: float = 1.5
    ping_rate_hz: float = 20.0
    sample_rate_hz: float = 2e6
    samples_per_ping: int = 4096
    snr_db: float = 30.0
    seed: int = 0
    signature: EchoSignature = field(default_factory=EchoSignature)

    def validate(self) -> None:
        if self.transect_length_m <= 0:
            raise ValidationError("transect_length_m must be positive")
        for name in ("auv_velocity_mps", "ping_rate_hz", "sample_rate_hz"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.auv_altitude_m <= 0:
            raise ValidationError("auv_altitude_m must be positive")
        if self.samples_per_ping < 64:
            raise ValidationError("samples_per_ping must be at least 64")
        if not self.patches:
            raise ValidationError("patches must not be empty")
        # Patches must partition [0, transect_length) without gap or overlap.
        expected_start = 0.0
        for k, patch in enumerate(self.patches):
            if not math.isclose(patch.start_m, expected_start, abs_tol=1e-9):
                raise ValidationError(
                    f"patch {k} starts at {patch.start_m} m, expected {expected_start} m "
                    "(patches must partition the transect without gaps or overlap)"
                )
            if patch.end_m <= patch.start_m:
                raise ValidationError(f"patch {k} has non-positive extent")
            if patch.seafloor_class == SeafloorClass.MN_CRUST:
                if patch.thickness_m is None or patch.thickness_m <= 0:
                    raise ValidationError(f"crust patch {k} requires thickness_m > 0")
            elif patch.thickness_m is not None:
                raise ValidationError(
                    f"patch {k} ({patch.seafloor_class.display_name}) must not carry a thickness"
                )
            expected_start = patch.end_m
        if not math.isclose(expected_start, self.transect_length_m, abs_tol=1e-9):
            raise ValidationError(
                f"patches end at {expected_start} m, expected transect length "
                f"{self.transect_length_m} m"
            )
        self.signature.validate()

    def ping_count(self) -> int:
        """Number of pings fired while the vehicle is inside [0, transect_length)."""
        return math.ceil(self.transect_length_m * self.ping_rate_hz / self.auv_velocity_mps)

    def seafloor_sample_index(self) -> int:
        return int(round(self.auv_altitude_m * self.signature.range_to_sample_slope))


@dataclass(eq=False)
class Ping:
    """One sonar return: timestamp, position, and sampled echo amplitudes."""

    index: int
    timestamp: float
    x_m: float
    y_m: float
    altitude_m: float
    samples: np.ndarray  # float32, unitless in [-1, 1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Ping):
            return NotImplemented
        return (
            self.index == other.index
            and self.timestamp == other.timestamp
            and self.x_m == other.x_m
            and self.y_m == other.y_m
            and self.altitude_m == other.altitude_m
            and self.samples.dtype == other.samples.dtype
            and np.array_equal(self.samples, other.samples)
        )


@dataclass
class Survey:
    """Header plus ping sequence, mirroring the on-disk survey file."""

    sample_rate_hz: float
    ping_rate_hz: float
    samples_per_ping: int
    pings: list[Ping]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Survey):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.ping_rate_hz == other.ping_rate_hz
            and self.samples_per_ping == other.samples_per_ping
            and self.pings == other.pings
        )


@dataclass(frozen=True)
class GroundTruthRecord:
    ping_index: int
    seafloor_class: SeafloorClass
    thickness_m: Optional[float]
    seafloor_sample_index: int


def thickness_to_delay_samples(
    thickness_m: float, sample_rate_hz: float, sound_speed_mps: float, factor: float
) -> int:
    """Sample delay of the layer-bottom echo for a given crust thickness.

    Inverse of the thickness = (delay / sample_rate) * speed * factor
    convention used by the thickness estimator.
    """
    return int(round(thickness_m * sample_rate_hz / (sound_speed_mps * factor)))


def _add_pulse(samples: np.ndarray, center: float, amplitude: float, std: float) -> None:
    # Evaluate the Gaussian only on its +-5 sigma support; everything outside
    # stays exactly zero, which the noiseless tests rely on.
    half = int(math.ceil(5.0 * std))
    lo = max(0, int(round(center)) - half)
    hi = min(samples.shape[0], int(round(center)) + half + 1)
    if lo >= hi:
        return
    idx = np.arange(lo, hi, dtype=np.float64)
    samples[lo:hi] += amplitude * np.exp(-0.5 * ((idx - center) / std) ** 2)


def _synthesize_ping_samples(
    spec: SceneSpec, patch: Patch, seafloor_idx: int, rng: np.random.Generator
) -> np.ndarray:
    sig = spec.signature
    buf = np.zeros(spec.samples_per_ping, dtype=np.float64)
    amp = sig.primary_amplitude

    if patch.seafloor_class == SeafloorClass.MN_CRUST:
        _add_pulse(buf, seafloor_idx, amp, sig.pulse_std_samples)
        delay = thickness_to_delay_samples(
            patch.thickness_m,
            spec.sample_rate_hz,
            sig.crust_sound_speed_mps,
            sig.thickness_delay_factor,
        )
        _add_pulse(buf, seafloor_idx + delay, amp * sig.crust_secondary_ratio, sig.pulse_std_samples)
    elif patch.seafloor_class == SeafloorClass.SEDIMENT:
        _add_pulse(
            buf,
            seafloor_idx,
            amp * sig.sediment_amplitude_ratio,
            sig.pulse_std_samples * sig.sediment_width_factor,
        )
    else:  # nodules
        lo, hi = sig.nodule_subpeak_counts
        count = int(rng.integers(lo, hi + 1))
        jitter = sig.nodule_jitter_samples
        offsets = rng.integers(-jitter, jitter + 1, size=count)
        amps = rng.uniform(sig.nodule_amp_jitter[0], sig.nodule_amp_jitter[1], size=count)
        field_buf = np.zeros_like(buf)
        for off, a in zip(offsets, amps):
            _add_pulse(field_buf, seafloor_idx + int(off), float(a), sig.pulse_std_samples)
        peak = field_buf.max()
        if peak > 0:
            field_buf *= amp * sig.nodule_amplitude_ratio / peak
        buf += field_buf

    if math.isfinite(spec.snr_db):
        noise_std = amp / (10.0 ** (spec.snr_db / 20.0))
        buf += rng.normal(0.0, noise_std, size=spec.samples_per_ping)

    np.clip(buf, -1.0, 1.0, out=buf)
    return buf.astype(np.float32)


def synthesize_survey(
    spec: SceneSpec,
) -> tuple[Survey, list[GroundTruthRecord], list["GridCell"]]:
    """Generate a survey, its per-ping ground truth, and the labeled cell table.

    Deterministic for a fixed seed: the same SceneSpec always produces a
    byte-identical survey.
    """
    from .georef import CELL_EDGE_M, GridCell  # deferred: georef imports SeafloorClass

    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_pings = spec.ping_count()
    seafloor_idx = spec.seafloor_sample_index()
    if seafloor_idx + 5 * spec.signature.pulse_std_samples >= spec.samples_per_ping:
        raise ValidationError(
            "seafloor echo does not fit in the ping window; increase samples_per_ping "
            "or lower auv_altitude_m / range_to_sample_slope"
        )

    patch_starts = [p.start_m for p in spec.patches]

    def patch_at(x: float) -> Patch:
        k = np.searchsorted(patch_starts, x, side="right") - 1
        return spec.patches[max(int(k), 0)]

    pings: list[Ping] = []
    truth: list[GroundTruthRecord] = []
    for i in range(n_pings):
        t = i / spec.ping_rate_hz
        x = spec.auv_velocity_mps * t
        patch = patch_at(x)
        samples = _synthesize_ping_samples(spec, patch, seafloor_idx, rng)
        pings.append(Ping(i, t, x, 0.0, spec.auv_altitude_m, samples))
        truth.append(
            GroundTruthRecord(
                ping_index=i,
                seafloor_class=patch.seafloor_class,
                thickness_m=patch.thickness_m,
                seafloor_sample_index=seafloor_idx,
            )
        )

    n_cells = math.ceil(spec.transect_length_m / CELL_EDGE_M)
    cells = []
    for ix in range(n_cells):
        center = min((ix + 0.5) * CELL_EDGE_M, math.nextafter(spec.transect_length_m, 0.0))
        cells.append(GridCell(ix, 0, patch_at(center).seafloor_class, "synthetic"))

    survey = Survey(spec.sample_rate_hz, spec.ping_rate_hz, spec.samples_per_ping, pings)
    return survey, truth, cells


# ---------------------------------------------------------------------------
# Survey file I/O (little-endian binary, see README for the exact layout)
# ---------------------------------------------------------------------------


def write_survey(survey: Survey, path) -> None:
    for ping in survey.pings:
        if ping.samples.shape != (survey.samples_per_ping,):
            raise ValidationError(
                f"ping {ping.index} has {ping.samples.shape[0]} samples, "
                f"header says {survey.samples_per_ping}"
            )
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                SURVEY_MAGIC,
                SURVEY_VERSION,
                survey.sample_rate_hz,
                survey.ping_rate_hz,
                survey.samples_per_ping,
                len(survey.pings),
            )
        )
        for ping in survey.pings:
            fh.write(
                _PING_META.pack(ping.index, ping.timestamp, ping.x_m, ping.y_m, ping.altitude_m)
            )
            fh.write(np.ascontiguousarray(ping.samples, dtype="<f4").tobytes())


def read_survey(path) -> Survey:
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < _HEADER.size:
        raise FormatError(
            f"survey header truncated at byte {len(data)}: expected {_HEADER.size} header bytes"
        )
    magic, version, sample_rate, ping_rate, samples_per_ping, ping_count = _HEADER.unpack_from(
        data, 0
    )
    if magic != SURVEY_MAGIC:
        raise FormatError(f"bad survey magic {magic!r} at byte 0, expected {SURVEY_MAGIC!r}")
    if version != SURVEY_VERSION:
        raise FormatError(f"unsupported survey version {version} at byte 4")

    record_size = _PING_META.size + 4 * samples_per_ping
    expected = _HEADER.size + ping_count * record_size
    if len(data) != expected:
        raise FormatError(
            f"survey length mismatch at byte {min(len(data), expected)}: "
            f"expected {expected} bytes for {ping_count} pings, found {len(data)}"
        )

    pings = []
    offset = _HEADER.size
    for _ in range(ping_count):
        index, timestamp, x, y, altitude = _PING_META.unpack_from(data, offset)
        offset += _PING_META.size
        samples = np.frombuffer(data, dtype="<f4", count=samples_per_ping, offset=offset).copy()
        offset += 4 * samples_per_ping
        pings.append(Ping(index, timestamp, x, y, altitude, samples))

    return Survey(sample_rate, ping_rate, samples_per_ping, pings)


# ---------------------------------------------------------------------------
# Ground-truth CSV
# ---------------------------------------------------------------------------

GROUND_TRUTH_HEADER = ["ping_index", "true_class", "true_thickness_m", "seafloor_sample_index"]


def write_ground_truth(records: Sequence[GroundTruthRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GROUND_TRUTH_HEADER)
        for rec in records:
            writer.writerow(
                [
                    rec.ping_index,
                    int(rec.seafloor_class),
                    "" if rec.thickness_m is None else repr(rec.thickness_m),
                    rec.seafloor_sample_index,
                ]
            )


def read_ground_truth(path) -> list[GroundTruthRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GROUND_TRUTH_HEADER:
            raise FormatError(f"unexpected ground-truth header {header!r} in {path}")
        for row in reader:
            records.append(
                GroundTruthRecord(
                    ping_index=int(row[0]),
                    seafloor_class=SeafloorClass(int(row[1])),
                    thickness_m=None if row[2] == "" else float(row[2]),
                    seafloor_sample_index=int(row[3]),
                )
            )
    return records
