"""Echogram stacking, seafloor picking, and 30x30 acoustic tile extraction.

An echogram stacks ping returns column-by-column (rows are time samples,
columns are successive pings). Tiles are 30-sample x 30-ping windows cut
around the detected seafloor incidence point and min-max normalized, which
removes per-ping gain variation before feature learning.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EdgeTruncationError, FormatError, NoSeafloorError, ValidationError
from .georef import CoLocation
from .synth import SeafloorClass, Survey

logger = logging.getLogger(__name__)

TILE_ROWS = 30
TILE_COLS = 30
COLS_LEFT = 14  # columns kept left of the center ping
COLS_RIGHT = 15  # columns kept right of the center ping
DEFAULT_PRE_OFFSET = 5
DEFAULT_THRESHOLD_FACTOR = 5.0
NOISE_WINDOW_FRACTION = 0.1
MIN_PING_SAMPLES = 64

TILE_MAGIC = b"CPTL"
TILE_VERSION = 1
_TILE_HEADER = struct.Struct("<4sIQII")
_TILE_META = struct.Struct("<QIddb")


def vertical_extent_m(sample_rate_hz: float, sound_speed_mps: float) -> float:
    """Physical height spanned by the tile's 30 time samples."""
    return TILE_ROWS / sample_rate_hz * sound_speed_mps


def horizontal_extent_m(ping_rate_hz: float, velocity_mps: float) -> float:
    """Along-track distance spanned by the tile's 30 ping columns."""
    return TILE_COLS / ping_rate_hz * velocity_mps


@dataclass
class Echogram:
    """Stacked ping returns with per-column provenance."""

    values: np.ndarray  # (samples_per_ping, n_pings) float32
    ping_indices: np.ndarray  # (n_pings,) int64
    timestamps: np.ndarray  # (n_pings,) float64
    positions: np.ndarray  # (n_pings, 2) float64
    sample_rate_hz: float
    ping_rate_hz: float

    @property
    def n_pings(self) -> int:
        return self.values.shape[1]

    @property
    def samples_per_ping(self) -> int:
        return self.values.shape[0]


def build_echogram(survey: Survey) -> Echogram:
    if not survey.pings:
        raise ValidationError("cannot build an echogram from an empty survey")
    values = np.stack([p.samples for p in survey.pings], axis=1).astype(np.float32)
    return Echogram(
        values=values,
        ping_indices=np.array([p.index for p in survey.pings], dtype=np.int64),
        timestamps=np.array([p.timestamp for p in survey.pings], dtype=np.float64),
        positions=np.array([[p.x_m, p.y_m] for p in survey.pings], dtype=np.float64),
        sample_rate_hz=survey.sample_rate_hz,
        ping_rate_hz=survey.ping_rate_hz,
    )


MIN_PEAK_FRACTION = 0.8


def detect_seafloor(
    samples: np.ndarray, threshold_factor: float = DEFAULT_THRESHOLD_FACTOR
) -> int:
    """Pick the seafloor incidence sample in one ping.

    Returns the first index whose amplitude exceeds threshold_factor times the
    noise RMS (estimated from the leading 10% of the trace) and that is a local
    maximum within +-3 samples. Candidates below 80% of the trace maximum are
    rejected: the seafloor return is the strongest echo, and on broad weak
    pulses noise wiggles on the rising slope would otherwise qualify early.
    Falls back to the global argmax when nothing qualifies.
    """
    samples = np.asarray(samples)
    if samples.ndim != 1 or samples.shape[0] < MIN_PING_SAMPLES:
        raise ValidationError(
            f"detect_seafloor needs a 1-D ping with at least {MIN_PING_SAMPLES} samples"
        )
    mag = np.abs(samples.astype(np.float64))
    if not mag.any():
        raise NoSeafloorError("ping is all zeros; no seafloor return found")

    noise_n = max(1, int(samples.shape[0] * NOISE_WINDOW_FRACTION))
    noise_rms = float(np.sqrt(np.mean(mag[:noise_n] ** 2)))
    threshold = max(threshold_factor * noise_rms, MIN_PEAK_FRACTION * float(mag.max()))

    above = np.flatnonzero(mag >= threshold)
    for i in above:
        lo = max(0, i - 3)
        hi = min(mag.shape[0], i + 4)
        if mag[i] == mag[lo:hi].max():
            return int(i)
    return int(np.argmax(mag))


@dataclass(eq=False)
class AcousticTile:
    """Normalized 30x30 amplitude window around the seafloor incidence point."""

    values: np.ndarray  # (30, 30) float32 in [0, 1], row-major
    center_ping: int
    seafloor_row: int
    position: tuple[float, float]
    label: Optional[SeafloorClass] = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, AcousticTile):
            return NotImplemented
        return (
            self.center_ping == other.center_ping
            and self.seafloor_row == other.seafloor_row
            and self.position == other.position
            and self.label == other.label
            and np.array_equal(self.values, other.values)
        )


def _normalize_window(window: np.ndarray) -> np.ndarray:
    w = window.astype(np.float64)
    lo = w.min()
    hi = w.max()
    if hi == lo:
        return np.full(w.shape, 0.5, dtype=np.float32)
    return ((w - lo) / (hi - lo)).astype(np.float32)


def cut_tile(
    echogram: Echogram,
    center_col: int,
    pre_offset: int = DEFAULT_PRE_OFFSET,
    threshold_factor: float = DEFAULT_THRESHOLD_FACTOR,
    label: Optional[SeafloorClass] = None,
) -> AcousticTile:
    """Cut the 30x30 tile centered on one ping column.

    The window spans columns [center-14, center+15] and rows
    [seafloor - pre_offset, seafloor - pre_offset + 30); the top reflection
    therefore sits near the tile's upper region.
    """
    if center_col < COLS_LEFT or center_col + COLS_RIGHT >= echogram.n_pings:
        raise EdgeTruncationError(
            f"center column {center_col} lacks {COLS_LEFT} left / {COLS_RIGHT} right context "
            f"columns in an echogram of {echogram.n_pings} pings"
        )
    seafloor_row = detect_seafloor(echogram.values[:, center_col], threshold_factor)
    row0 = seafloor_row - pre_offset
    if row0 < 0 or row0 + TILE_ROWS > echogram.samples_per_ping:
        raise EdgeTruncationError(
            f"tile rows [{row0}, {row0 + TILE_ROWS}) fall outside the "
            f"{echogram.samples_per_ping}-sample ping window"
        )
    window = echogram.values[row0 : row0 + TILE_ROWS, center_col - COLS_LEFT : center_col + COLS_RIGHT + 1]
    x, y = echogram.positions[center_col]
    return AcousticTile(
        values=_normalize_window(window),
        center_ping=int(echogram.ping_indices[center_col]),
        seafloor_row=seafloor_row,
        position=(float(x), float(y)),
        label=label,
    )


def sample_tiles(
    echogram: Echogram,
    colocation: CoLocation,
    spacing_m: float,
    pre_offset: int = DEFAULT_PRE_OFFSET,
    threshold_factor: float = DEFAULT_THRESHOLD_FACTOR,
) -> list[AcousticTile]:
    """Greedy left-to-right selection of labeled, non-overlapping tiles.

    Successive tile centers are at least spacing_m apart along track (and at
    least a full tile width apart in columns), so no two tiles share a ping
    column. Tiles that would truncate at the echogram edge are skipped and
    logged.
    """
    if spacing_m < 0.15:
        raise ValidationError(f"spacing_m={spacing_m} is below the 0.15 m tile extent")
    labeled = colocation.labeled()
    col_of_ping = {int(pi): c for c, pi in enumerate(echogram.ping_indices)}

    tiles: list[AcousticTile] = []
    last_pos: Optional[np.ndarray] = None
    last_col: Optional[int] = None
    for ping_index in sorted(labeled):
        col = col_of_ping.get(ping_index)
        if col is None:
            continue
        pos = echogram.positions[col]
        if last_pos is not None:
            if float(np.hypot(*(pos - last_pos))) < spacing_m:
                continue
            if col - last_col < TILE_COLS:
                continue
        try:
            tile = cut_tile(echogram, col, pre_offset, threshold_factor, labeled[ping_index].label)
        except EdgeTruncationError as exc:
            logger.info("skipping tile at ping %d: %s", ping_index, exc)
            continue
        tiles.append(tile)
        last_pos = pos
        last_col = col
    return tiles


# ---------------------------------------------------------------------------
# Tile file I/O
# ---------------------------------------------------------------------------


def write_tiles(tiles: Sequence[AcousticTile], path) -> None:
    with open(path, "wb") as fh:
        fh.write(_TILE_HEADER.pack(TILE_MAGIC, TILE_VERSION, len(tiles), TILE_ROWS, TILE_COLS))
        for tile in tiles:
            if tile.values.shape != (TILE_ROWS, TILE_COLS):
                raise ValidationError(f"tile at ping {tile.center_ping} is not 30x30")
            label = -1 if tile.label is None else int(tile.label)
            fh.write(
                _TILE_META.pack(
                    tile.center_ping, tile.seafloor_row, tile.position[0], tile.position[1], label
                )
            )
            fh.write(np.ascontiguousarray(tile.values, dtype="<f4").tobytes())


def read_tiles(path) -> list[AcousticTile]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _TILE_HEADER.size:
        raise FormatError(
            f"tile header truncated at byte {len(data)}: expected {_TILE_HEADER.size} bytes"
        )
    magic, version, count, rows, cols = _TILE_HEADER.unpack_from(data, 0)
    if magic != TILE_MAGIC:
        raise FormatError(f"bad tile magic {magic!r} at byte 0, expected {TILE_MAGIC!r}")
    if version != TILE_VERSION:
        raise FormatError(f"unsupported tile version {version} at byte 4")
    if rows != TILE_ROWS or cols != TILE_COLS:
        raise FormatError(f"unexpected tile shape {rows}x{cols} at byte 16")

    record = _TILE_META.size + 4 * rows * cols
    expected = _TILE_HEADER.size + count * record
    if len(data) != expected:
        raise FormatError(
            f"tile file length mismatch at byte {min(len(data), expected)}: "
            f"expected {expected} bytes for {count} tiles, found {len(data)}"
        )

    tiles = []
    offset = _TILE_HEADER.size
    for _ in range(count):
        center_ping, seafloor_row, x, y, label = _TILE_META.unpack_from(data, offset)
        offset += _TILE_META.size
        values = (
            np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
            .copy()
            .reshape(rows, cols)
        )
        offset += 4 * rows * cols
        tiles.append(
            AcousticTile(
                values=values,
                center_ping=center_ping,
                seafloor_row=seafloor_row,
                position=(x, y),
                label=None if label < 0 else SeafloorClass(label),
            )
        )
    return tiles


def tiles_as_arrays(
    tiles: Sequence[AcousticTile],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack tiles into (values (N,30,30), positions (N,2), labels (N,)) arrays.

    Unlabeled tiles get label -1.
    """
    values = np.stack([t.values for t in tiles]).astype(np.float64)
    positions = np.array([t.position for t in tiles], dtype=np.float64)
    labels = np.array([-1 if t.label is None else int(t.label) for t in tiles], dtype=np.int64)
    return values, positions, labels


# ---------------------------------------------------------------------------
# Echogram PGM rendering
# ---------------------------------------------------------------------------


def echogram_to_pgm_bytes(values: np.ndarray) -> bytes:
    """Render an amplitude matrix ([-1, 1]) to binary 8-bit PGM."""
    v = np.clip(values.astype(np.float64), -1.0, 1.0)
    gray = np.round((v + 1.0) / 2.0 * 255.0).astype(np.uint8)
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    return header + gray.tobytes()


def write_echogram_pgm(echogram: Echogram, path) -> None:
    with open(path, "wb") as fh:
        fh.write(echogram_to_pgm_bytes(echogram.values))
