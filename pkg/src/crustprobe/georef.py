"""Navigation-track interpolation and 10 cm grid co-location.

Joins acoustic pings against a table of labeled 10 cm x 10 cm seafloor cells:
each ping is positioned by linear interpolation of the fused navigation track,
quantized to a cell, and matched against the labeled table. Pings over
unlabeled cells simply map to nothing.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import ExtrapolationError, FormatError, ValidationError
from .synth import Ping, SeafloorClass

CELL_EDGE_M = 0.1

# Positions within 1e-9 cell widths (0.1 nm) of a boundary are snapped onto it
# so that exact multiples of the cell edge land in the higher cell even when
# the division picks up float rounding. Keeps the half-open rule and the
# shift-by-k-cells consistency exact for survey-scale coordinates.
_BOUNDARY_SNAP = 1e-9


@dataclass(frozen=True)
class TrackSample:
    timestamp: float
    x_m: float
    y_m: float
    altitude_m: float


@dataclass
class NavTrack:
    """Fused navigation solution, consumed as given."""

    samples: list[TrackSample]

    def validate(self) -> None:
        if len(self.samples) < 2:
            raise ValidationError("navigation track needs at least 2 samples")
        times = [s.timestamp for s in self.samples]
        for a, b in zip(times, times[1:]):
            if b <= a:
                raise ValidationError("track timestamps must be strictly increasing")


@dataclass(frozen=True)
class GridCell:
    ix: int
    iy: int
    label: SeafloorClass
    source: str = "visual-classifier"


@dataclass(frozen=True)
class CellHit:
    ix: int
    iy: int
    label: SeafloorClass


@dataclass
class CoLocation:
    """Ping index -> labeled cell (or nothing), for one survey."""

    hits: dict[int, Optional[CellHit]]

    def labeled(self) -> dict[int, CellHit]:
        return {k: v for k, v in self.hits.items() if v is not None}

    def labeled_fraction(self) -> float:
        if not self.hits:
            return 0.0
        return len(self.labeled()) / len(self.hits)


def position_at(track: NavTrack, t: float) -> tuple[float, float, float]:
    """Piecewise-linear position (x, y, altitude) at time t.

    Raises ExtrapolationError outside the track's time range; there is no
    silent extrapolation.
    """
    track.validate()
    samples = track.samples
    if not (samples[0].timestamp <= t <= samples[-1].timestamp):
        raise ExtrapolationError(
            f"t={t} outside track range [{samples[0].timestamp}, {samples[-1].timestamp}]"
        )
    times = [s.timestamp for s in samples]
    k = bisect_right(times, t) - 1
    if k >= len(samples) - 1:
        k = len(samples) - 2
    a, b = samples[k], samples[k + 1]
    if t == a.timestamp:
        return a.x_m, a.y_m, a.altitude_m
    w = (t - a.timestamp) / (b.timestamp - a.timestamp)
    return (
        a.x_m + w * (b.x_m - a.x_m),
        a.y_m + w * (b.y_m - a.y_m),
        a.altitude_m + w * (b.altitude_m - a.altitude_m),
    )


def _cell_index(v: float) -> int:
    scaled = v / CELL_EDGE_M
    nearest = round(scaled)
    if abs(scaled - nearest) < _BOUNDARY_SNAP:
        return int(nearest)
    return int(math.floor(scaled))


def cell_of(x_m: float, y_m: float) -> tuple[int, int]:
    """Half-open 10 cm cell containing (x, y); boundaries go to the higher cell."""
    if not (math.isfinite(x_m) and math.isfinite(y_m)):
        raise ValidationError(f"cell_of requires finite coordinates, got ({x_m}, {y_m})")
    return _cell_index(x_m), _cell_index(y_m)


def build_cell_table(cells: Iterable[GridCell]) -> dict[tuple[int, int], GridCell]:
    table: dict[tuple[int, int], GridCell] = {}
    for cell in cells:
        key = (cell.ix, cell.iy)
        if key in table:
            raise ValidationError(f"duplicate cell {key} in label table")
        table[key] = cell
    return table


def co_locate(
    pings: Sequence[Ping], track: NavTrack, cells: Iterable[GridCell]
) -> CoLocation:
    """Join pings against the labeled cell table via track interpolation."""
    table = build_cell_table(cells)
    hits: dict[int, Optional[CellHit]] = {}
    for ping in pings:
        try:
            x, y, _ = position_at(track, ping.timestamp)
        except ExtrapolationError as exc:
            raise ExtrapolationError(f"ping {ping.index}: {exc}") from exc
        key = cell_of(x, y)
        cell = table.get(key)
        hits[ping.index] = None if cell is None else CellHit(key[0], key[1], cell.label)
    return CoLocation(hits)


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

TRACK_HEADER = ["timestamp", "x", "y", "altitude"]
CELLS_HEADER = ["ix", "iy", "label", "source"]
COLOCATION_HEADER = ["ping_index", "ix", "iy", "label"]


def write_track(track: NavTrack, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACK_HEADER)
        for s in track.samples:
            writer.writerow([repr(s.timestamp), repr(s.x_m), repr(s.y_m), repr(s.altitude_m)])


def read_track(path) -> NavTrack:
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_HEADER:
            raise FormatError(f"unexpected track header {header!r} in {path}")
        for row in reader:
            samples.append(TrackSample(float(row[0]), float(row[1]), float(row[2]), float(row[3])))
    track = NavTrack(samples)
    track.validate()
    return track


def write_cells(cells: Sequence[GridCell], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CELLS_HEADER)
        for cell in cells:
            writer.writerow([cell.ix, cell.iy, int(cell.label), cell.source])


def read_cells(path) -> list[GridCell]:
    cells = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CELLS_HEADER:
            raise FormatError(f"unexpected cell-table header {header!r} in {path}")
        for row in reader:
            cells.append(GridCell(int(row[0]), int(row[1]), SeafloorClass(int(row[2])), row[3]))
    return cells


def write_colocation(colocation: CoLocation, path) -> None:
    """Write only the labeled pings; unlabeled pings are represented by absence."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLOCATION_HEADER)
        for ping_index in sorted(colocation.hits):
            hit = colocation.hits[ping_index]
            if hit is not None:
                writer.writerow([ping_index, hit.ix, hit.iy, int(hit.label)])


def read_colocation(path, all_ping_indices: Optional[Iterable[int]] = None) -> CoLocation:
    hits: dict[int, Optional[CellHit]] = {}
    if all_ping_indices is not None:
        hits = {int(i): None for i in all_ping_indices}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COLOCATION_HEADER:
            raise FormatError(f"unexpected co-location header {header!r} in {path}")
        for row in reader:
            hits[int(row[0])] = CellHit(int(row[1]), int(row[2]), SeafloorClass(int(row[3])))
    return CoLocation(hits)
