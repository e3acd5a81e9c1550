"""Crust thickness from the delay between primary and secondary reflections.

The primary reflection comes from the seafloor top, the secondary from the
bottom of the crust layer; thickness is the delay times the speed of sound in
the crust. Sediment and nodule returns have no qualifying secondary peak and
yield no estimate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks, peak_prominences

from .errors import FormatError, ValidationError
from .tiles import DEFAULT_THRESHOLD_FACTOR, detect_seafloor


@dataclass(frozen=True)
class SoundSpeed:
    """Speed of sound in the crust layer, with measurement uncertainty.

    two_way_factor converts the recorded delay into a layer transit: 1.0
    treats the delay as a one-way transit (the convention matched by the
    44 mm / 30-sample arithmetic of the tile window), 0.5 accounts for the
    echo's down-and-back path. It is explicit configuration rather than a
    buried constant.
    """

    value_mps: float = 2932.0
    uncertainty_mps: float = 179.0
    two_way_factor: float = 1.0

    def validate(self) -> None:
        if self.value_mps <= 0:
            raise ValidationError("sound speed must be positive")
        if self.uncertainty_mps < 0:
            raise ValidationError("sound speed uncertainty must be non-negative")
        if self.two_way_factor <= 0:
            raise ValidationError("two_way_factor must be positive")


@dataclass(frozen=True)
class ThicknessEstimate:
    thickness_m: float
    uncertainty_m: float
    primary_idx: int
    secondary_idx: int
    confidence: float  # secondary peak prominence relative to the primary, in [0, 1]


def estimate_thickness(
    samples: np.ndarray,
    sample_rate_hz: float,
    sound: SoundSpeed = SoundSpeed(),
    min_prominence: float = 0.3,
    threshold_factor: float = DEFAULT_THRESHOLD_FACTOR,
) -> Optional[ThicknessEstimate]:
    """Estimate layer thickness from one ping, or None without a secondary echo.

    The primary is picked by the seafloor detector. The secondary is the most
    prominent later peak whose prominence (height above the higher surrounding
    valley) is at least min_prominence of the primary amplitude. The primary
    amplitude is taken as the trace maximum: the seafloor return is the
    strongest echo, and the sample value at the pick itself can sit a little
    down the pulse flank under noise.
    """
    if not 0 < min_prominence < 1:
        raise ValidationError("min_prominence must lie in (0, 1)")
    sound.validate()
    if sample_rate_hz <= 0:
        raise ValidationError("sample_rate_hz must be positive")

    primary = detect_seafloor(samples, threshold_factor)
    mag = np.abs(np.asarray(samples, dtype=np.float64))
    primary_amplitude = float(mag.max())
    tail = mag[primary + 1 :]
    if tail.size < 3 or primary_amplitude <= 0:
        return None

    peaks, _ = find_peaks(tail)
    if peaks.size == 0:
        return None
    prominences = peak_prominences(tail, peaks)[0] / primary_amplitude
    # Two reflections are distinct only if the trace drops well below the
    # candidate between them; otherwise the "peak" is texture on the primary
    # pulse itself (the continuous version of rejecting coincident peaks).
    separated = np.array(
        [mag[primary : primary + 2 + int(p)].min() <= 0.5 * tail[p] for p in peaks]
    )
    qualifying = (prominences >= min_prominence) & separated
    if not qualifying.any():
        return None
    best = peaks[qualifying][np.argmax(prominences[qualifying])]
    confidence = float(prominences[qualifying].max())  # prominence <= max, so in [0, 1]

    secondary = primary + 1 + int(best)
    delay_s = (secondary - primary) / sample_rate_hz
    thickness = delay_s * sound.value_mps * sound.two_way_factor
    uncertainty = thickness * (sound.uncertainty_mps / sound.value_mps)
    return ThicknessEstimate(
        thickness_m=thickness,
        uncertainty_m=uncertainty,
        primary_idx=primary,
        secondary_idx=secondary,
        confidence=confidence,
    )


# ---------------------------------------------------------------------------
# Thickness CSV
# ---------------------------------------------------------------------------

THICKNESS_HEADER = ["ping_index", "x", "y", "thickness_m", "uncertainty_m", "confidence"]


def write_thickness_csv(rows: Sequence[tuple], path) -> None:
    """rows: (ping_index, x, y, estimate or None); empty fields mean no estimate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(THICKNESS_HEADER)
        for ping_index, x, y, est in rows:
            if est is None:
                writer.writerow([ping_index, repr(float(x)), repr(float(y)), "", "", ""])
            else:
                writer.writerow(
                    [
                        ping_index,
                        repr(float(x)),
                        repr(float(y)),
                        repr(est.thickness_m),
                        repr(est.uncertainty_m),
                        repr(est.confidence),
                    ]
                )


def read_thickness_csv(path) -> list[tuple[int, float, float, Optional[tuple[float, float, float]]]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != THICKNESS_HEADER:
            raise FormatError(f"unexpected thickness header {header!r} in {path}")
        for row in reader:
            est = None
            if row[3] != "":
                est = (float(row[3]), float(row[4]), float(row[5]))
            rows.append((int(row[0]), float(row[1]), float(row[2]), est))
    return rows
