"""Survey report rendering: text summary, PGM overlays, matplotlib figures.

The classified echogram is written both as a plain PGM (gray-level class bands
under the echogram, for headless inspection) and as a matplotlib figure with
real colors.
"""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import CLASS_ORDER, ConfusionMatrix
from .synth import SeafloorClass
from .tiles import TILE_COLS, Echogram, echogram_to_pgm_bytes

# Gray levels used for the PGM class bands.
PGM_CLASS_GRAY = {
    SeafloorClass.MN_CRUST: 255,
    SeafloorClass.SEDIMENT: 170,
    SeafloorClass.NODULES: 85,
}
PGM_UNCLASSIFIED_GRAY = 0
BAND_ROWS = 12

CLASS_COLORS = {
    SeafloorClass.MN_CRUST: "tab:red",
    SeafloorClass.SEDIMENT: "tab:blue",
    SeafloorClass.NODULES: "tab:green",
}

_SAVEFIG_KWARGS = {"dpi": 120, "metadata": {"Software": "crust-probe"}}


def per_ping_class_bands(
    n_pings: int, predictions: Sequence[tuple[int, SeafloorClass]]
) -> list[Optional[SeafloorClass]]:
    """Expand per-tile predictions into a per-ping class band.

    Each classified tile colours its full column span (the tile width around
    its center ping); pings outside any tile stay unclassified.
    """
    half_left = TILE_COLS // 2 - 1
    bands: list[Optional[SeafloorClass]] = [None] * n_pings
    for center_ping, predicted in predictions:
        lo = max(0, center_ping - half_left)
        hi = min(n_pings, center_ping + (TILE_COLS - half_left))
        for col in range(lo, hi):
            bands[col] = predicted
    return bands


def write_classified_pgm(
    echogram: Echogram, predictions: Sequence[tuple[int, SeafloorClass]], path
) -> None:
    """Echogram PGM with per-ping predicted-class gray bands appended below."""
    body = echogram_to_pgm_bytes(echogram.values)
    # Reparse dimensions rather than track them twice.
    gray = np.frombuffer(body.split(b"\n", 3)[3], dtype=np.uint8).reshape(
        echogram.samples_per_ping, echogram.n_pings
    )
    bands = per_ping_class_bands(echogram.n_pings, predictions)
    band_row = np.array(
        [PGM_UNCLASSIFIED_GRAY if b is None else PGM_CLASS_GRAY[b] for b in bands],
        dtype=np.uint8,
    )
    stacked = np.vstack([gray, np.tile(band_row, (BAND_ROWS, 1))])
    header = f"P5\n{stacked.shape[1]} {stacked.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + stacked.tobytes())


def fig_classified_echogram(
    echogram: Echogram, predictions: Sequence[tuple[int, SeafloorClass]], path
) -> None:
    fig, (ax_echo, ax_band) = plt.subplots(
        2, 1, figsize=(10, 5), height_ratios=[5, 1], sharex=True
    )
    ax_echo.imshow(
        echogram.values, aspect="auto", cmap="gray", interpolation="nearest", vmin=-1, vmax=1
    )
    ax_echo.set_ylabel("sample")
    ax_echo.set_title("Echogram with predicted seafloor classes")

    bands = per_ping_class_bands(echogram.n_pings, predictions)
    for cls in CLASS_ORDER:
        cols = [i for i, b in enumerate(bands) if b == cls]
        if cols:
            ax_band.scatter(cols, [0] * len(cols), s=8, marker="|",
                            color=CLASS_COLORS[cls], label=cls.display_name)
    ax_band.set_yticks([])
    ax_band.set_xlabel("ping")
    ax_band.legend(loc="upper right", ncol=3, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)


def fig_confusion(matrix: ConfusionMatrix, path) -> None:
    names = [c.display_name for c in CLASS_ORDER]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.imshow(matrix.counts, cmap="Blues")
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, str(int(matrix.counts[i, j])), ha="center", va="center")
    ax.set_xticks(range(len(names)), names, rotation=30)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("Test-set confusion matrix")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)


def fig_training_loss(loss_rows: Sequence[tuple[int, float, float, float]], path) -> None:
    epochs = [r[0] for r in loss_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r[1] for r in loss_rows], label="total")
    ax.plot(epochs, [r[2] for r in loss_rows], label="reconstruction")
    ax.plot(epochs, [r[3] for r in loss_rows], label="proximity")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Autoencoder training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)


def fig_thickness_profile(
    rows: Sequence[tuple[int, float, float, Optional[tuple[float, float, float]]]], path
) -> None:
    xs = [x for _, x, _, est in rows if est is not None]
    thick = [est[0] * 1000 for _, _, _, est in rows if est is not None]
    err = [est[1] * 1000 for _, _, _, est in rows if est is not None]
    fig, ax = plt.subplots(figsize=(8, 4))
    if xs:
        ax.errorbar(xs, thick, yerr=err, fmt=".", markersize=3, ecolor="lightgray", elinewidth=1)
    ax.set_xlabel("along-track position (m)")
    ax.set_ylabel("crust thickness (mm)")
    ax.set_title("Estimated crust thickness along track")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)


def format_confusion_text(matrix: ConfusionMatrix) -> str:
    names = [c.display_name for c in CLASS_ORDER]
    width = max(len(n) for n in names) + 2
    lines = [" " * width + "".join(f"{n:>{width}}" for n in names)]
    for i, name in enumerate(names):
        lines.append(
            f"{name:>{width}}" + "".join(f"{int(v):>{width}}" for v in matrix.counts[i])
        )
    return "\n".join(lines)


def write_report_text(path, sections: Sequence[tuple[str, str]]) -> None:
    with open(path, "w") as fh:
        fh.write("crust-probe survey report\n")
        fh.write("=" * 25 + "\n")
        for title, body in sections:
            fh.write(f"\n{title}\n{'-' * len(title)}\n{body}\n")
