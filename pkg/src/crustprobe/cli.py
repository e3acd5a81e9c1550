"""crust-probe command line: the classification pipeline as subcommands.

Each subcommand reads its stage inputs from disk, writes only its declared
outputs, and leaves earlier artifacts untouched, so stages can be re-run and
inspected independently. A single JSON config file describes the whole run;
--seed and --out flags override the config.

Exit codes: 0 success, 1 validation failure, 2 I/O or format failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autoencoder as ae
from . import evaluation, georef, report, svm, synth, thickness, tiles
from .errors import CrustProbeError, FormatError, ValidationError
from .synth import SeafloorClass

DEFAULT_PATHS = {
    "survey": "survey.cpsv",
    "nav": "nav.csv",
    "cells": "cells.csv",
    "ground_truth": "ground_truth.csv",
    "colocation": "colocation.csv",
    "tiles": "tiles.cptl",
    "echogram_pgm": "echogram.pgm",
    "ae_model": "ae_model.txt",
    "ae_loss": "ae_loss.csv",
    "latents": "latents.csv",
    "svm_model": "svm_model.txt",
    "predictions": "predictions.csv",
    "thickness": "thickness.csv",
    "confusion": "confusion.csv",
    "metrics": "metrics.json",
    "report": "report.txt",
    "classified_pgm": "echogram_classified.pgm",
    "figures": "figures",
}


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    scene: synth.SceneSpec
    train: ae.TrainConfig
    svm: svm.SvmConfig
    sound: thickness.SoundSpeed
    tile_spacing_m: float = 0.15
    tile_pre_offset: int = tiles.DEFAULT_PRE_OFFSET
    tile_threshold_factor: float = tiles.DEFAULT_THRESHOLD_FACTOR
    thickness_min_prominence: float = 0.3
    split_ratio: float = 0.7
    split_stratified: bool = False
    paths: Optional[dict[str, str]] = None

    def path(self, key: str) -> Path:
        names = dict(DEFAULT_PATHS)
        if self.paths:
            names.update(self.paths)
        return self.out_dir / names[key]


def _build_scene(data: dict, seed: int) -> synth.SceneSpec:
    try:
        patches = tuple(
            synth.Patch(
                start_m=float(p[0]),
                end_m=float(p[1]),
                seafloor_class=SeafloorClass(int(p[2])),
                thickness_m=None if p[3] is None else float(p[3]),
            )
            for p in data["patches"]
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise ValidationError(
            "scene.patches must be a list of [start_m, end_m, class, thickness_m|null]"
        ) from exc
    signature = synth.EchoSignature(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in data.get("signature", {}).items()
    })
    kwargs = {
        k: data[k]
        for k in (
            "auv_velocity_mps", "auv_altitude_m", "ping_rate_hz",
            "sample_rate_hz", "samples_per_ping", "snr_db",
        )
        if k in data
    }
    return synth.SceneSpec(
        transect_length_m=float(data["transect_length_m"]),
        patches=patches,
        seed=int(data.get("seed", seed)),
        signature=signature,
        **kwargs,
    )


def load_config(path: Path, seed_override: Optional[int], out_override: Optional[str]) -> PipelineConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file {path} is not valid JSON: {exc}") from exc

    seed = int(seed_override if seed_override is not None else data.get("seed", 0))
    out_dir = Path(out_override if out_override is not None else data.get("out_dir", "."))

    if "scene" not in data:
        raise ValidationError(f"config file {path} lacks a 'scene' section")
    scene = _build_scene(data["scene"], seed)

    train_data = dict(data.get("train", {}))
    train_data.setdefault("seed", seed)
    train_cfg = ae.TrainConfig(**train_data)

    svm_data = dict(data.get("svm", {}))
    svm_data.setdefault("seed", seed)
    svm_cfg = svm.SvmConfig(**svm_data)

    sound_cfg = thickness.SoundSpeed(**data.get("sound", {}))

    tile_data = data.get("tiles", {})
    th_data = data.get("thickness", {})
    split_data = data.get("split", {})
    return PipelineConfig(
        seed=seed,
        out_dir=out_dir,
        scene=scene,
        train=train_cfg,
        svm=svm_cfg,
        sound=sound_cfg,
        tile_spacing_m=float(tile_data.get("spacing_m", 0.15)),
        tile_pre_offset=int(tile_data.get("pre_offset", tiles.DEFAULT_PRE_OFFSET)),
        tile_threshold_factor=float(
            tile_data.get("threshold_factor", tiles.DEFAULT_THRESHOLD_FACTOR)
        ),
        thickness_min_prominence=float(th_data.get("min_prominence", 0.3)),
        split_ratio=float(split_data.get("ratio", 0.7)),
        split_stratified=bool(split_data.get("stratified", False)),
        paths=data.get("paths"),
    )


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"stage '{stage}' needs missing input {path}")
    return path


def _derive_split(cfg: PipelineConfig, n: int) -> evaluation.DatasetSplit:
    # The split is derived, not stored: every stage recomputes the same
    # deterministic split from the tile count, ratio, and global seed.
    return evaluation.split(n, cfg.split_ratio, cfg.seed)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_simulate(cfg: PipelineConfig) -> list[Path]:
    outputs = [cfg.path("survey"), cfg.path("nav"), cfg.path("cells"), cfg.path("ground_truth")]
    survey, truth, cells = synth.synthesize_survey(cfg.scene)
    synth.write_survey(survey, outputs[0])
    track = georef.NavTrack(
        [georef.TrackSample(p.timestamp, p.x_m, p.y_m, p.altitude_m) for p in survey.pings]
    )
    georef.write_track(track, outputs[1])
    georef.write_cells(cells, outputs[2])
    synth.write_ground_truth(truth, outputs[3])
    return outputs


def stage_colocate(cfg: PipelineConfig) -> list[Path]:
    survey = synth.read_survey(_require(cfg.path("survey"), "colocate"))
    track = georef.read_track(_require(cfg.path("nav"), "colocate"))
    cells = georef.read_cells(_require(cfg.path("cells"), "colocate"))
    colocation = georef.co_locate(survey.pings, track, cells)
    out = cfg.path("colocation")
    georef.write_colocation(colocation, out)
    return [out]


def stage_extract(cfg: PipelineConfig) -> list[Path]:
    survey = synth.read_survey(_require(cfg.path("survey"), "extract"))
    colocation = georef.read_colocation(
        _require(cfg.path("colocation"), "extract"),
        all_ping_indices=[p.index for p in survey.pings],
    )
    echogram = tiles.build_echogram(survey)
    tile_list = tiles.sample_tiles(
        echogram,
        colocation,
        cfg.tile_spacing_m,
        pre_offset=cfg.tile_pre_offset,
        threshold_factor=cfg.tile_threshold_factor,
    )
    outputs = [cfg.path("tiles"), cfg.path("echogram_pgm")]
    tiles.write_tiles(tile_list, outputs[0])
    tiles.write_echogram_pgm(echogram, outputs[1])
    return outputs


def stage_train_ae(cfg: PipelineConfig) -> list[Path]:
    tile_list = tiles.read_tiles(_require(cfg.path("tiles"), "train-ae"))
    values, positions, _ = tiles.tiles_as_arrays(tile_list)
    train_idx = _derive_split(cfg, len(tile_list)).train_indices
    model, log = ae.train(values[train_idx], positions[train_idx], cfg.train)
    outputs = [cfg.path("ae_model"), cfg.path("ae_loss")]
    ae.save_model(model, outputs[0])
    with open(outputs[1], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "total", "reconstruction", "proximity"])
        for epoch, entry in enumerate(log):
            writer.writerow(
                [epoch, repr(entry.total), repr(entry.reconstruction), repr(entry.proximity)]
            )
    return outputs


def stage_encode(cfg: PipelineConfig) -> list[Path]:
    tile_list = tiles.read_tiles(_require(cfg.path("tiles"), "encode"))
    model = ae.load_model(_require(cfg.path("ae_model"), "encode"))
    values, _, _ = tiles.tiles_as_arrays(tile_list)
    latents = ae.encode(model, values)
    records = [
        ae.LatentRecord(
            center_ping=t.center_ping,
            x=t.position[0],
            y=t.position[1],
            label=t.label,
            values=latents[i],
        )
        for i, t in enumerate(tile_list)
    ]
    out = cfg.path("latents")
    ae.write_latents(records, out)
    return [out]


def stage_train_svm(cfg: PipelineConfig) -> list[Path]:
    records = ae.read_latents(_require(cfg.path("latents"), "train-svm"))
    train_idx = _derive_split(cfg, len(records)).train_indices
    labeled = [records[i] for i in train_idx if records[i].label is not None]
    if not labeled:
        raise ValidationError("no labeled latents in the training split")
    x = np.stack([r.values for r in labeled])
    y = np.array([int(r.label) for r in labeled])
    model = svm.train_multiclass(x, y, cfg.svm)
    out = cfg.path("svm_model")
    svm.save_model(model, out)
    return [out]


def stage_classify(cfg: PipelineConfig) -> list[Path]:
    records = ae.read_latents(_require(cfg.path("latents"), "classify"))
    model = svm.load_model(_require(cfg.path("svm_model"), "classify"))
    x = np.stack([r.values for r in records])
    predicted = svm.predict(model, x)
    out = cfg.path("predictions")
    svm.write_predictions(
        [
            (r.center_ping, r.x, r.y, r.label, predicted[i])
            for i, r in enumerate(records)
        ],
        out,
    )
    return [out]


def stage_thickness(cfg: PipelineConfig) -> list[Path]:
    survey = synth.read_survey(_require(cfg.path("survey"), "thickness"))
    rows = []
    for ping in survey.pings:
        est = thickness.estimate_thickness(
            ping.samples,
            survey.sample_rate_hz,
            cfg.sound,
            cfg.thickness_min_prominence,
            cfg.tile_threshold_factor,
        )
        rows.append((ping.index, ping.x_m, ping.y_m, est))
    out = cfg.path("thickness")
    thickness.write_thickness_csv(rows, out)
    return [out]


def stage_evaluate(cfg: PipelineConfig) -> list[Path]:
    rows = svm.read_predictions(_require(cfg.path("predictions"), "evaluate"))
    test_idx = _derive_split(cfg, len(rows)).test_indices
    true_labels = [rows[i][3] for i in test_idx if rows[i][3] is not None]
    predicted = [rows[i][4] for i in test_idx if rows[i][3] is not None]
    matrix, metrics = evaluation.confusion(true_labels, predicted)
    outputs = [cfg.path("confusion"), cfg.path("metrics")]
    evaluation.write_confusion_csv(matrix, outputs[0])
    evaluation.write_metrics(metrics, outputs[1])
    return outputs


def stage_report(cfg: PipelineConfig) -> list[Path]:
    survey = synth.read_survey(_require(cfg.path("survey"), "report"))
    rows = svm.read_predictions(_require(cfg.path("predictions"), "report"))
    echogram = tiles.build_echogram(survey)
    predictions = [(r[0], r[4]) for r in rows]

    figures_dir = cfg.path("figures")
    figures_dir.mkdir(parents=True, exist_ok=True)
    outputs = [
        cfg.path("report"),
        cfg.path("classified_pgm"),
        figures_dir / "classified_echogram.png",
    ]

    report.write_classified_pgm(echogram, predictions, outputs[1])
    report.fig_classified_echogram(echogram, predictions, outputs[2])

    sections: list[tuple[str, str]] = []
    n_labeled = sum(1 for r in rows if r[3] is not None)
    counts = {
        cls.display_name: sum(1 for r in rows if r[4] == cls) for cls in evaluation.CLASS_ORDER
    }
    sections.append(
        (
            "Survey",
            f"pings: {len(survey.pings)}\n"
            f"samples per ping: {survey.samples_per_ping}\n"
            f"sample rate: {survey.sample_rate_hz:g} Hz, ping rate: {survey.ping_rate_hz:g} Hz\n"
            f"classified tiles: {len(rows)} ({n_labeled} with reference labels)\n"
            + "\n".join(f"predicted {name}: {count}" for name, count in counts.items()),
        )
    )

    if cfg.path("confusion").exists():
        matrix = evaluation.read_confusion_csv(cfg.path("confusion"))
        sections.append(("Confusion matrix (test set)", report.format_confusion_text(matrix)))
        report.fig_confusion(matrix, figures_dir / "confusion_matrix.png")
        outputs.append(figures_dir / "confusion_matrix.png")

    if cfg.path("metrics").exists():
        metrics = evaluation.read_metrics(cfg.path("metrics"))
        body = "\n".join(f"{k}: {v:.4f}" for k, v in sorted(metrics.items()))
        sections.append(("Metrics", body))

    if cfg.path("ae_loss").exists():
        with open(cfg.path("ae_loss"), newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            loss_rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]
        if loss_rows:
            report.fig_training_loss(loss_rows, figures_dir / "training_loss.png")
            outputs.append(figures_dir / "training_loss.png")
            sections.append(
                (
                    "Autoencoder training",
                    f"epochs: {loss_rows[-1][0]}\n"
                    f"initial reconstruction loss: {loss_rows[0][2]:.6f}\n"
                    f"final reconstruction loss: {loss_rows[-1][2]:.6f}",
                )
            )

    if cfg.path("thickness").exists():
        th_rows = thickness.read_thickness_csv(cfg.path("thickness"))
        estimates = [est for _, _, _, est in th_rows if est is not None]
        report.fig_thickness_profile(th_rows, figures_dir / "thickness_profile.png")
        outputs.append(figures_dir / "thickness_profile.png")
        if estimates:
            values = np.array([e[0] for e in estimates])
            body = (
                f"pings with an estimate: {len(estimates)} / {len(th_rows)}\n"
                f"mean thickness: {values.mean() * 1000:.2f} mm\n"
                f"min / max: {values.min() * 1000:.2f} / {values.max() * 1000:.2f} mm"
            )
        else:
            body = f"pings with an estimate: 0 / {len(th_rows)}"
        sections.append(("Crust thickness", body))

    report.write_report_text(outputs[0], sections)
    return outputs


STAGES: dict[str, Callable[[PipelineConfig], list[Path]]] = {
    "simulate": stage_simulate,
    "colocate": stage_colocate,
    "extract": stage_extract,
    "train-ae": stage_train_ae,
    "encode": stage_encode,
    "train-svm": stage_train_svm,
    "classify": stage_classify,
    "thickness": stage_thickness,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def _stage_outputs(cfg: PipelineConfig, stage: str) -> list[Path]:
    mapping = {
        "simulate": ["survey", "nav", "cells", "ground_truth"],
        "colocate": ["colocation"],
        "extract": ["tiles", "echogram_pgm"],
        "train-ae": ["ae_model", "ae_loss"],
        "encode": ["latents"],
        "train-svm": ["svm_model"],
        "classify": ["predictions"],
        "thickness": ["thickness"],
        "evaluate": ["confusion", "metrics"],
        "report": ["report", "classified_pgm"],
    }
    paths = [cfg.path(key) for key in mapping[stage]]
    if stage == "report":
        figures_dir = cfg.path("figures")
        paths += sorted(figures_dir.glob("*.png")) if figures_dir.exists() else []
    return paths


def run_stage(stage: str, cfg: PipelineConfig) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        STAGES[stage](cfg)
    except BaseException:
        for path in _stage_outputs(cfg, stage):
            if path.exists() and path.is_file():
                path.unlink()
        raise


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="crust-probe",
        description="Acoustic seafloor classification and crust thickness pipeline.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name, fn in STAGES.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, type=Path, help="pipeline config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--out", type=str, default=None, help="override the output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.seed, args.out)
        run_stage(args.stage, cfg)
    except CrustProbeError as exc:
        print(f"crust-probe {args.stage}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"crust-probe {args.stage}: {exc}", file=sys.stderr)
        return 2
    except (TypeError, KeyError) as exc:
        print(f"crust-probe {args.stage}: invalid configuration: {exc!r}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
