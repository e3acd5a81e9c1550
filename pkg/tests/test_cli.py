import hashlib
import json

import numpy as np
import pytest

from crustprobe import cli, evaluation, svm, synth
from crustprobe.errors import ValidationError

ALL_STAGES = [
    "simulate", "colocate", "extract", "train-ae", "encode",
    "train-svm", "classify", "thickness", "evaluate", "report",
]


def base_config(out_dir, seed=17, latent_dim=16):
    return {
        "seed": seed,
        "out_dir": str(out_dir),
        "scene": {
            "transect_length_m": 4.5,
            "patches": [
                [0.0, 1.5, 0, 0.05],
                [1.5, 3.0, 1, None],
                [3.0, 4.5, 2, None],
            ],
            "auv_altitude_m": 0.2,
            "samples_per_ping": 512,
            "snr_db": 35.0,
        },
        "train": {"epochs": 3, "latent_dim": latent_dim},
        "svm": {"C": 5.0, "max_passes": 500},
        "split": {"ratio": 0.7},
    }


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=1))
    return path


def run(stage, config_path, *extra):
    return cli.main([stage, "--config", str(config_path), *extra])


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("chain")
    out = tmp_path / "run"
    config_path = write_config(tmp_path, base_config(out))
    for stage in ALL_STAGES:
        assert run(stage, config_path) == 0, f"stage {stage} failed"
    return out, config_path


class TestFullChain:
    def test_all_artifacts_exist(self, full_run):
        out, _ = full_run
        for name in [
            "survey.cpsv", "nav.csv", "cells.csv", "ground_truth.csv",
            "colocation.csv", "tiles.cptl", "echogram.pgm", "ae_model.txt",
            "ae_loss.csv", "latents.csv", "svm_model.txt", "predictions.csv",
            "thickness.csv", "confusion.csv", "metrics.json", "report.txt",
            "echogram_classified.pgm",
        ]:
            assert (out / name).exists(), name

    def test_report_figures(self, full_run):
        out, _ = full_run
        figures = out / "figures"
        assert (figures / "classified_echogram.png").exists()
        assert (figures / "confusion_matrix.png").exists()
        assert (figures / "training_loss.png").exists()
        assert (figures / "thickness_profile.png").exists()

    def test_confusion_row_sums_match_test_set(self, full_run):
        out, _ = full_run
        rows = svm.read_predictions(out / "predictions.csv")
        split = evaluation.split(len(rows), 0.7, seed=17)
        matrix = evaluation.read_confusion_csv(out / "confusion.csv")
        for i, cls in enumerate(evaluation.CLASS_ORDER):
            want = sum(1 for k in split.test_indices if rows[k][3] == cls)
            assert matrix.counts[i].sum() == want

    def test_thickness_only_on_crust(self, full_run):
        from crustprobe import thickness as th

        out, _ = full_run
        rows = th.read_thickness_csv(out / "thickness.csv")
        truth = synth.read_ground_truth(out / "ground_truth.csv")
        by_index = {r.ping_index: r for r in truth}
        estimated = [r for r in rows if r[3] is not None]
        assert estimated, "no thickness estimates on the crust patch"
        crust_hits = sum(
            1 for r in estimated if by_index[r[0]].seafloor_class == synth.SeafloorClass.MN_CRUST
        )
        assert crust_hits / len(estimated) > 0.95

    def test_report_mentions_key_sections(self, full_run):
        out, _ = full_run
        text = (out / "report.txt").read_text()
        for fragment in ("Survey", "Confusion matrix", "Metrics", "Crust thickness"):
            assert fragment in text


class TestErrors:
    def test_missing_input_exit_2(self, tmp_path, capsys):
        config_path = write_config(tmp_path, base_config(tmp_path / "out"))
        code = run("colocate", config_path)
        assert code == 2
        err = capsys.readouterr().err
        assert "colocate" in err and "survey.cpsv" in err

    def test_invalid_config_json_exit_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        assert cli.main(["simulate", "--config", str(path)]) == 2

    def test_missing_scene_section_exit_1(self, tmp_path):
        path = write_config(tmp_path, {"seed": 1, "out_dir": str(tmp_path / "o")})
        assert cli.main(["simulate", "--config", str(path)]) == 1

    def test_invalid_scene_exit_1(self, tmp_path, capsys):
        cfg = base_config(tmp_path / "out")
        cfg["scene"]["patches"][0][3] = None  # crust patch without thickness
        config_path = write_config(tmp_path, cfg)
        assert run("simulate", config_path) == 1
        assert "thickness" in capsys.readouterr().err

    def test_classify_with_mismatched_latent_dim_exit_1(self, tmp_path, capsys):
        out = tmp_path / "out"
        config16 = write_config(tmp_path, base_config(out), "c16.json")
        for stage in ["simulate", "colocate", "extract", "train-ae", "encode", "train-svm"]:
            assert run(stage, config16) == 0
        # re-encode with an 8-dimensional model, then classify against the
        # 16-dimensional SVM model
        config8 = write_config(tmp_path, base_config(out, latent_dim=8), "c8.json")
        assert run("train-ae", config8) == 0
        assert run("encode", config8) == 0
        assert run("classify", config8) == 1
        assert "dimension" in capsys.readouterr().err

    def test_partial_outputs_removed_on_failure(self, tmp_path, monkeypatch, full_run):
        _, config_path = full_run
        out = tmp_path / "partial"
        original = evaluation.write_metrics

        def boom(metrics, path):
            original(metrics, path)
            raise ValidationError("forced failure after partial write")

        monkeypatch.setattr(cli.evaluation, "write_metrics", boom)
        # rerun the earlier stages into the new directory, then fail evaluate
        for stage in ["simulate", "colocate", "extract", "train-ae", "encode", "train-svm", "classify"]:
            assert run(stage, config_path, "--out", str(out)) == 0
        code = run("evaluate", config_path, "--out", str(out))
        assert code == 1
        assert not (out / "confusion.csv").exists()
        assert not (out / "metrics.json").exists()


class TestOverrides:
    def test_out_flag_redirects(self, tmp_path):
        config_path = write_config(tmp_path, base_config(tmp_path / "ignored"))
        other = tmp_path / "elsewhere"
        assert run("simulate", config_path, "--out", str(other)) == 0
        assert (other / "survey.cpsv").exists()
        assert not (tmp_path / "ignored" / "survey.cpsv").exists()

    def test_seed_flag_changes_artifacts(self, tmp_path):
        config_path = write_config(tmp_path, base_config(tmp_path / "a"))
        assert run("simulate", config_path) == 0
        assert run("simulate", config_path, "--out", str(tmp_path / "b"), "--seed", "18") == 0
        a = (tmp_path / "a" / "survey.cpsv").read_bytes()
        b = (tmp_path / "b" / "survey.cpsv").read_bytes()
        assert a != b

    def test_same_seed_same_survey(self, tmp_path):
        config_path = write_config(tmp_path, base_config(tmp_path / "a"))
        assert run("simulate", config_path) == 0
        assert run("simulate", config_path, "--out", str(tmp_path / "b")) == 0
        a = hashlib.sha256((tmp_path / "a" / "survey.cpsv").read_bytes()).hexdigest()
        b = hashlib.sha256((tmp_path / "b" / "survey.cpsv").read_bytes()).hexdigest()
        assert a == b

    def test_stage_isolation_rerun_leaves_inputs_alone(self, full_run, tmp_path):
        out, config_path = full_run
        before = (out / "tiles.cptl").read_bytes()
        assert run("evaluate", config_path) == 0
        assert (out / "tiles.cptl").read_bytes() == before
