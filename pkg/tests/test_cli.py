"""End-to-end runs of the command line through ``main.run``."""

import asyncio
import json

import numpy as np
import pytest

from codec.archive import MAGIC, load_any, quantize_model, save_checkpoint
from config import get_ground_truth_file
from gaussians.model import SplatModel
from main import run
from models.settings import RasterSettings
from render.camera import Camera
from render.pipeline import render
from tests.scenes import make_cloud
from tools.dataset import load_manifest_only
from utils.file_manager import FileManager


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A one-camera dataset and a model trained on it for a few steps."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run(["synth", "--out", str(data), "--preset", "orbit-1cam-2frames-16px", "--seed", "3"]) == 0
    model = root / "model.npz"
    code = run(
        ["train", "--data", str(data), "--out", str(model), "--iters", "3", "--init-count", "20", "--seed", "1", "--quiet"]
    )
    assert code == 0
    return data, model


def error_line(capsys) -> str:
    return capsys.readouterr().err.strip().splitlines()[-1]


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        assert run(["synth", "--bogus"]) == 2
        assert error_line(capsys).startswith("error[usage]:")

    def test_missing_option(self, capsys):
        assert run(["compress", "--model", "m.npz"]) == 2
        assert error_line(capsys).startswith("error[usage]:")


class TestFailures:
    def test_missing_dataset(self, tmp_path, capsys):
        assert run(["train", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "m.npz"), "--quiet"]) == 12
        assert error_line(capsys).startswith("error[missing-file]:")

    def test_bad_preset(self, tmp_path, capsys):
        assert run(["synth", "--out", str(tmp_path / "d"), "--preset", "spiral"]) == 3
        assert error_line(capsys).startswith("error[invalid-parameter]:")

    def test_not_an_archive(self, tmp_path, capsys):
        bogus = tmp_path / "bogus.meg4"
        bogus.write_bytes(b"NOPE" + bytes(40))
        assert run(["decompress", "--archive", str(bogus), "--out", str(tmp_path / "m.npz")]) == 21
        assert error_line(capsys).startswith("error[")

    def test_time_out_of_range(self, trained, tmp_path, capsys):
        data, model = trained
        code = run(["render", "--model", str(model), "--data", str(data), "--time", "1.5", "--out", str(tmp_path / "a.ppm")])
        assert code == 3


class TestPipeline:
    def test_train_writes_model_and_log(self, trained):
        _, model = trained
        assert load_any(model).count > 0
        log = model.with_name(model.name + ".log.jsonl")
        assert len(log.read_text().splitlines()) >= 1 + 3

    def test_eval_report(self, trained, tmp_path):
        data, model = trained
        report_path = tmp_path / "report.json"
        renders = tmp_path / "renders"
        assert run(["eval", "--model", str(model), "--data", str(data), "--out", str(report_path), "--renders", str(renders)]) == 0
        report = json.loads(report_path.read_text())
        assert len(report["frames"]) == 2
        assert report["summary"]["dssim_formula"] == "(1-SSIM)/2"
        for frame in report["frames"]:
            assert 0.0 <= frame["dssim1"] <= 1.0
            assert (renders / frame["image"]).exists()

    def test_ground_truth_scores_high(self, tiny_dataset, tmp_path):
        out, _ = tiny_dataset
        report_path = tmp_path / "gt.json"
        assert run(["eval", "--model", str(get_ground_truth_file(out)), "--data", str(out), "--out", str(report_path)]) == 0
        summary = json.loads(report_path.read_text())["summary"]
        assert summary["psnr"] == "inf" or summary["psnr"] >= 48.0

    def test_compress_round_trip_renders_like_quantized_model(self, trained, tmp_path):
        data, model = trained
        archive = tmp_path / "model.meg4"
        restored = tmp_path / "restored.npz"
        image_path = tmp_path / "view.ppm"
        assert run(["compress", "--model", str(model), "--out", str(archive)]) == 0
        assert archive.read_bytes().startswith(MAGIC)
        assert run(["decompress", "--archive", str(archive), "--out", str(restored)]) == 0
        assert run(["render", "--model", str(restored), "--camera", "0", "--time", "0.5", "--out", str(image_path)]) == 0

        manifest = asyncio.run(load_manifest_only(data))
        camera = Camera.from_spec(manifest.cameras[0], 0.5)
        expected = render(quantize_model(load_any(model)), camera, RasterSettings())
        loaded = asyncio.run(FileManager.load_image(image_path))
        np.testing.assert_array_equal(loaded, FileManager.quantize(expected) / 255.0)

    def test_analyze(self, trained, tmp_path):
        data, model = trained
        csv_path = tmp_path / "pr.csv"
        counts = tmp_path / "counts.csv"
        log = model.with_name(model.name + ".log.jsonl")
        code = run(
            ["analyze", "--model", str(model), "--times", "5", "--out", str(csv_path), "--data", str(data),
             "--train-log", str(log), "--counts-out", str(counts)]
        )
        assert code == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "time,participation_ratio,participation_ratio_static"
        assert len(lines) == 6
        assert all(0.0 <= float(v) <= 1.0 for line in lines[1:] for v in line.split(",")[1:])
        assert counts.read_text().splitlines()[0] == "iteration,count"

    def test_counts_need_log(self, trained, tmp_path):
        _, model = trained
        code = run(["analyze", "--model", str(model), "--times", "2", "--out", str(tmp_path / "a.csv"),
                    "--counts-out", str(tmp_path / "c.csv")])
        assert code == 3


class TestRenderRig:
    def test_render_from_saved_rig(self, trained, tmp_path):
        data, model = trained
        image_path = tmp_path / "x.ppm"
        assert run(["render", "--model", str(model), "--camera", "0", "--time", "0.5", "--out", str(image_path)]) == 0

        manifest = asyncio.run(load_manifest_only(data))
        assert load_any(model).rig == manifest.cameras
        expected = render(load_any(model), Camera.from_spec(manifest.cameras[0], 0.5), RasterSettings())
        loaded = asyncio.run(FileManager.load_image(image_path))
        np.testing.assert_array_equal(loaded, FileManager.quantize(expected) / 255.0)

    def test_data_rig_matches_saved_rig(self, trained, tmp_path):
        data, model = trained
        saved, explicit = tmp_path / "saved.ppm", tmp_path / "explicit.ppm"
        assert run(["render", "--model", str(model), "--time", "0.25", "--out", str(saved)]) == 0
        assert run(["render", "--model", str(model), "--data", str(data), "--time", "0.25", "--out", str(explicit)]) == 0
        assert saved.read_bytes() == explicit.read_bytes()

    def test_model_without_rig_needs_data(self, rng, tmp_path, capsys):
        bare = tmp_path / "bare.npz"
        save_checkpoint(SplatModel(cloud=make_cloud(rng, 3)), bare)
        assert run(["render", "--model", str(bare), "--out", str(tmp_path / "x.ppm")]) == 3
        assert "--data" in error_line(capsys)

    def test_camera_out_of_range(self, trained, tmp_path):
        _, model = trained
        assert run(["render", "--model", str(model), "--camera", "5", "--out", str(tmp_path / "x.ppm")]) == 3
