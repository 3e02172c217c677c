import asyncio
import json

import pytest

from models.dataset import CameraSpec, DatasetManifest, ViewSpec
from models.training_state import DensifyEvent, IterationRecord, ParticipationSample, PruneEvent, TrainLog
from utils.errors import ManifestError, MissingFileError
from utils.state_manager import StateManager


@pytest.fixture
def manifest() -> DatasetManifest:
    camera = CameraSpec(
        width=16, height=16, fx=14.0, fy=14.0, cx=7.5, cy=7.5,
        world_to_camera=[[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 4], [0, 0, 0, 1]],
    )
    views = [ViewSpec(camera_index=0, frame=f, time=f / 2, image=f"frames/cam00_f{f:03d}.ppm") for f in range(3)]
    return DatasetManifest(frame_count=3, scene_min=(-1, -1, -1), scene_max=(1, 1, 1), cameras=[camera], views=views)


class TestManifest:
    def test_round_trip(self, manifest, tmp_path):
        path = asyncio.run(StateManager.save_manifest(tmp_path, manifest))
        assert path == tmp_path / "cameras.json"
        assert asyncio.run(StateManager.load_manifest(tmp_path)) == manifest

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            asyncio.run(StateManager.load_manifest(tmp_path))

    def test_not_json(self, tmp_path):
        (tmp_path / "cameras.json").write_text("{not json")
        with pytest.raises(ManifestError):
            asyncio.run(StateManager.load_manifest(tmp_path))

    def test_missing_field_is_named(self, manifest, tmp_path):
        content = manifest.model_dump(mode="json")
        del content["cameras"][0]["fx"]
        (tmp_path / "cameras.json").write_text(json.dumps(content))
        with pytest.raises(ManifestError, match="fx"):
            asyncio.run(StateManager.load_manifest(tmp_path))

    def test_bad_camera_reference(self, manifest, tmp_path):
        content = manifest.model_dump(mode="json")
        content["views"][1]["camera_index"] = 4
        (tmp_path / "cameras.json").write_text(json.dumps(content))
        with pytest.raises(ManifestError, match="camera 4"):
            asyncio.run(StateManager.load_manifest(tmp_path))


class TestTrainLog:
    def test_round_trip(self, tmp_path):
        log = TrainLog(
            variant="DAC+deform",
            records=[IterationRecord(iteration=i, l1=0.1 / (i + 1), ssim_loss=0.3, l_opa=0.01, count=10 + i) for i in range(5)],
            prune_events=[PruneEvent(iteration=4, before=14, after=9)],
            densify_events=[DensifyEvent(iteration=2, cloned=1, split=1, before=12, after=14)],
            participation=[ParticipationSample(iteration=4, ratio=0.25)],
            degenerate_quaternions=3,
        )
        path = asyncio.run(StateManager.save_train_log(tmp_path / "logs" / "run.jsonl", log))
        lines = path.read_text().splitlines()
        assert json.loads(lines[0])["event"] == "header"
        assert len(lines) == 1 + 5 + 3
        assert asyncio.run(StateManager.load_train_log(path)) == log

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            asyncio.run(StateManager.load_train_log(tmp_path / "absent.jsonl"))
