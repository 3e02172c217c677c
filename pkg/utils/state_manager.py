"""State management utilities for dataset manifests and training logs."""

import json
from pathlib import Path

import aiofiles
from pydantic import ValidationError

from config import get_manifest_file
from models.dataset import DatasetManifest
from models.training_state import (
    DensifyEvent,
    IterationRecord,
    ParticipationSample,
    PruneEvent,
    TrainLog,
)
from utils.errors import ManifestError, MissingFileError

_EVENT_MODELS = {
    "prune": PruneEvent,
    "densify": DensifyEvent,
    "participation": ParticipationSample,
}


class StateManager:
    """Manages persistence of manifests and training logs."""

    @staticmethod
    async def save_manifest(dataset_dir: Path, manifest: DatasetManifest) -> Path:
        """Save a camera manifest to ``cameras.json``.

        Args:
            dataset_dir: Root directory of the dataset
            manifest: The manifest to save

        Returns:
            Path of the written manifest
        """
        manifest_file = get_manifest_file(dataset_dir)
        manifest_file.parent.mkdir(parents=True, exist_ok=True)

        async with aiofiles.open(manifest_file, "w") as f:
            await f.write(json.dumps(manifest.model_dump(mode="json"), indent=2))

        return manifest_file

    @staticmethod
    async def load_manifest(dataset_dir: Path) -> DatasetManifest:
        """Load and validate a camera manifest.

        Raises:
            MissingFileError: If ``cameras.json`` does not exist
            ManifestError: If it is not JSON or fails validation
        """
        manifest_file = get_manifest_file(dataset_dir)

        if not manifest_file.exists():
            raise MissingFileError(f"manifest not found: {manifest_file}")

        async with aiofiles.open(manifest_file, "r") as f:
            content = await f.read()

        try:
            return DatasetManifest(**json.loads(content))
        except json.JSONDecodeError as e:
            raise ManifestError(f"{manifest_file} is not valid JSON: {e.msg}") from e
        except (TypeError, ValidationError) as e:
            first = e.errors()[0] if isinstance(e, ValidationError) else {"loc": (), "msg": str(e)}
            where = ".".join(str(part) for part in first["loc"]) or "manifest"
            raise ManifestError(f"{where}: {first['msg']}") from e

    @staticmethod
    async def save_train_log(path: Path, log: TrainLog) -> Path:
        """Write a training log as JSON lines.

        One line per iteration record; prune, densify and participation
        events carry an ``event`` key. The first line is a header with the
        variant label and the number of clamped quaternions.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        lines = [
            json.dumps(
                {"event": "header", "variant": log.variant, "degenerate_quaternions": log.degenerate_quaternions}
            )
        ]
        lines.extend(json.dumps(record.model_dump(mode="json")) for record in log.records)
        for event, items in (
            ("prune", log.prune_events),
            ("densify", log.densify_events),
            ("participation", log.participation),
        ):
            lines.extend(json.dumps({"event": event, **item.model_dump(mode="json")}) for item in items)

        async with aiofiles.open(path, "w") as f:
            await f.write("\n".join(lines) + "\n")

        return path

    @staticmethod
    async def load_train_log(path: Path) -> TrainLog:
        """Read a log written by ``save_train_log``.

        Raises:
            MissingFileError: If the file does not exist
        """
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"training log not found: {path}")

        async with aiofiles.open(path, "r") as f:
            content = await f.read()

        log = TrainLog()
        for line in content.splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            event = entry.pop("event", None)
            if event is None:
                log.records.append(IterationRecord(**entry))
            elif event == "header":
                log.variant = entry.get("variant", log.variant)
                log.degenerate_quaternions = entry.get("degenerate_quaternions", 0)
            elif event in _EVENT_MODELS:
                target = {
                    "prune": log.prune_events,
                    "densify": log.densify_events,
                    "participation": log.participation,
                }[event]
                target.append(_EVENT_MODELS[event](**entry))

        return log
