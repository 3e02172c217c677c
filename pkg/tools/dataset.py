"""Loading datasets written by ``synth`` (or laid out the same way)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from config import get_config
from models.dataset import DatasetManifest, ViewSpec
from render.camera import Camera
from training.trainer import TrainingData, TrainingView
from utils.async_utils import gather_with_concurrency
from utils.errors import DatasetError, ManifestError, MissingFileError
from utils.file_manager import FileManager
from utils.state_manager import StateManager


@dataclass
class Dataset:
    """A manifest with its images loaded."""

    root: Path
    manifest: DatasetManifest
    images: list[np.ndarray]

    def camera(self, index: int, time: float = 0.0) -> Camera:
        """Camera ``index`` of the rig at ``time``.

        Raises:
            ManifestError: If the index is out of range
        """
        if not 0 <= index < len(self.manifest.cameras):
            raise ManifestError(f"camera {index} out of range (dataset has {len(self.manifest.cameras)})")
        return Camera.from_spec(self.manifest.cameras[index], time)

    def view_camera(self, view: ViewSpec) -> Camera:
        return self.camera(view.camera_index, view.time)

    def training_data(self) -> TrainingData:
        return TrainingData(
            views=[
                TrainingView(camera=self.view_camera(view), image=image)
                for view, image in zip(self.manifest.views, self.images)
            ],
            scene_min=np.asarray(self.manifest.scene_min, dtype=np.float64),
            scene_max=np.asarray(self.manifest.scene_max, dtype=np.float64),
        )


async def load_manifest_only(dataset_dir: Path) -> DatasetManifest:
    """Read ``cameras.json`` without touching the frames."""
    return await StateManager.load_manifest(Path(dataset_dir))


async def load_dataset(dataset_dir: Path) -> Dataset:
    """Read ``cameras.json`` and every frame it references.

    Raises:
        MissingFileError: If the directory, manifest or a frame is missing
        ManifestError: If the manifest is malformed
        DatasetError: If a frame does not match its camera's size
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise MissingFileError(f"dataset directory not found: {root}")
    manifest = await StateManager.load_manifest(root)

    images = await gather_with_concurrency(
        get_config().eval_concurrency,
        *[FileManager.load_image(root / view.image) for view in manifest.views],
    )
    for view, image in zip(manifest.views, images):
        spec = manifest.cameras[view.camera_index]
        if image.shape != (spec.height, spec.width, 3):
            raise DatasetError(
                f"{view.image}: image is {image.shape[1]}x{image.shape[0]}, camera declares {spec.width}x{spec.height}"
            )
    return Dataset(root=root, manifest=manifest, images=list(images))
