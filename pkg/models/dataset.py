"""Dataset manifest models (``cameras.json``) and synthetic scene configuration."""

import re
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from utils.errors import InvalidParameterError

MotionPreset = Literal["orbit", "linear", "static"]

_PRESET_PATTERN = re.compile(r"^(?P<motion>[a-z]+)-(?P<cams>\d+)cam-(?P<frames>\d+)frames-(?P<res>\d+)px$")


class CameraSpec(BaseModel):
    """One physical camera of the rig."""

    width: int = Field(..., gt=0, description="Image width in pixels")
    height: int = Field(..., gt=0, description="Image height in pixels")
    fx: float = Field(..., gt=0, description="Focal length along x (pixels)")
    fy: float = Field(..., gt=0, description="Focal length along y (pixels)")
    cx: float = Field(..., description="Principal point x (pixels)")
    cy: float = Field(..., description="Principal point y (pixels)")
    world_to_camera: list[list[float]] = Field(
        ..., description="Row-major 4x4 world-to-camera matrix (OpenCV axes: x right, y down, z forward)"
    )

    @field_validator("world_to_camera")
    @classmethod
    def _check_matrix(cls, value: list[list[float]]) -> list[list[float]]:
        if len(value) != 4 or any(len(row) != 4 for row in value):
            raise ValueError("world_to_camera must be a 4x4 matrix")
        return value


class ViewSpec(BaseModel):
    """One training/evaluation image: a camera at a time."""

    camera_index: int = Field(..., ge=0, description="Index into DatasetManifest.cameras")
    frame: int = Field(..., ge=0, description="Frame number")
    time: float = Field(..., ge=0, le=1, description="Normalized time in [0, 1]")
    image: str = Field(..., description="Image path relative to the dataset directory")


class DatasetManifest(BaseModel):
    """Contents of ``cameras.json``."""

    version: int = Field(default=1, description="Manifest schema version")
    frame_count: int = Field(..., ge=1, description="Number of time steps")
    scene_min: tuple[float, float, float] = Field(..., description="Scene bounding box minimum corner")
    scene_max: tuple[float, float, float] = Field(..., description="Scene bounding box maximum corner")
    cameras: list[CameraSpec] = Field(..., min_length=1, description="Rig cameras")
    views: list[ViewSpec] = Field(..., min_length=1, description="Images in the dataset")

    @model_validator(mode="after")
    def _check_consistency(self) -> "DatasetManifest":
        for view in self.views:
            if view.camera_index >= len(self.cameras):
                raise ValueError(f"view {view.image} references camera {view.camera_index} of {len(self.cameras)}")
        if any(lo > hi for lo, hi in zip(self.scene_min, self.scene_max)):
            raise ValueError("scene_min must not exceed scene_max")
        return self

    class Config:
        """Pydantic config."""

        json_schema_extra = {
            "example": {
                "version": 1,
                "frame_count": 8,
                "scene_min": [-1.0, -1.0, -1.0],
                "scene_max": [1.0, 1.0, 1.0],
                "cameras": [
                    {
                        "width": 64,
                        "height": 64,
                        "fx": 55.4,
                        "fy": 55.4,
                        "cx": 31.5,
                        "cy": 31.5,
                        "world_to_camera": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 4], [0, 0, 0, 1]],
                    }
                ],
                "views": [{"camera_index": 0, "frame": 0, "time": 0.0, "image": "frames/cam00_f000.ppm"}],
            }
        }


class SynthConfig(BaseModel):
    """Parameters of a procedurally generated scene."""

    motion: MotionPreset = Field(default="orbit", description="Motion preset of the ground-truth blobs")
    cameras: int = Field(default=3, ge=1, description="Cameras on the rig ring")
    frames: int = Field(default=8, ge=1, description="Time steps")
    resolution: int = Field(default=64, ge=11, description="Square image size in pixels")
    seed: int = Field(default=0, description="Random seed")
    radius: float = Field(default=4.0, gt=0, description="Camera ring radius")
    blobs: int = Field(default=6, ge=1, description="Moving blobs")
    segments: int = Field(default=4, ge=1, description="Temporal segments per blob")
    transients: int = Field(default=6, ge=0, description="Gaussians that appear and vanish")
    image_format: Literal["ppm", "png"] = Field(default="ppm", description="Frame encoding")

    @classmethod
    def from_preset(cls, preset: str, seed: int = 0) -> "SynthConfig":
        """Parse a preset name such as ``orbit-3cam-8frames-64px``.

        Raises:
            InvalidParameterError: If the name does not follow the preset pattern
        """
        match = _PRESET_PATTERN.match(preset)
        if match is None:
            raise InvalidParameterError(f"preset {preset!r} does not match '<motion>-<n>cam-<m>frames-<r>px'")
        return cls(
            motion=match["motion"],
            cameras=int(match["cams"]),
            frames=int(match["frames"]),
            resolution=int(match["res"]),
            seed=seed,
        )

    @property
    def ground_truth_count(self) -> int:
        return self.blobs * self.segments + self.transients

    @property
    def preset_name(self) -> str:
        return f"{self.motion}-{self.cameras}cam-{self.frames}frames-{self.resolution}px"


def frame_time(frame: int, frame_count: int) -> float:
    """Normalized time of a frame; a single frame sits at t = 0."""
    return 0.0 if frame_count <= 1 else frame / (frame_count - 1)

