"""Pinhole cameras in OpenCV convention (x right, y down, z forward)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from models.dataset import CameraSpec
from utils.errors import InvalidParameterError

ORTHONORMAL_TOLERANCE = 1e-8


@dataclass
class Camera:
    """A world-to-camera rigid transform, intrinsics, image size and render time."""

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    time: float = 0.0

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError(f"image size must be positive, got {self.width}x{self.height}")
        error = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if error > ORTHONORMAL_TOLERANCE or np.linalg.det(self.rotation) < 0:
            raise InvalidParameterError(f"camera rotation is not a proper rotation (orthogonality error {error:.2e})")

    @property
    def center(self) -> np.ndarray:
        """Camera centre ``p_v = -Rᵀ t`` in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Optical axis in world coordinates."""
        return self.rotation[2].copy()

    @property
    def world_to_camera(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def at_time(self, time: float) -> "Camera":
        """Same camera at another time."""
        return Camera(self.rotation, self.translation, self.fx, self.fy, self.cx, self.cy, self.width, self.height, time)

    @classmethod
    def from_spec(cls, spec: CameraSpec, time: float = 0.0) -> "Camera":
        matrix = np.asarray(spec.world_to_camera, dtype=np.float64)
        return cls(
            rotation=matrix[:3, :3],
            translation=matrix[:3, 3],
            fx=spec.fx,
            fy=spec.fy,
            cx=spec.cx,
            cy=spec.cy,
            width=spec.width,
            height=spec.height,
            time=time,
        )

    def to_spec(self) -> CameraSpec:
        return CameraSpec(
            width=self.width,
            height=self.height,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx,
            cy=self.cy,
            world_to_camera=self.world_to_camera.tolist(),
        )


def look_at(
    eye: np.ndarray,
    target: np.ndarray,
    width: int,
    height: int,
    fx: float,
    fy: float | None = None,
    up: np.ndarray = np.array([0.0, 0.0, 1.0]),
    time: float = 0.0,
) -> Camera:
    """Camera at ``eye`` looking at ``target`` with ``up`` pointing towards the top of the image.

    The principal point sits at the pixel-grid centre ``((W-1)/2, (H-1)/2)``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        raise InvalidParameterError("look_at: view direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return Camera(
        rotation=rotation,
        translation=-rotation @ eye,
        fx=fx,
        fy=fx if fy is None else fy,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
        time=time,
    )
