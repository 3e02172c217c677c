"""EWA perspective projection of sliced 3D Gaussians to screen-space splats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from gaussians.geometry import Sliced3D
from models.settings import RasterSettings
from render.camera import Camera


@dataclass
class Projection:
    """Per-Gaussian projection intermediates (batch on the leading axis)."""

    p_cam: np.ndarray  # (N, 3) camera-space means
    mean2: np.ndarray  # (N, 2) pixels
    cov2: np.ndarray  # (N, 2, 2) dilated
    jacobian: np.ndarray  # (N, 2, 3)
    transform: np.ndarray  # (N, 2, 3) jacobian @ camera rotation
    in_front: np.ndarray  # (N,) bool, z >= near plane


@dataclass
class Splat2D:
    """Screen-space splats that survived culling, in original Gaussian order.

    ``bbox`` holds inclusive pixel bounds ``(x0, x1, y0, y1)`` of the support
    ellipse, where ``alpha_base * exp(-m/2) >= alpha_floor``.
    """

    index: np.ndarray  # (K,) rows of the cloud
    mean2: np.ndarray
    cov2: np.ndarray
    conic: np.ndarray  # (K, 2, 2) inverse of cov2
    depth: np.ndarray
    alpha_base: np.ndarray
    rgb: np.ndarray
    bbox: np.ndarray  # (K, 4) int

    @property
    def count(self) -> int:
        return int(self.index.shape[0])


def project_points(mu3: np.ndarray, sigma3: np.ndarray, cam: Camera, settings: RasterSettings) -> Projection:
    """Project means and covariances; Gaussians behind the near plane are flagged, not removed."""
    mu3 = np.atleast_2d(np.asarray(mu3, dtype=np.float64))
    p_cam = mu3 @ cam.rotation.T + cam.translation
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    in_front = z >= settings.near_plane
    z_safe = np.where(in_front, z, 1.0)
    mean2 = np.stack([cam.fx * x / z_safe + cam.cx, cam.fy * y / z_safe + cam.cy], axis=1)
    jacobian = np.zeros((mu3.shape[0], 2, 3))
    jacobian[:, 0, 0] = cam.fx / z_safe
    jacobian[:, 0, 2] = -cam.fx * x / z_safe**2
    jacobian[:, 1, 1] = cam.fy / z_safe
    jacobian[:, 1, 2] = -cam.fy * y / z_safe**2
    transform = jacobian @ cam.rotation
    cov2 = transform @ sigma3 @ np.swapaxes(transform, -1, -2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, -1, -2)) + settings.cov_dilation * np.eye(2)
    return Projection(p_cam, mean2, cov2, jacobian, transform, in_front)


def support_bbox(
    mean2: np.ndarray, cov2: np.ndarray, alpha_base: np.ndarray, cam: Camera, alpha_floor: float
) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive integer pixel bounds of each splat's support, clipped to the image.

    Returns:
        Tuple of (bbox shaped (N, 4) as x0, x1, y0, y1; mask of splats whose support hits the image)
    """
    ratio = np.where(alpha_base > 0, alpha_base / alpha_floor, 0.0)
    radius2 = 2.0 * np.log(np.maximum(ratio, 1.0))
    ext_x = np.sqrt(radius2 * cov2[:, 0, 0])
    ext_y = np.sqrt(radius2 * cov2[:, 1, 1])
    x0 = np.maximum(np.ceil(mean2[:, 0] - ext_x), 0)
    x1 = np.minimum(np.floor(mean2[:, 0] + ext_x), cam.width - 1)
    y0 = np.maximum(np.ceil(mean2[:, 1] - ext_y), 0)
    y1 = np.minimum(np.floor(mean2[:, 1] + ext_y), cam.height - 1)
    visible = (ratio >= 1.0) & (x0 <= x1) & (y0 <= y1)
    bbox = np.stack([x0, x1, y0, y1], axis=1)
    bbox = np.where(visible[:, None], bbox, 0).astype(np.int64)
    return bbox, visible


def make_splats(
    projection: Projection,
    rgb: np.ndarray,
    alpha_base: np.ndarray,
    cam: Camera,
    settings: RasterSettings,
    index: Optional[np.ndarray] = None,
) -> Splat2D:
    """Cull projected Gaussians and package the survivors.

    Args:
        projection: Output of ``project_points``
        rgb: Colours (N, 3)
        alpha_base: Spatial times temporal opacity (N,)
        cam: Target camera
        settings: Rasterizer settings
        index: Cloud rows of the projected Gaussians; defaults to ``arange(N)``
    """
    count = projection.mean2.shape[0]
    index = np.arange(count) if index is None else np.asarray(index)
    bbox, visible = support_bbox(projection.mean2, projection.cov2, alpha_base, cam, settings.alpha_floor)
    keep = np.flatnonzero(visible & projection.in_front)
    cov2 = projection.cov2[keep]
    return Splat2D(
        index=index[keep],
        mean2=projection.mean2[keep],
        cov2=cov2,
        conic=np.linalg.inv(cov2) if keep.size else np.zeros((0, 2, 2)),
        depth=projection.p_cam[keep, 2],
        alpha_base=np.asarray(alpha_base)[keep],
        rgb=np.asarray(rgb)[keep],
        bbox=bbox[keep],
    )


def project(
    s: Sliced3D, rgb: np.ndarray, alpha_base: float, cam: Camera, settings: Optional[RasterSettings] = None
) -> Optional[Splat2D]:
    """Project one sliced Gaussian; returns None when it is culled."""
    settings = settings or RasterSettings()
    projection = project_points(np.reshape(s.mu3_t, (1, 3)), np.reshape(s.sigma3, (1, 3, 3)), cam, settings)
    splats = make_splats(projection, np.reshape(rgb, (1, 3)), np.atleast_1d(float(alpha_base)), cam, settings)
    return splats if splats.count else None


def projection_backward(
    projection: Projection,
    sigma3: np.ndarray,
    cam: Camera,
    grad_mean2: np.ndarray,
    grad_cov2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of ``project_points``.

    Args:
        projection: Forward intermediates
        sigma3: 3D covariances used in the forward pass (N, 3, 3)
        cam: Camera
        grad_mean2: dL/d(mean2) (N, 2)
        grad_cov2: dL/d(cov2) (N, 2, 2)

    Returns:
        Tuple of (dL/d(mu3) (N, 3), dL/d(sigma3) (N, 3, 3))
    """
    transform = projection.transform
    grad_sym = 0.5 * (grad_cov2 + np.swapaxes(grad_cov2, -1, -2))
    grad_sigma3 = np.swapaxes(transform, -1, -2) @ grad_sym @ transform
    grad_transform = 2.0 * grad_sym @ transform @ sigma3
    grad_jac = grad_transform @ cam.rotation.T

    x, y, z = projection.p_cam.T
    z = np.where(projection.in_front, z, 1.0)
    fx, fy = cam.fx, cam.fy
    grad_p = np.einsum("nji,nj->ni", projection.jacobian, grad_mean2)
    grad_p[:, 0] += grad_jac[:, 0, 2] * (-fx / z**2)
    grad_p[:, 1] += grad_jac[:, 1, 2] * (-fy / z**2)
    grad_p[:, 2] += (
        grad_jac[:, 0, 0] * (-fx / z**2)
        + grad_jac[:, 0, 2] * (2.0 * fx * x / z**3)
        + grad_jac[:, 1, 1] * (-fy / z**2)
        + grad_jac[:, 1, 2] * (2.0 * fy * y / z**3)
    )
    grad_p[~projection.in_front] = 0.0
    grad_sigma3[~projection.in_front] = 0.0
    return grad_p @ cam.rotation, grad_sigma3
