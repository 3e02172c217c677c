"""Procedural dynamic scenes with a known ground-truth Gaussian cloud.

Each moving blob is covered by ``segments`` Gaussians, one per stretch of
time. A segment's 4D covariance couples space and time so that its slice
moves with the blob's velocity at the segment centre; transients are
short-lived static Gaussians that fade in and out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import structlog

from codec.archive import save_checkpoint
from config import get_config, get_ground_truth_file
from gaussians.cloud import GaussianCloud
from gaussians.geometry import params_from_covariance
from gaussians.model import SplatModel
from models.dataset import DatasetManifest, SynthConfig, ViewSpec, frame_time
from models.settings import RasterSettings
from render.camera import Camera, look_at
from render.pipeline import render
from utils.async_utils import gather_with_concurrency, map_in_threads
from utils.errors import DatasetError
from utils.file_manager import FileManager
from utils.state_manager import StateManager

logger = structlog.get_logger(__name__)

SCENE_HALF_EXTENT = 1.0
CAMERA_HEIGHT = 1.2
FOCAL_FACTOR = 0.866  # 60 degree horizontal field of view
BLOB_OPACITY = 0.9
BLOB_SCALE_RANGE = (0.1, 0.2)
TRANSIENT_SCALE = 0.12
TRANSIENT_TIME_STD = 0.08
ORBIT_RADII = (0.45, 0.6)
LINEAR_TRAVEL = 0.6


@dataclass
class SynthScene:
    """Ground truth, rig and rendered frames of one synthetic scene."""

    config: SynthConfig
    model: SplatModel
    cameras: list[Camera]
    manifest: DatasetManifest
    frames: dict[str, np.ndarray] = field(default_factory=dict)


def _logit(p: np.ndarray | float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _spacetime_covariance(sigma3: np.ndarray, velocity: np.ndarray, time_var: float) -> np.ndarray:
    """4D covariance whose slice has covariance ``sigma3`` and moves with ``velocity``."""
    v = np.asarray(velocity, dtype=np.float64)
    sigma4 = np.empty((4, 4))
    sigma4[:3, :3] = sigma3 + time_var * np.outer(v, v)
    sigma4[:3, 3] = sigma4[3, :3] = time_var * v
    sigma4[3, 3] = time_var
    return sigma4


class Trajectory:
    """Position and velocity of one blob over normalized time."""

    def __init__(self, motion: str, rng: np.random.Generator, phase: float) -> None:
        self.motion = motion
        self.phase = phase
        self.radius = rng.uniform(*ORBIT_RADII)
        self.height = rng.uniform(-0.3, 0.3)
        self.start = rng.uniform(-0.4, 0.4, size=3)
        direction = rng.normal(size=3)
        self.travel = LINEAR_TRAVEL * direction / np.linalg.norm(direction)

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """``(position, velocity)`` at time ``t``."""
        if self.motion == "orbit":
            angle = self.phase + np.pi * t
            position = np.array([self.radius * np.cos(angle), self.radius * np.sin(angle), self.height])
            velocity = np.pi * self.radius * np.array([-np.sin(angle), np.cos(angle), 0.0])
            return position, velocity
        if self.motion == "linear":
            return self.start + self.travel * t, self.travel.copy()
        return self.start.copy(), np.zeros(3)


def ground_truth_cloud(cfg: SynthConfig, rng: np.random.Generator) -> GaussianCloud:
    """``blobs * segments`` moving Gaussians followed by ``transients`` fading ones."""
    mu4, q_l, q_r, s4, c_dc, o_logit = [], [], [], [], [], []

    def add(center: np.ndarray, t: float, sigma4: np.ndarray, rgb: np.ndarray) -> None:
        ql, qr, log_scales = params_from_covariance(sigma4)
        mu4.append(np.append(center, t))
        q_l.append(ql)
        q_r.append(qr)
        s4.append(log_scales)
        c_dc.append(_logit(rgb))
        o_logit.append(float(_logit(BLOB_OPACITY)))

    segment_std = 0.5 / cfg.segments
    for b in range(cfg.blobs):
        trajectory = Trajectory(cfg.motion, rng, phase=2.0 * np.pi * b / cfg.blobs)
        rotation = _random_rotation(rng)
        sigma3 = rotation @ np.diag(rng.uniform(*BLOB_SCALE_RANGE, size=3) ** 2) @ rotation.T
        rgb = rng.uniform(0.2, 0.95, size=3)
        for k in range(cfg.segments):
            t = (k + 0.5) / cfg.segments
            position, velocity = trajectory.at(t)
            add(position, t, _spacetime_covariance(sigma3, velocity, segment_std**2), rgb)

    for _ in range(cfg.transients):
        position = rng.uniform(-0.7, 0.7, size=3)
        t = rng.uniform(0.2, 0.8)
        sigma3 = np.eye(3) * TRANSIENT_SCALE**2
        add(position, t, _spacetime_covariance(sigma3, np.zeros(3), TRANSIENT_TIME_STD**2), rng.uniform(0.2, 0.95, 3))

    return GaussianCloud(
        mu4=np.array(mu4),
        q_l=np.array(q_l),
        q_r=np.array(q_r),
        s4=np.array(s4),
        c_dc=np.array(c_dc),
        o_logit=np.array(o_logit),
    )


def ring_cameras(cfg: SynthConfig) -> list[Camera]:
    """Cameras evenly spaced on a horizontal ring, all looking at the origin."""
    cameras = []
    for c in range(cfg.cameras):
        angle = 2.0 * np.pi * c / cfg.cameras
        eye = np.array([cfg.radius * np.cos(angle), cfg.radius * np.sin(angle), CAMERA_HEIGHT])
        cameras.append(
            look_at(eye, np.zeros(3), cfg.resolution, cfg.resolution, fx=FOCAL_FACTOR * cfg.resolution)
        )
    return cameras


async def build_scene(cfg: SynthConfig) -> SynthScene:
    """Generate the ground truth and render every (camera, frame) view in memory."""
    rng = np.random.default_rng(cfg.seed)
    cloud = ground_truth_cloud(cfg, rng)
    cameras = ring_cameras(cfg)
    model = SplatModel(cloud=cloud, rig=[camera.to_spec() for camera in cameras])
    settings = RasterSettings()

    views: list[ViewSpec] = []
    jobs: list[Camera] = []
    for c, camera in enumerate(cameras):
        for f in range(cfg.frames):
            t = frame_time(f, cfg.frames)
            name = FileManager.frame_name(c, f, cfg.image_format)
            views.append(ViewSpec(camera_index=c, frame=f, time=t, image=name))
            jobs.append(camera.at_time(t))

    images = await map_in_threads(get_config().eval_concurrency, lambda cam: render(model, cam, settings), jobs)
    manifest = DatasetManifest(
        frame_count=cfg.frames,
        scene_min=(-SCENE_HALF_EXTENT,) * 3,
        scene_max=(SCENE_HALF_EXTENT,) * 3,
        cameras=list(model.rig),
        views=views,
    )
    frames = {view.image: image for view, image in zip(views, images)}
    return SynthScene(config=cfg, model=model, cameras=cameras, manifest=manifest, frames=frames)


async def write_scene(scene: SynthScene, out_dir: Path) -> Path:
    """Write frames, ``cameras.json`` and the ground-truth checkpoint.

    Raises:
        DatasetError: If the output directory cannot be written
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        await gather_with_concurrency(
            get_config().eval_concurrency,
            *[FileManager.save_image(out_dir / name, image) for name, image in scene.frames.items()],
        )
        manifest_file = await StateManager.save_manifest(out_dir, scene.manifest)
        save_checkpoint(scene.model, get_ground_truth_file(out_dir))
    except PermissionError as e:
        raise DatasetError(f"output directory {out_dir} is not writable: {e}") from e
    except (NotADirectoryError, FileExistsError) as e:
        raise DatasetError(f"output path {out_dir} is not a directory: {e}") from e
    return manifest_file


async def synthesize(cfg: SynthConfig, out_dir: Path) -> SynthScene:
    """Build a scene and write it under ``out_dir``; deterministic for ``cfg.seed``."""
    scene = await build_scene(cfg)
    await write_scene(scene, out_dir)
    logger.info(
        "synth_complete",
        preset=cfg.preset_name,
        seed=cfg.seed,
        gaussians=scene.model.count,
        frames=len(scene.frames),
        out=str(out_dir),
    )
    return scene
