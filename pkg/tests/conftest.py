"""Shared fixtures."""

import asyncio

import numpy as np
import pytest

from gaussians.cloud import GaussianCloud
from gaussians.model import SplatModel
from models.dataset import SynthConfig
from models.settings import RasterSettings
from render.camera import look_at
from tests.scenes import make_cloud
from tools.synth import synthesize


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    """32x32 camera four units down the -y axis, looking at the origin with z up."""
    return look_at(np.array([0.0, -4.0, 0.0]), np.zeros(3), 32, 32, fx=30.0, time=0.5)


@pytest.fixture
def small_camera():
    return look_at(np.array([0.0, -4.0, 0.0]), np.zeros(3), 16, 16, fx=16.0, time=0.5)


@pytest.fixture
def smooth_settings() -> RasterSettings:
    """Settings without hard gates inside the image, for finite-difference checks."""
    return RasterSettings(alpha_floor=1e-12, temporal_threshold=0.0, tile_size=8, workers=1)


@pytest.fixture
def cloud(rng) -> GaussianCloud:
    return make_cloud(rng, 5)


@pytest.fixture
def model(cloud) -> SplatModel:
    return SplatModel(cloud=cloud)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A 2-camera, 3-frame, 16 px synthetic dataset written to disk once per session."""
    out = tmp_path_factory.mktemp("tiny_dataset")
    cfg = SynthConfig(motion="orbit", cameras=2, frames=3, resolution=16, seed=7, blobs=3, segments=2, transients=2)
    scene = asyncio.run(synthesize(cfg, out))
    return out, scene
