"""Training loop: one random view per step, Adam updates, densification and pruning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import structlog

from gaussians.cloud import GaussianCloud
from gaussians.model import SplatModel
from models.settings import RasterSettings
from models.training_state import (
    DensifyEvent,
    IterationRecord,
    ParticipationSample,
    PruneEvent,
    TrainConfig,
    TrainLog,
)
from render.camera import Camera
from render.pipeline import participation_ratio, render_backward, render_forward
from training.densify import DensifyStats, densify, prune
from training.losses import total_loss
from training.optimizer import ModelOptimizer
from training.schedules import cloud_learning_rates, lr_schedule
from utils.errors import DatasetError

logger = structlog.get_logger(__name__)

NEAREST_NEIGHBOURS = 3


@dataclass
class TrainingView:
    """One target image and the camera (with time) that sees it."""

    camera: Camera
    image: np.ndarray


@dataclass
class TrainingData:
    """Views plus the scene bounding box."""

    views: list[TrainingView]
    scene_min: np.ndarray
    scene_max: np.ndarray

    @property
    def extent(self) -> float:
        """Half the bounding-box diagonal."""
        return float(0.5 * np.linalg.norm(np.asarray(self.scene_max) - np.asarray(self.scene_min)))

    @property
    def times(self) -> list[float]:
        return sorted({view.camera.time for view in self.views})

    def validate(self) -> None:
        """Check that every image matches its camera.

        Raises:
            DatasetError: On an empty dataset or a size mismatch
        """
        if not self.views:
            raise DatasetError("training needs at least one view")
        for i, view in enumerate(self.views):
            expected = (view.camera.height, view.camera.width, 3)
            if view.image.shape != expected:
                raise DatasetError(f"view {i}: image shape {view.image.shape} does not match camera {expected}")


@dataclass
class TrainResult:
    model: SplatModel
    log: TrainLog = field(default_factory=TrainLog)


def initialize_cloud(
    count: int,
    scene_min: np.ndarray,
    scene_max: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> GaussianCloud:
    """Random initial cloud inside the scene box.

    Spatial log-scales come from the RMS distance to the nearest neighbours;
    quaternions are identity and colours start at mid-grey.
    """
    lo, hi = np.asarray(scene_min, dtype=np.float64), np.asarray(scene_max, dtype=np.float64)
    xyz = rng.uniform(lo, hi, size=(count, 3))
    mu4 = np.concatenate([xyz, rng.uniform(0.0, 1.0, size=(count, 1))], axis=1)

    sq = np.sum((xyz[:, None, :] - xyz[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(sq, np.inf)
    k = min(NEAREST_NEIGHBOURS, max(count - 1, 1))
    nearest = np.partition(sq, k - 1, axis=1)[:, :k] if count > 1 else np.ones((count, 1))
    spatial = 0.5 * np.log(np.maximum(nearest.mean(axis=1), 1e-7))

    s4 = np.empty((count, 4))
    s4[:, :3] = spatial[:, None]
    s4[:, 3] = np.log(cfg.init_time_scale)
    identity = np.tile([1.0, 0.0, 0.0, 0.0], (count, 1))
    return GaussianCloud(
        mu4=mu4,
        q_l=identity,
        q_r=identity.copy(),
        s4=s4,
        c_dc=np.zeros((count, 3)),
        o_logit=np.full(count, np.log(cfg.init_opacity / (1.0 - cfg.init_opacity))),
    )


class Trainer:
    """Optimizes a SplatModel against a set of views."""

    def __init__(self, data: TrainingData, cfg: TrainConfig, model: Optional[SplatModel] = None) -> None:
        """Initialize the trainer.

        Args:
            data: Training views
            cfg: Training configuration
            model: Starting model; a fresh one is initialized from the seed when omitted
        """
        data.validate()
        self.data = data
        self.cfg = cfg
        init_seed, view_seed, split_seed = np.random.SeedSequence(cfg.seed).spawn(3)
        self.view_rng = np.random.default_rng(view_seed)
        self.split_rng = np.random.default_rng(split_seed)
        if model is None:
            init_rng = np.random.default_rng(init_seed)
            cloud = initialize_cloud(cfg.init_count, data.scene_min, data.scene_max, cfg, init_rng)
            model = SplatModel.fresh(
                cloud,
                init_rng,
                use_deformation=cfg.use_deformation,
                use_ac_color=cfg.use_ac_color,
                deform_hidden=cfg.deform_hidden,
                color_hidden=cfg.color_hidden,
                mu_frequencies=cfg.mu_frequencies,
                view_frequencies=cfg.view_frequencies,
                time_frequencies=cfg.time_frequencies,
            )
        self.model = model
        self.settings = RasterSettings(temporal_threshold=cfg.temporal_filter_threshold)
        self.optimizer = ModelOptimizer(
            model, betas=cfg.adam_betas, eps=cfg.adam_eps, weight_decay_theta=cfg.weight_decay_theta
        )
        self.stats = DensifyStats.zeros(model.count)
        self.log = TrainLog(variant=cfg.variant)

    def step(self, iteration: int) -> IterationRecord:
        """Run one optimisation step on a randomly drawn view."""
        cfg = self.cfg
        model = self.model
        view = self.data.views[int(self.view_rng.integers(len(self.data.views)))]

        image, cache = render_forward(model, view.camera, self.settings)
        opacity = model.cloud.opacity
        terms = total_loss(image, view.image, opacity, cfg)
        grads = render_backward(cache, terms.grad_image)
        if model.count:
            grads.o_logit = grads.o_logit + terms.grad_opacity * opacity * (1.0 - opacity)
        if cache.clamped is not None:
            self.log.degenerate_quaternions += int(cache.clamped.sum())

        lrs = cloud_learning_rates(iteration, cfg, self.data.extent)
        self.optimizer.step_cloud(model.cloud, grads.cloud_grads(), lrs)
        self.optimizer.step_theta(model, grads.theta, lr_schedule("deformation", iteration, cfg))
        self.optimizer.step_phi(model, grads.phi, lr_schedule("color", iteration, cfg))

        if iteration < cfg.densify_until:
            self.stats.update(grads.view_grad, grads.visible)

        return IterationRecord(
            iteration=iteration, l1=terms.l1, ssim_loss=terms.ssim_loss, l_opa=terms.l_opa, count=model.count
        )

    def _densify(self, iteration: int) -> None:
        before = self.model.count
        result = densify(self.model.cloud, self.stats, self.cfg, self.data.extent, self.split_rng)
        self.model.cloud = result.cloud
        self.optimizer.remap(result.survivors, result.added)
        self.stats = DensifyStats.zeros(result.cloud.count)
        self.log.densify_events.append(
            DensifyEvent(
                iteration=iteration, cloned=result.cloned, split=result.split, before=before, after=result.cloud.count
            )
        )

    def _prune(self, iteration: int) -> None:
        before = self.model.count
        cloud, keep = prune(self.model.cloud, self.cfg)
        self.model.cloud = cloud
        self.optimizer.remap(keep)
        self.stats = self.stats.select(keep)
        self.log.prune_events.append(PruneEvent(iteration=iteration, before=before, after=cloud.count))
        logger.info("prune_complete", iteration=iteration, before=before, count=cloud.count)

    def _sample_participation(self, iteration: int) -> None:
        if not self.model.count:
            return
        centers = [view.camera.center for view in self.data.views]
        ratios = participation_ratio(self.model, self.data.times, self.cfg.temporal_filter_threshold, centers)
        self.log.participation.append(ParticipationSample(iteration=iteration, ratio=float(ratios.mean())))

    def train(self, progress: Optional[Callable[[IterationRecord], None]] = None) -> TrainResult:
        """Run ``cfg.iterations`` steps.

        Densification runs every ``densify_interval`` steps between
        ``densify_from`` and ``densify_until``; pruning runs every
        ``prune_every`` steps after ``densify_until``.

        Args:
            progress: Called with each iteration's record
        """
        cfg = self.cfg
        logger.info(
            "training_started",
            variant=cfg.variant,
            iterations=cfg.iterations,
            views=len(self.data.views),
            count=self.model.count,
            seed=cfg.seed,
        )
        for iteration in range(cfg.iterations):
            record = self.step(iteration)
            self.log.records.append(record)
            if progress is not None:
                progress(record)

            done = iteration + 1
            if cfg.densify_from <= iteration < cfg.densify_until and done % cfg.densify_interval == 0:
                self._densify(iteration)
            if iteration >= cfg.densify_until and done % cfg.prune_every == 0:
                self._prune(iteration)
            if done % cfg.checkpoint_every == 0:
                self._sample_participation(iteration)
            if done % 100 == 0:
                logger.info(
                    "training_progress",
                    iteration=done,
                    l1=round(record.l1, 6),
                    ssim_loss=round(record.ssim_loss, 6),
                    count=self.model.count,
                )

        logger.info(
            "training_complete",
            count=self.model.count,
            prune_events=len(self.log.prune_events),
            degenerate_quaternions=self.log.degenerate_quaternions,
        )
        return TrainResult(model=self.model, log=self.log)


def train(data: TrainingData, cfg: TrainConfig, model: Optional[SplatModel] = None) -> TrainResult:
    """Train a model on ``data``; deterministic for a given ``cfg.seed``."""
    return Trainer(data, cfg, model).train()
