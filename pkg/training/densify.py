"""Gradient-driven cloning/splitting and opacity pruning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import structlog

from gaussians.cloud import GaussianCloud
from gaussians.geometry import rotor4
from models.training_state import TrainConfig

logger = structlog.get_logger(__name__)


@dataclass
class DensifyStats:
    """View-space gradient norms accumulated since the last densification."""

    grad_accum: np.ndarray = field(default_factory=lambda: np.zeros(0))
    denom: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, count: int) -> "DensifyStats":
        return cls(np.zeros(count), np.zeros(count))

    def update(self, view_grad: np.ndarray, visible: np.ndarray) -> None:
        """Add one iteration's gradients for the Gaussians that were drawn."""
        self.grad_accum[visible] += view_grad[visible]
        self.denom[visible] += 1.0

    def mean(self) -> np.ndarray:
        """Average gradient per visible iteration; zero for never-visible Gaussians."""
        return np.where(self.denom > 0, self.grad_accum / np.maximum(self.denom, 1.0), 0.0)

    def select(self, index: np.ndarray) -> "DensifyStats":
        return DensifyStats(self.grad_accum[index].copy(), self.denom[index].copy())


@dataclass
class DensifyResult:
    """New cloud plus the row mapping needed to carry optimizer moments.

    The new cloud holds ``survivors`` (old rows, in order) followed by ``added``
    new Gaussians.
    """

    cloud: GaussianCloud
    survivors: np.ndarray
    added: int
    cloned: int
    split: int


def densify(
    cloud: GaussianCloud, stats: DensifyStats, cfg: TrainConfig, extent: float, rng: np.random.Generator
) -> DensifyResult:
    """Clone small and split large Gaussians whose mean view-space gradient reaches the threshold.

    A Gaussian is small when its largest spatial scale is at most
    ``percent_dense * extent``. Clones copy their parent. A split parent is
    replaced by ``split_children`` children whose means are drawn from the
    parent's 4D distribution and whose scales shrink by ``split_factor``.
    """
    grads = stats.mean()
    selected = grads >= cfg.densify_grad_threshold
    spatial = np.exp(cloud.s4[:, :3]).max(axis=1) if cloud.count else np.zeros(0)
    small = spatial <= cfg.percent_dense * extent
    clone_rows = np.flatnonzero(selected & small)
    split_rows = np.flatnonzero(selected & ~small)

    survivors = np.setdiff1d(np.arange(cloud.count), split_rows)
    parts = [cloud.select(survivors), cloud.select(clone_rows)]
    if split_rows.size:
        parents = cloud.select(np.repeat(split_rows, cfg.split_children))
        samples = rng.normal(size=(parents.count, 4)) * np.exp(parents.s4)
        rotation = rotor4(parents.q_l, parents.q_r)
        parents.mu4 = parents.mu4 + np.einsum("nij,nj->ni", rotation, samples)
        parents.s4 = parents.s4 - np.log(cfg.split_factor)
        parts.append(parents)

    result = parts[0]
    for part in parts[1:]:
        result = result.concat(part)
    added = result.count - survivors.size
    if clone_rows.size or split_rows.size:
        logger.info(
            "densify_complete",
            cloned=int(clone_rows.size),
            split=int(split_rows.size),
            before=cloud.count,
            count=result.count,
        )
    return DensifyResult(
        cloud=result, survivors=survivors, added=added, cloned=int(clone_rows.size), split=int(split_rows.size)
    )


def prune(cloud: GaussianCloud, cfg: TrainConfig) -> tuple[GaussianCloud, np.ndarray]:
    """Remove Gaussians whose spatial opacity is below the threshold, preserving order.

    Returns:
        Tuple of (pruned cloud, kept rows of the input)
    """
    keep = np.flatnonzero(cloud.opacity >= cfg.prune_opacity_threshold)
    return cloud.select(keep), keep
