"""Learning-rate schedules per parameter group."""

from __future__ import annotations

from typing import Literal

import numpy as np

from models.training_state import LearningRates, TrainConfig
from utils.errors import ConfigurationError

Group = Literal["position", "c_dc", "opacity", "scale", "rotation", "deformation", "color"]


def exponential_decay(initial: float, final: float, iteration: int, total: int) -> float:
    """Log-linear interpolation from ``initial`` at 0 to ``final`` at ``total``."""
    if total <= 0:
        return initial
    progress = min(max(iteration / total, 0.0), 1.0)
    return float(initial * (final / initial) ** progress)


def color_lr(iteration: int, total: int, rates: LearningRates) -> float:
    """Linear warm-up to the peak, then division by ``color_decay`` at each milestone.

    Milestones are quoted for ``rates.reference_iterations`` and scale with ``total``.
    """
    if rates.color_warmup and iteration < rates.color_warmup:
        return rates.color_peak * iteration / rates.color_warmup
    scale = total / rates.reference_iterations
    passed = sum(1 for milestone in rates.color_milestones if iteration >= milestone * scale)
    return rates.color_peak / rates.color_decay**passed


def lr_schedule(group: Group, iteration: int, cfg: TrainConfig, extent: float = 1.0) -> float:
    """Learning rate of one group at one iteration.

    Raises:
        ConfigurationError: For an unknown group name
    """
    rates = cfg.learning_rates
    total = cfg.iterations
    iteration = min(max(iteration, 0), max(total, 0))
    if group == "position":
        return extent * exponential_decay(rates.position_init, rates.position_final, iteration, total)
    if group == "deformation":
        return exponential_decay(rates.deform_init, rates.deform_final, iteration, total)
    if group == "color":
        return color_lr(iteration, total, rates)
    if group == "c_dc":
        return rates.c_dc
    if group == "opacity":
        return rates.opacity
    if group == "scale":
        return rates.scale
    if group == "rotation":
        return rates.rotation
    raise ConfigurationError(f"unknown learning-rate group {group!r}")


def cloud_learning_rates(iteration: int, cfg: TrainConfig, extent: float) -> dict[str, float | np.ndarray]:
    """Rates keyed by cloud attribute; the time column of ``mu4`` is not scaled by the extent."""
    position = lr_schedule("position", iteration, cfg, extent=1.0)
    return {
        "mu4": np.array([extent * position] * 3 + [position]),
        "q_l": lr_schedule("rotation", iteration, cfg),
        "q_r": lr_schedule("rotation", iteration, cfg),
        "s4": lr_schedule("scale", iteration, cfg),
        "c_dc": lr_schedule("c_dc", iteration, cfg),
        "o_logit": lr_schedule("opacity", iteration, cfg),
    }
