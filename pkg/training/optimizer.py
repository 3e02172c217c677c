"""Adam over NumPy arrays, with moment bookkeeping that follows densification and pruning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from gaussians.cloud import ATTRIBUTES, GaussianCloud
from gaussians.model import SplatModel
from utils.errors import DimensionMismatchError


@dataclass
class AdamState:
    """First/second moments and the step counter of one parameter array."""

    exp_avg: np.ndarray
    exp_avg_sq: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64))

    def select(self, index: np.ndarray) -> "AdamState":
        """Keep the moments of the given rows."""
        return AdamState(self.exp_avg[index].copy(), self.exp_avg_sq[index].copy(), self.step)

    def append_zeros(self, count: int) -> "AdamState":
        """Add ``count`` rows with zero moments."""
        pad = np.zeros((count, *self.exp_avg.shape[1:]))
        return AdamState(
            np.concatenate([self.exp_avg, pad]), np.concatenate([self.exp_avg_sq, pad]), self.step
        )


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float | np.ndarray,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-15,
    weight_decay: float = 0.0,
) -> np.ndarray:
    """One bias-corrected Adam update; updates ``state`` in place and returns the new parameters.

    ``weight_decay`` is added to the gradient as an L2 term. ``lr`` may be an
    array broadcasting against the last axis of ``param``.

    Raises:
        DimensionMismatchError: If parameter, gradient and moment shapes differ
    """
    if param.shape != grad.shape or param.shape != state.exp_avg.shape:
        raise DimensionMismatchError(
            f"adam shapes differ: param {param.shape}, grad {grad.shape}, state {state.exp_avg.shape}"
        )
    beta1, beta2 = betas
    grad = grad + weight_decay * param if weight_decay else grad
    state.step += 1
    state.exp_avg = beta1 * state.exp_avg + (1.0 - beta1) * grad
    state.exp_avg_sq = beta2 * state.exp_avg_sq + (1.0 - beta2) * grad * grad
    m_hat = state.exp_avg / (1.0 - beta1**state.step)
    v_hat = state.exp_avg_sq / (1.0 - beta2**state.step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps)


class ModelOptimizer:
    """Adam states for every cloud attribute and both predictors."""

    def __init__(
        self,
        model: SplatModel,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-15,
        weight_decay_theta: float = 0.0,
    ) -> None:
        self.betas = betas
        self.eps = eps
        self.weight_decay_theta = weight_decay_theta
        self.cloud_states = {name: AdamState.zeros_like(getattr(model.cloud, name)) for name in ATTRIBUTES}
        self.theta_states = (
            [AdamState.zeros_like(p) for p in model.deformation.parameters()] if model.deformation else []
        )
        self.phi_states = [AdamState.zeros_like(p) for p in model.color.parameters()] if model.color else []

    def step_cloud(
        self, cloud: GaussianCloud, grads: dict[str, np.ndarray], lrs: dict[str, float | np.ndarray]
    ) -> None:
        """Update every cloud attribute in place."""
        for name in ATTRIBUTES:
            updated = adam_step(
                getattr(cloud, name), grads[name], self.cloud_states[name], lrs[name], self.betas, self.eps
            )
            setattr(cloud, name, updated)

    def _step_network(
        self,
        params: Sequence[np.ndarray],
        grads: Sequence[np.ndarray],
        states: list[AdamState],
        lr: float,
        weight_decay: float,
    ) -> None:
        for param, grad, state in zip(params, grads, states):
            param[...] = adam_step(param, grad, state, lr, self.betas, self.eps, weight_decay)

    def step_theta(self, model: SplatModel, grads: Sequence[np.ndarray], lr: float) -> None:
        if model.deformation is not None and grads:
            self._step_network(model.deformation.parameters(), grads, self.theta_states, lr, self.weight_decay_theta)

    def step_phi(self, model: SplatModel, grads: Sequence[np.ndarray], lr: float) -> None:
        if model.color is not None and grads:
            self._step_network(model.color.parameters(), grads, self.phi_states, lr, 0.0)

    def remap(self, survivors: np.ndarray, added: int = 0) -> None:
        """Follow a change of the cloud's rows.

        Args:
            survivors: Old rows kept, in their new order
            added: Rows appended after the survivors; they start with zero moments
        """
        self.cloud_states = {
            name: state.select(survivors).append_zeros(added) for name, state in self.cloud_states.items()
        }

    def moments(self, name: str) -> Optional[AdamState]:
        return self.cloud_states.get(name)
