"""DC-AC colour: per-Gaussian DC logits plus a shared temporal-viewpoint AC predictor."""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
import structlog

from gaussians.cloud import PARAMS_PER_GAUSSIAN
from gaussians.geometry import sigmoid
from gaussians.mlp import Mlp
from utils.errors import ConfigurationError, StateError

logger = structlog.get_logger(__name__)

COLOR_INPUT_WIDTH = 10
DEFAULT_HIDDEN = 64
COINCIDENT_EPS = 1e-12

# Reference 4DGS layout: 4D spherical harmonics with view degree 3 and time degree 2.
SH_VIEW_DEGREE = 3
SH_TIME_DEGREE = 2

Layout = Literal["mega", "4dgs"]


def view_directions(
    mu3: np.ndarray, p_v: np.ndarray, forward_axis: Optional[np.ndarray] = None
) -> tuple[np.ndarray, int]:
    """Unit directions from the camera centre to each mean.

    Means that coincide with the centre get ``forward_axis`` instead.

    Returns:
        Tuple of (directions shaped (N, 3), number of fallbacks)
    """
    mu3 = np.atleast_2d(np.asarray(mu3, dtype=np.float64))
    offset = mu3 - np.asarray(p_v, dtype=np.float64)
    norms = np.linalg.norm(offset, axis=1)
    coincident = norms < COINCIDENT_EPS
    directions = offset / np.where(coincident, 1.0, norms)[:, None]
    fallbacks = int(coincident.sum())
    if fallbacks:
        axis = np.array([0.0, 0.0, 1.0]) if forward_axis is None else np.asarray(forward_axis, dtype=np.float64)
        directions[coincident] = axis / np.linalg.norm(axis)
        logger.warning("coincident_view_point", count=fallbacks)
    return directions, fallbacks


def view_direction(mu3: np.ndarray, p_v: np.ndarray, forward_axis: Optional[np.ndarray] = None) -> np.ndarray:
    """Unit direction ``(mu3 - p_v) / |mu3 - p_v|`` for one point."""
    directions, _ = view_directions(mu3, p_v, forward_axis)
    return directions[0]


class ColorPredictor:
    """Shared AC network ``F_phi(sg(mu3), sg(d_v), t, c_dc)`` with output width 3.

    The final layer is zero-initialized, so a fresh predictor gives pure DC colour.
    """

    def __init__(
        self,
        rng: Optional[np.random.Generator] = None,
        hidden: int = DEFAULT_HIDDEN,
        phi: Optional[Mlp] = None,
    ) -> None:
        if phi is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            phi = Mlp.build([COLOR_INPUT_WIDTH, hidden, hidden, 3], rng, zero_last=True)
        if phi.in_dim != COLOR_INPUT_WIDTH or phi.out_dim != 3:
            raise ConfigurationError(
                f"colour network must map {COLOR_INPUT_WIDTH} -> 3, got {phi.in_dim} -> {phi.out_dim}"
            )
        self.phi = phi
        self._rgb: Optional[np.ndarray] = None

    def parameters(self) -> list[np.ndarray]:
        return self.phi.parameters()

    def param_count(self) -> int:
        return self.phi.param_count()

    def zero_grads(self) -> list[np.ndarray]:
        return self.phi.zero_grads()

    def forward(
        self, mu3: np.ndarray, d_v: np.ndarray, t: float, c_dc: np.ndarray, keep_cache: bool = True
    ) -> np.ndarray:
        """Colours in (0, 1) for a batch; mu3, d_v and c_dc are (N, 3).

        ``keep_cache=False`` skips storing activations for ``backward``.
        """
        mu3 = np.atleast_2d(np.asarray(mu3, dtype=np.float64))
        d_v = np.atleast_2d(np.asarray(d_v, dtype=np.float64))
        c_dc = np.atleast_2d(np.asarray(c_dc, dtype=np.float64))
        t_column = np.full((mu3.shape[0], 1), float(t))
        ac = self.phi.forward(np.concatenate([mu3, d_v, t_column, c_dc], axis=1), keep_cache)
        rgb = sigmoid(c_dc + ac)
        if keep_cache:
            self._rgb = rgb.copy()
        return rgb

    def backward(self, grad_rgb: np.ndarray) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
        """Back-propagate ``dL/d(rgb)``.

        Returns:
            Tuple of (phi gradients, dL/d(c_dc) through both paths, dL/dt per Gaussian)

        Raises:
            StateError: If no forward pass has been cached
        """
        if self._rgb is None:
            raise StateError("colour backward called without a cached forward pass")
        grad_logit = np.asarray(grad_rgb, dtype=np.float64) * self._rgb * (1.0 - self._rgb)
        phi_grads, grad_input = self.phi.backward(grad_logit)
        grad_c_dc = grad_logit + grad_input[:, 7:10]
        return phi_grads, grad_c_dc, grad_input[:, 6]

    def copy(self) -> "ColorPredictor":
        return ColorPredictor(phi=self.phi.copy())


def predict_color(cp: ColorPredictor, mu3: np.ndarray, d_v: np.ndarray, t: float, c_dc: np.ndarray) -> np.ndarray:
    """Colour of one Gaussian (3-vectors in, rgb out) or of a batch."""
    single = np.asarray(mu3).ndim == 1
    rgb = cp.forward(mu3, d_v, t, c_dc, keep_cache=False)
    return rgb[0] if single else rgb


def param_count_per_gaussian(layout: Layout = "mega") -> int:
    """Stored parameters per Gaussian.

    ``mega`` stores mu4, q_l, q_r, s4, c_dc and opacity (20). ``4dgs`` replaces
    c_dc with 4D spherical-harmonic coefficients (3 * 16 * 3 = 144), giving 161.
    """
    if layout == "mega":
        return PARAMS_PER_GAUSSIAN
    if layout == "4dgs":
        sh = 3 * (SH_VIEW_DEGREE + 1) ** 2 * (SH_TIME_DEGREE + 1)
        return PARAMS_PER_GAUSSIAN - 3 + sh
    raise ConfigurationError(f"unknown parameter layout {layout!r}")
