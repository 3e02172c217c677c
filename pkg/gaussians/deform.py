"""Temporal-viewpoint deformation of 4D Gaussians.

A small network maps the encoded (mean, view direction, time) of each Gaussian
to residual multipliers for its mean, log-scales and quaternion pair. The
network sees its position and view inputs through a stop-gradient, so the
backward pass only reaches the Gaussian attributes through the apply step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import structlog

from gaussians.cloud import GaussianCloud
from gaussians.geometry import (
    Gaussian4D,
    hamilton_product,
    left_matrix,
    normalize_backward,
    normalize_quaternions,
    right_matrix,
)
from gaussians.mlp import Mlp, MlpCache
from utils.errors import ConfigurationError, InvalidParameterError, StateError

logger = structlog.get_logger(__name__)

MU_FREQUENCIES = 6
VIEW_FREQUENCIES = 6
TIME_FREQUENCIES = 10
DEFAULT_HIDDEN = 64
OUTPUT_WIDTH = 16

# Below this norm a deformed quaternion falls back to the undeformed one.
QUATERNION_NORM_FLOOR = 1e-9

_UNIT_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


def posenc(p: np.ndarray | float, frequencies: int) -> np.ndarray:
    """Frequency encoding ``(sin(2^l π p), cos(2^l π p))`` for l < frequencies.

    Args:
        p: Scalar, vector (D,) or batch (N, D)
        frequencies: Number of octaves L

    Returns:
        Encoding of width ``2 * L * D`` on the last axis, interleaved sin/cos per
        octave and concatenated per scalar in input order

    Raises:
        InvalidParameterError: If ``frequencies < 1``
    """
    if frequencies < 1:
        raise InvalidParameterError(f"frequency count must be >= 1, got {frequencies}")
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    angles = p[..., None] * (np.pi * 2.0 ** np.arange(frequencies))
    encoded = np.stack([np.sin(angles), np.cos(angles)], axis=-1)
    encoded = encoded.reshape(*p.shape[:-1], p.shape[-1] * 2 * frequencies)
    return encoded if not scalar else encoded.reshape(-1)


@dataclass
class Deformation:
    """Raw residual multipliers for one Gaussian (shape (4,)) or a batch ((N, 4))."""

    m_mu4: np.ndarray
    m_s4: np.ndarray
    m_ql: np.ndarray
    m_qr: np.ndarray

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "Deformation":
        """Split 16 network outputs into the four 4-vectors."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[-1] != OUTPUT_WIDTH:
            raise ConfigurationError(f"deformation head must output {OUTPUT_WIDTH} values, got {raw.shape[-1]}")
        return cls(*(raw[..., 4 * k : 4 * (k + 1)].copy() for k in range(4)))

    @classmethod
    def zeros(cls, count: Optional[int] = None) -> "Deformation":
        shape = (4,) if count is None else (count, 4)
        return cls(*(np.zeros(shape) for _ in range(4)))

    @property
    def raw(self) -> np.ndarray:
        return np.concatenate([self.m_mu4, self.m_s4, self.m_ql, self.m_qr], axis=-1)

    def select(self, index: np.ndarray) -> "Deformation":
        return Deformation(self.m_mu4[index], self.m_s4[index], self.m_ql[index], self.m_qr[index])


@dataclass
class DeformedCloud:
    """Output of ``apply_deformation_batch``.

    ``clamped`` marks quaternions (column 0: q_l, column 1: q_r) that fell
    below ``QUATERNION_NORM_FLOOR`` and were replaced by their prior value.
    """

    cloud: GaussianCloud
    clamped: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=bool))

    @property
    def clamp_count(self) -> int:
        return int(self.clamped.sum())


@dataclass
class AttributeGrads:
    """Gradients with respect to the geometric Gaussian attributes."""

    mu4: np.ndarray
    s4: np.ndarray
    q_l: np.ndarray
    q_r: np.ndarray


class DeformationPredictor:
    """Per-group encoders, a two-layer ReLU fusion block and a linear head of width 16.

    The head is zero-initialized, so a fresh predictor is the identity deformation.
    """

    def __init__(
        self,
        rng: Optional[np.random.Generator] = None,
        hidden: int = DEFAULT_HIDDEN,
        mu_frequencies: int = MU_FREQUENCIES,
        view_frequencies: int = VIEW_FREQUENCIES,
        time_frequencies: int = TIME_FREQUENCIES,
        networks: Optional[list[Mlp]] = None,
    ) -> None:
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mu_frequencies = mu_frequencies
        self.view_frequencies = view_frequencies
        self.time_frequencies = time_frequencies
        if networks is None:
            networks = [
                Mlp.build([4 * 2 * mu_frequencies, hidden], rng, zero_last=False, final_activation="relu"),
                Mlp.build([3 * 2 * view_frequencies, hidden], rng, zero_last=False, final_activation="relu"),
                Mlp.build([2 * time_frequencies, hidden], rng, zero_last=False, final_activation="relu"),
                Mlp.build([3 * hidden, hidden, hidden, OUTPUT_WIDTH], rng, zero_last=True),
            ]
        self.mu_encoder, self.view_encoder, self.time_encoder, self.fusion = networks
        expected = self.mu_encoder.out_dim + self.view_encoder.out_dim + self.time_encoder.out_dim
        if self.fusion.in_dim != expected:
            raise ConfigurationError(f"fusion block expects {self.fusion.in_dim} features, encoders give {expected}")
        if self.fusion.out_dim != OUTPUT_WIDTH:
            raise ConfigurationError(f"deformation head must output {OUTPUT_WIDTH} values, got {self.fusion.out_dim}")
        self._caches: Optional[list[MlpCache]] = None

    @property
    def networks(self) -> list[Mlp]:
        return [self.mu_encoder, self.view_encoder, self.time_encoder, self.fusion]

    def parameters(self) -> list[np.ndarray]:
        return [p for net in self.networks for p in net.parameters()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.parameters()]

    def encode(self, mu4: np.ndarray, d_v: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        mu4 = np.atleast_2d(np.asarray(mu4, dtype=np.float64))
        d_v = np.atleast_2d(np.asarray(d_v, dtype=np.float64))
        t_column = np.full((mu4.shape[0], 1), float(t))
        return (
            posenc(mu4, self.mu_frequencies),
            posenc(d_v, self.view_frequencies),
            posenc(t_column, self.time_frequencies),
        )

    def forward(self, mu4: np.ndarray, d_v: np.ndarray, t: float, keep_cache: bool = True) -> Deformation:
        """Predict a batch of deformations; inputs are treated as constants.

        ``keep_cache=False`` skips storing activations for ``backward``.
        """
        mu4 = np.atleast_2d(np.asarray(mu4, dtype=np.float64))
        d_v = np.atleast_2d(np.asarray(d_v, dtype=np.float64))
        if mu4.shape[0] != d_v.shape[0]:
            raise ConfigurationError(f"{mu4.shape[0]} means but {d_v.shape[0]} view directions")
        enc_mu, enc_view, enc_time = self.encode(mu4, d_v, t)
        features = np.concatenate(
            [
                self.mu_encoder.forward(enc_mu, keep_cache),
                self.view_encoder.forward(enc_view, keep_cache),
                self.time_encoder.forward(enc_time, keep_cache),
            ],
            axis=1,
        )
        raw = self.fusion.forward(features, keep_cache)
        if keep_cache:
            self._caches = [net.cache for net in self.networks]
        return Deformation.from_raw(raw)

    def backward(self, grad_raw: np.ndarray) -> list[np.ndarray]:
        """Gradients of the network parameters given ``dL/d(raw output)`` shaped (N, 16).

        Raises:
            StateError: If no forward pass has been cached
        """
        if self._caches is None:
            raise StateError("deformation backward called without a cached forward pass")
        mu_cache, view_cache, time_cache, fusion_cache = self._caches
        fusion_grads, grad_features = self.fusion.backward(grad_raw, fusion_cache)
        widths = np.cumsum([self.mu_encoder.out_dim, self.view_encoder.out_dim])
        g_mu, g_view, g_time = np.split(grad_features, widths, axis=1)
        mu_grads, _ = self.mu_encoder.backward(g_mu, mu_cache)
        view_grads, _ = self.view_encoder.backward(g_view, view_cache)
        time_grads, _ = self.time_encoder.backward(g_time, time_cache)
        return mu_grads + view_grads + time_grads + fusion_grads

    def copy(self) -> "DeformationPredictor":
        return DeformationPredictor(
            mu_frequencies=self.mu_frequencies,
            view_frequencies=self.view_frequencies,
            time_frequencies=self.time_frequencies,
            networks=[net.copy() for net in self.networks],
        )


def deform_forward(theta: DeformationPredictor, mu4: np.ndarray, d_v: np.ndarray, t: float) -> Deformation:
    """Predict the deformation of one Gaussian (mu4 (4,), d_v (3,)) or a batch."""
    single = np.asarray(mu4).ndim == 1
    deformation = theta.forward(mu4, d_v, t, keep_cache=False)
    if single:
        return deformation.select(0)
    return deformation


def _deform_quaternions(q: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized ``q ⊗ (unit + m)``, falling back to ``q`` where the product degenerates."""
    deformed = hamilton_product(q, _UNIT_QUATERNION + m)
    clamped = np.linalg.norm(deformed, axis=-1) < QUATERNION_NORM_FLOOR
    deformed[clamped] = q[clamped]
    return deformed, clamped


def apply_deformation_batch(cloud: GaussianCloud, d: Deformation) -> DeformedCloud:
    """Apply residual multipliers to every Gaussian of a cloud.

    Deformed quaternions come out unit length. A zero deformation leaves
    means, log-scales and the 4D covariance unchanged and only rescales the
    quaternions to unit length.
    """
    q_l, clamped_l = _deform_quaternions(cloud.q_l, d.m_ql)
    q_r, clamped_r = _deform_quaternions(cloud.q_r, d.m_qr)
    q_l, _ = normalize_quaternions(q_l, name="deformed q_l")
    q_r, _ = normalize_quaternions(q_r, name="deformed q_r")
    clamped = np.stack([clamped_l, clamped_r], axis=1)
    if clamped.any():
        logger.warning(
            "degenerate_deformed_quaternion",
            count=int(clamped.sum()),
            indices=np.flatnonzero(clamped.any(axis=1))[:8].tolist(),
        )
    deformed = GaussianCloud(
        mu4=cloud.mu4 * (1.0 + d.m_mu4),
        q_l=q_l,
        q_r=q_r,
        s4=cloud.s4 + d.m_s4,
        c_dc=cloud.c_dc.copy(),
        o_logit=cloud.o_logit.copy(),
    )
    return DeformedCloud(cloud=deformed, clamped=clamped)


def apply_deformation(g: Gaussian4D, d: Deformation) -> Gaussian4D:
    """Deform a single Gaussian."""
    batch = Deformation(*(np.atleast_2d(v) for v in (d.m_mu4, d.m_s4, d.m_ql, d.m_qr)))
    return apply_deformation_batch(GaussianCloud.from_gaussians([g]), batch).cloud.gaussian(0)


def apply_deformation_backward(
    cloud: GaussianCloud, d: Deformation, clamped: np.ndarray, upstream: AttributeGrads
) -> tuple[AttributeGrads, np.ndarray]:
    """Adjoint of ``apply_deformation_batch``.

    Args:
        cloud: Undeformed cloud
        d: Deformation used in the forward pass
        clamped: Clamp mask from the forward pass, shaped (N, 2)
        upstream: Gradients with respect to the deformed attributes

    Returns:
        Tuple of (gradients for the undeformed attributes, dL/d(raw) shaped (N, 16))
    """
    g_mu4 = upstream.mu4 * (1.0 + d.m_mu4)
    g_m_mu4 = upstream.mu4 * cloud.mu4

    def quaternion_adjoint(q: np.ndarray, m: np.ndarray, grad: np.ndarray, mask: np.ndarray):
        product, _ = _deform_quaternions(q, m)
        grad = normalize_backward(*normalize_quaternions(product), grad)
        # q ⊗ p = R(p) q = L(q) p
        g_q = np.einsum("nji,nj->ni", right_matrix(_UNIT_QUATERNION + m), grad)
        g_m = np.einsum("nji,nj->ni", left_matrix(q), grad)
        g_q[mask] = grad[mask]
        g_m[mask] = 0.0
        return g_q, g_m

    g_ql, g_m_ql = quaternion_adjoint(cloud.q_l, d.m_ql, upstream.q_l, clamped[:, 0])
    g_qr, g_m_qr = quaternion_adjoint(cloud.q_r, d.m_qr, upstream.q_r, clamped[:, 1])
    grads = AttributeGrads(mu4=g_mu4, s4=upstream.s4.copy(), q_l=g_ql, q_r=g_qr)
    grad_raw = np.concatenate([g_m_mu4, upstream.s4, g_m_ql, g_m_qr], axis=1)
    return grads, grad_raw


def deform_backward(
    theta: DeformationPredictor,
    cloud: GaussianCloud,
    d: Deformation,
    clamped: np.ndarray,
    upstream: AttributeGrads,
) -> tuple[list[np.ndarray], AttributeGrads]:
    """Chain deformed-attribute gradients back to θ and the undeformed attributes.

    Nothing flows into the network's encoded inputs.

    Raises:
        StateError: If ``theta`` has no cached forward pass
    """
    grads, grad_raw = apply_deformation_backward(cloud, d, clamped, upstream)
    return theta.backward(grad_raw), grads
