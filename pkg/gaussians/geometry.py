"""4D Gaussian geometry: double-quaternion rotations, covariance assembly and temporal slicing.

Every function accepts a single Gaussian or a batch; batched arrays carry the
Gaussian index on the leading axis. The backward helpers here are the exact
adjoints of the forward functions in this module and are chained together by
``render.pipeline``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import InvalidParameterError

if TYPE_CHECKING:
    from gaussians.cloud import GaussianCloud

# Lower bound on the temporal variance W before it is used as a divisor.
W_FLOOR = 1e-12

DEFAULT_TEMPORAL_THRESHOLD = 0.05


class Quaternion(BaseModel):
    """A quaternion ``w + xi + yj + zk``, stored unnormalized."""

    w: float = Field(default=1.0, description="Real part")
    x: float = Field(default=0.0, description="i component")
    y: float = Field(default=0.0, description="j component")
    z: float = Field(default=0.0, description="k component")

    def as_array(self) -> np.ndarray:
        """Return ``(w, x, y, z)`` as a float64 array."""
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Quaternion":
        """Build a quaternion from a length-4 sequence ``(w, x, y, z)``."""
        w, x, y, z = (float(v) for v in values)
        return cls(w=w, x=x, y=y, z=z)

    def norm(self) -> float:
        """Euclidean norm."""
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        """Return the unit quaternion pointing the same way.

        Raises:
            InvalidParameterError: If the quaternion has zero norm
        """
        return Quaternion.from_array(normalize_quaternions(self.as_array())[0][0])

    class Config:
        """Pydantic config."""

        frozen = True
        json_schema_extra = {"example": {"w": 1.0, "x": 0.0, "y": 0.0, "z": 0.0}}


QuaternionLike = Union[Quaternion, Sequence[float], np.ndarray]


@dataclass
class Gaussian4D:
    """Learnable attributes of a single 4D Gaussian.

    ``s4`` holds log-scales and ``o_logit`` the pre-sigmoid spatial opacity;
    ``c_dc`` holds pre-sigmoid colour logits.
    """

    mu4: np.ndarray
    q_l: np.ndarray
    q_r: np.ndarray
    s4: np.ndarray
    c_dc: np.ndarray
    o_logit: float

    def __post_init__(self) -> None:
        self.mu4 = np.asarray(self.mu4, dtype=np.float64).reshape(4)
        self.q_l = _as_quaternion_array(self.q_l)
        self.q_r = _as_quaternion_array(self.q_r)
        self.s4 = np.asarray(self.s4, dtype=np.float64).reshape(4)
        self.c_dc = np.asarray(self.c_dc, dtype=np.float64).reshape(3)
        self.o_logit = float(self.o_logit)

    @property
    def scales(self) -> np.ndarray:
        """Activated 4D scales ``exp(s4)``."""
        return np.exp(self.s4)

    @property
    def opacity(self) -> float:
        """Activated spatial opacity."""
        return float(sigmoid(np.float64(self.o_logit)))

    def copy(self) -> "Gaussian4D":
        """Deep copy."""
        return Gaussian4D(
            mu4=self.mu4.copy(),
            q_l=self.q_l.copy(),
            q_r=self.q_r.copy(),
            s4=self.s4.copy(),
            c_dc=self.c_dc.copy(),
            o_logit=self.o_logit,
        )


@dataclass
class Sliced3D:
    """The time-t slice of one Gaussian, or of a batch when arrays carry a leading axis."""

    mu3_t: np.ndarray
    sigma3: np.ndarray
    temporal_opacity: Union[float, np.ndarray]


@dataclass
class SliceTerms:
    """Intermediates of a batched slice, kept for the backward pass."""

    q_l_unit: np.ndarray
    q_r_unit: np.ndarray
    q_l_norm: np.ndarray
    q_r_norm: np.ndarray
    left: np.ndarray
    right: np.ndarray
    rotation: np.ndarray
    scales: np.ndarray
    factor: np.ndarray
    sigma4: np.ndarray
    v: np.ndarray
    w: np.ndarray
    w_floored: np.ndarray
    dt: np.ndarray
    temporal_opacity: np.ndarray


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _as_quaternion_array(q: QuaternionLike) -> np.ndarray:
    if isinstance(q, Quaternion):
        return q.as_array()
    arr = np.asarray(q, dtype=np.float64)
    if arr.shape[-1] != 4:
        raise InvalidParameterError(f"quaternion must have 4 components, got shape {arr.shape}")
    return arr.copy()


def normalize_quaternions(q: np.ndarray, name: str = "quaternion") -> tuple[np.ndarray, np.ndarray]:
    """Normalize one quaternion or a batch of them.

    Args:
        q: Array of shape (4,) or (N, 4)
        name: Label used in the error message

    Returns:
        Tuple of (unit quaternions shaped (N, 4), norms shaped (N,))

    Raises:
        InvalidParameterError: If any quaternion has zero norm
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    norms = np.linalg.norm(q, axis=-1)
    bad = np.flatnonzero(~(norms > 0.0))
    if bad.size:
        raise InvalidParameterError(f"{name} has zero norm", index=int(bad[0]))
    return q / norms[:, None], norms


def left_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix ``L(q)`` with ``L(q) @ p == q ⊗ p`` for quaternions shaped (..., 4)."""
    a, b, c, d = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([a, -b, -c, -d], axis=-1),
            np.stack([b, a, -d, c], axis=-1),
            np.stack([c, d, a, -b], axis=-1),
            np.stack([d, -c, b, a], axis=-1),
        ],
        axis=-2,
    )


def right_matrix(q: np.ndarray) -> np.ndarray:
    """Matrix ``R(q)`` with ``R(q) @ p == p ⊗ q`` for quaternions shaped (..., 4)."""
    a, b, c, d = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([a, -b, -c, -d], axis=-1),
            np.stack([b, a, d, -c], axis=-1),
            np.stack([c, -d, a, b], axis=-1),
            np.stack([d, c, -b, a], axis=-1),
        ],
        axis=-2,
    )


# left_matrix/right_matrix are linear in q; these bases give their adjoints.
_LEFT_BASIS = left_matrix(np.eye(4))
_RIGHT_BASIS = right_matrix(np.eye(4))


def hamilton_product(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p ⊗ q`` for quaternions shaped (..., 4)."""
    return np.einsum("...ij,...j->...i", left_matrix(p), np.asarray(q, dtype=np.float64))


def rotor4(q_l: QuaternionLike, q_r: QuaternionLike) -> np.ndarray:
    """Build the SO(4) rotation ``L(q_l) @ R(q_r)`` from a quaternion pair.

    Both quaternions are normalized first. Batched inputs shaped (N, 4) give
    an (N, 4, 4) result.

    Raises:
        InvalidParameterError: If either quaternion has zero norm; the error
            names the offending quaternion and batch index
    """
    ql = _as_quaternion_array(q_l)
    qr = _as_quaternion_array(q_r)
    single = ql.ndim == 1 and qr.ndim == 1
    ql_unit, _ = normalize_quaternions(ql, name="q_l")
    qr_unit, _ = normalize_quaternions(qr, name="q_r")
    rotation = left_matrix(ql_unit) @ right_matrix(qr_unit)
    return rotation[0] if single else rotation


def covariance4(g: Gaussian4D) -> np.ndarray:
    """4D covariance ``R S Sᵀ Rᵀ`` of one Gaussian with ``S = diag(exp(s4))``."""
    return covariance4_batch(g.q_l[None], g.q_r[None], g.s4[None])[0]


def covariance4_batch(q_l: np.ndarray, q_r: np.ndarray, s4: np.ndarray) -> np.ndarray:
    """Batched 4D covariances shaped (N, 4, 4)."""
    factor = rotor4(np.atleast_2d(q_l), np.atleast_2d(q_r)) * np.exp(np.atleast_2d(s4))[:, None, :]
    sigma = factor @ np.swapaxes(factor, -1, -2)
    return 0.5 * (sigma + np.swapaxes(sigma, -1, -2))


def temporal_opacity(mu_t: np.ndarray, w: np.ndarray, t: float) -> np.ndarray:
    """Temporal decay ``exp(-(t - mu_t)^2 / (2W))`` with W floored at ``W_FLOOR``."""
    w = np.maximum(np.asarray(w, dtype=np.float64), W_FLOOR)
    return np.exp(-((t - np.asarray(mu_t, dtype=np.float64)) ** 2) / (2.0 * w))


def slice_batch(
    mu4: np.ndarray, q_l: np.ndarray, q_r: np.ndarray, s4: np.ndarray, t: float
) -> tuple[Sliced3D, SliceTerms]:
    """Condition a batch of 4D Gaussians on time ``t``.

    Args:
        mu4: Means shaped (N, 4); the last column is the time centre
        q_l: Left quaternions shaped (N, 4)
        q_r: Right quaternions shaped (N, 4)
        s4: Log-scales shaped (N, 4)
        t: Normalized time

    Returns:
        Tuple of (batched Sliced3D, intermediates for ``slice_backward``)
    """
    mu4 = np.atleast_2d(np.asarray(mu4, dtype=np.float64))
    ql_unit, ql_norm = normalize_quaternions(q_l, name="q_l")
    qr_unit, qr_norm = normalize_quaternions(q_r, name="q_r")
    left = left_matrix(ql_unit)
    right = right_matrix(qr_unit)
    rotation = left @ right
    scales = np.exp(np.atleast_2d(np.asarray(s4, dtype=np.float64)))
    factor = rotation * scales[:, None, :]
    sigma4 = factor @ np.swapaxes(factor, -1, -2)

    u = sigma4[:, :3, :3]
    v = sigma4[:, :3, 3]
    w = sigma4[:, 3, 3]
    w_floored = np.maximum(w, W_FLOOR)
    dt = t - mu4[:, 3]

    sigma3 = u - v[:, :, None] * v[:, None, :] / w_floored[:, None, None]
    sigma3 = 0.5 * (sigma3 + np.swapaxes(sigma3, -1, -2))
    mu3_t = mu4[:, :3] + (dt / w_floored)[:, None] * v
    opacity_t = np.exp(-(dt**2) / (2.0 * w_floored))

    terms = SliceTerms(
        q_l_unit=ql_unit,
        q_r_unit=qr_unit,
        q_l_norm=ql_norm,
        q_r_norm=qr_norm,
        left=left,
        right=right,
        rotation=rotation,
        scales=scales,
        factor=factor,
        sigma4=sigma4,
        v=v,
        w=w,
        w_floored=w_floored,
        dt=dt,
        temporal_opacity=opacity_t,
    )
    return Sliced3D(mu3_t=mu3_t, sigma3=sigma3, temporal_opacity=opacity_t), terms


def slice_gaussian(g: Gaussian4D, t: float) -> Sliced3D:
    """Slice a single Gaussian at time ``t``."""
    batch, _ = slice_batch(g.mu4[None], g.q_l[None], g.q_r[None], g.s4[None], t)
    return Sliced3D(
        mu3_t=batch.mu3_t[0],
        sigma3=batch.sigma3[0],
        temporal_opacity=float(batch.temporal_opacity[0]),
    )


def slice_backward(
    terms: SliceTerms,
    grad_mu3_t: np.ndarray,
    grad_sigma3: np.ndarray,
    grad_opacity: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Chain gradients of a batched slice back to the raw Gaussian attributes.

    Args:
        terms: Intermediates returned by ``slice_batch``
        grad_mu3_t: dL/dμ_3D(t), shaped (N, 3)
        grad_sigma3: dL/dΣ_3D as full matrices, shaped (N, 3, 3)
        grad_opacity: dL/dσ(t), shaped (N,)

    Returns:
        Tuple of gradients (mu4, q_l, q_r, s4), each shaped (N, 4)
    """
    v = terms.v
    wf = terms.w_floored
    dt = terms.dt
    sig = terms.temporal_opacity

    gs3_sym = grad_sigma3 + np.swapaxes(grad_sigma3, -1, -2)
    gm_dot_v = np.einsum("ni,ni->n", grad_mu3_t, v)
    vgv = np.einsum("ni,nij,nj->n", v, grad_sigma3, v)

    grad_v = -np.einsum("nij,nj->ni", gs3_sym, v) / wf[:, None] + grad_mu3_t * (dt / wf)[:, None]
    grad_w = vgv / wf**2 - dt * gm_dot_v / wf**2 + grad_opacity * sig * dt**2 / (2.0 * wf**2)
    grad_w = np.where(terms.w >= W_FLOOR, grad_w, 0.0)
    grad_dt = gm_dot_v / wf - grad_opacity * sig * dt / wf

    n = v.shape[0]
    grad_sigma4 = np.zeros((n, 4, 4))
    grad_sigma4[:, :3, :3] = grad_sigma3
    grad_sigma4[:, :3, 3] = grad_v
    grad_sigma4[:, 3, 3] = grad_w

    grad_factor = (grad_sigma4 + np.swapaxes(grad_sigma4, -1, -2)) @ terms.factor
    grad_rotation = grad_factor * terms.scales[:, None, :]
    grad_scales = np.sum(grad_factor * terms.rotation, axis=-2)
    grad_s4 = grad_scales * terms.scales

    grad_left = grad_rotation @ np.swapaxes(terms.right, -1, -2)
    grad_right = np.swapaxes(terms.left, -1, -2) @ grad_rotation
    grad_ql = normalize_backward(
        terms.q_l_unit, terms.q_l_norm, np.einsum("nij,kij->nk", grad_left, _LEFT_BASIS)
    )
    grad_qr = normalize_backward(
        terms.q_r_unit, terms.q_r_norm, np.einsum("nij,kij->nk", grad_right, _RIGHT_BASIS)
    )

    grad_mu4 = np.zeros((n, 4))
    grad_mu4[:, :3] = grad_mu3_t
    grad_mu4[:, 3] = -grad_dt
    return grad_mu4, grad_ql, grad_qr, grad_s4


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Adjoint of ``q / |q|``."""
    radial = np.einsum("nk,nk->n", unit, grad_unit)
    return (grad_unit - unit * radial[:, None]) / norms[:, None]


def temporal_filter(
    cloud: "GaussianCloud", t: float, threshold: float = DEFAULT_TEMPORAL_THRESHOLD
) -> np.ndarray:
    """Indices of Gaussians whose temporal opacity at ``t`` exceeds ``threshold``.

    Raises:
        InvalidParameterError: If the threshold lies outside [0, 1)
    """
    if not 0.0 <= threshold < 1.0:
        raise InvalidParameterError(f"temporal filter threshold must be in [0, 1), got {threshold}")
    if cloud.count == 0:
        return np.zeros(0, dtype=np.int64)
    w = covariance4_batch(cloud.q_l, cloud.q_r, cloud.s4)[:, 3, 3]
    opacity_t = temporal_opacity(cloud.mu4[:, 3], w, t)
    return np.flatnonzero(opacity_t > threshold)


def quaternion_pair_from_rotation(rotation: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover unit quaternions ``(q_l, q_r)`` with ``rotor4(q_l, q_r) == rotation``.

    The map ``(a, b) -> L(a) R(b)`` is bilinear, so the rotation is a linear
    combination of the 16 basis products ``L(e_k) R(e_l)`` with coefficients
    ``a_k b_l``; the coefficient matrix is rank one and its leading singular
    pair gives the quaternions (up to a shared sign).
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    basis = np.einsum("kij,ljm->klim", _LEFT_BASIS, _RIGHT_BASIS).reshape(16, 16)
    coeffs, *_ = np.linalg.lstsq(basis.T, rotation.reshape(16), rcond=None)
    u, s, vt = np.linalg.svd(coeffs.reshape(4, 4))
    q_l = u[:, 0]
    q_r = vt[0] * s[0]
    if q_l[0] < 0:
        q_l, q_r = -q_l, -q_r
    return q_l, q_r / np.linalg.norm(q_r)


def params_from_covariance(sigma4: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factor a symmetric positive-definite 4×4 covariance into (q_l, q_r, log-scales)."""
    sigma4 = 0.5 * (np.asarray(sigma4, dtype=np.float64) + np.asarray(sigma4, dtype=np.float64).T)
    eigvals, eigvecs = np.linalg.eigh(sigma4)
    if np.linalg.det(eigvecs) < 0:
        eigvecs[:, 0] = -eigvecs[:, 0]
    q_l, q_r = quaternion_pair_from_rotation(eigvecs)
    log_scales = 0.5 * np.log(np.maximum(eigvals, 1e-300))
    return q_l, q_r, log_scales
