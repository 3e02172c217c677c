"""End-to-end differentiable rendering of a SplatModel.

Stage order: deform -> slice -> temporal filter -> colour -> project -> composite.
The temporal filter is a hard gate; Gaussians it removes, and splats culled
after projection, receive zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import structlog

from gaussians.cloud import GaussianCloud
from gaussians.color import view_directions
from gaussians.deform import AttributeGrads, Deformation, apply_deformation_batch, deform_backward
from gaussians.geometry import SliceTerms, Sliced3D, sigmoid, slice_backward, slice_batch
from gaussians.model import SplatModel
from models.settings import RasterSettings
from render.camera import Camera
from render.projection import Projection, Splat2D, make_splats, project_points, projection_backward
from render.rasterizer import RasterOutput, rasterize_splats, rasterize_splats_backward
from utils.errors import EmptyCloudError, StateError

logger = structlog.get_logger(__name__)


@dataclass
class PipelineCache:
    """Forward intermediates of one ``render_forward`` call."""

    model: SplatModel
    camera: Camera
    deformed: GaussianCloud
    deformation: Optional[Deformation]
    clamped: Optional[np.ndarray]
    sliced: Sliced3D
    slice_terms: SliceTerms
    keep: np.ndarray
    rgb: np.ndarray
    alpha_base: np.ndarray
    projection: Projection
    splats: Splat2D
    raster: RasterOutput


@dataclass
class ModelGrads:
    """Gradients of the loss with respect to every trainable quantity.

    ``view_grad`` is the norm of each Gaussian's screen-space mean gradient in
    NDC units and ``visible`` marks Gaussians that produced a splat; both feed
    densification.
    """

    mu4: np.ndarray
    q_l: np.ndarray
    q_r: np.ndarray
    s4: np.ndarray
    c_dc: np.ndarray
    o_logit: np.ndarray
    theta: list[np.ndarray]
    phi: list[np.ndarray]
    view_grad: np.ndarray
    visible: np.ndarray

    def cloud_grads(self) -> dict[str, np.ndarray]:
        return {
            "mu4": self.mu4,
            "q_l": self.q_l,
            "q_r": self.q_r,
            "s4": self.s4,
            "c_dc": self.c_dc,
            "o_logit": self.o_logit,
        }


def render_forward(
    model: SplatModel, cam: Camera, settings: Optional[RasterSettings] = None, keep_cache: bool = True
) -> tuple[np.ndarray, PipelineCache]:
    """Render ``model`` from ``cam`` at ``cam.time``.

    With ``keep_cache=False`` the predictors keep no activations, so the
    returned cache cannot drive ``render_backward``.

    Returns:
        Tuple of (image shaped (H, W, 3), cache for ``render_backward``)
    """
    settings = settings or RasterSettings()
    cloud = model.cloud
    t = cam.time

    deformation = clamped = None
    deformed = cloud
    if model.deformation is not None and cloud.count:
        d_v, _ = view_directions(cloud.mu4[:, :3], cam.center, cam.forward)
        deformation = model.deformation.forward(cloud.mu4, d_v, t, keep_cache)
        result = apply_deformation_batch(cloud, deformation)
        deformed, clamped = result.cloud, result.clamped

    sliced, terms = slice_batch(deformed.mu4, deformed.q_l, deformed.q_r, deformed.s4, t)
    keep = np.flatnonzero(sliced.temporal_opacity > settings.temporal_threshold)

    mu3_static = deformed.mu4[keep, :3]
    if model.color is not None and keep.size:
        d_v_color, _ = view_directions(mu3_static, cam.center, cam.forward)
        rgb = model.color.forward(mu3_static, d_v_color, t, deformed.c_dc[keep], keep_cache)
    else:
        rgb = sigmoid(deformed.c_dc[keep])
    alpha_base = sigmoid(deformed.o_logit[keep]) * sliced.temporal_opacity[keep]

    projection = project_points(sliced.mu3_t[keep], sliced.sigma3[keep], cam, settings)
    splats = make_splats(projection, rgb, alpha_base, cam, settings, index=keep)
    raster = rasterize_splats(splats, cam, settings)
    cache = PipelineCache(
        model=model,
        camera=cam,
        deformed=deformed,
        deformation=deformation,
        clamped=clamped,
        sliced=sliced,
        slice_terms=terms,
        keep=keep,
        rgb=rgb,
        alpha_base=alpha_base,
        projection=projection,
        splats=splats,
        raster=raster,
    )
    return raster.image, cache


def render(model: SplatModel, cam: Camera, settings: Optional[RasterSettings] = None) -> np.ndarray:
    """Forward-only rendering."""
    image, _ = render_forward(model, cam, settings, keep_cache=False)
    return image


def render_backward(cache: Optional[PipelineCache], grad_image: np.ndarray) -> ModelGrads:
    """Back-propagate dL/d(image) through the whole pipeline.

    Raises:
        StateError: If no forward cache is available
    """
    if cache is None:
        raise StateError("render backward called without a cached forward pass")
    model, cam = cache.model, cache.camera
    cloud = model.cloud
    n = cloud.count
    keep = cache.keep

    splat_grads = rasterize_splats_backward(cache.raster.cache, grad_image)
    position = np.searchsorted(keep, cache.splats.index)
    grad_mean2 = np.zeros((keep.size, 2))
    grad_cov2 = np.zeros((keep.size, 2, 2))
    grad_alpha_base = np.zeros(keep.size)
    grad_rgb = np.zeros((keep.size, 3))
    grad_mean2[position] = splat_grads.mean2
    grad_cov2[position] = splat_grads.cov2
    grad_alpha_base[position] = splat_grads.alpha_base
    grad_rgb[position] = splat_grads.rgb

    sigma3_keep = cache.sliced.sigma3[keep]
    grad_mu3_keep, grad_sigma3_keep = projection_backward(
        cache.projection, sigma3_keep, cam, grad_mean2, grad_cov2
    )

    opacity = sigmoid(cache.deformed.o_logit[keep])
    sigma_t = cache.sliced.temporal_opacity[keep]
    grad_o_logit = np.zeros(n)
    grad_o_logit[keep] = grad_alpha_base * sigma_t * opacity * (1.0 - opacity)

    grad_c_dc = np.zeros((n, 3))
    phi_grads: list[np.ndarray] = []
    if model.color is not None:
        if keep.size:
            phi_grads, grad_c_dc[keep], _ = model.color.backward(grad_rgb)
        else:
            phi_grads = model.color.zero_grads()
    else:
        grad_c_dc[keep] = grad_rgb * cache.rgb * (1.0 - cache.rgb)

    grad_mu3_t = np.zeros((n, 3))
    grad_sigma3 = np.zeros((n, 3, 3))
    grad_opacity_t = np.zeros(n)
    grad_mu3_t[keep] = grad_mu3_keep
    grad_sigma3[keep] = grad_sigma3_keep
    grad_opacity_t[keep] = grad_alpha_base * opacity
    g_mu4, g_ql, g_qr, g_s4 = slice_backward(cache.slice_terms, grad_mu3_t, grad_sigma3, grad_opacity_t)

    theta_grads: list[np.ndarray] = []
    if model.deformation is not None:
        if n:
            theta_grads, attribute = deform_backward(
                model.deformation,
                cloud,
                cache.deformation,
                cache.clamped,
                AttributeGrads(mu4=g_mu4, s4=g_s4, q_l=g_ql, q_r=g_qr),
            )
            g_mu4, g_s4, g_ql, g_qr = attribute.mu4, attribute.s4, attribute.q_l, attribute.q_r
        else:
            theta_grads = model.deformation.zero_grads()

    view_grad = np.zeros(n)
    visible = np.zeros(n, dtype=bool)
    ndc_scale = np.array([0.5 * cam.width, 0.5 * cam.height])
    view_grad[cache.splats.index] = np.linalg.norm(splat_grads.mean2 * ndc_scale, axis=1)
    visible[cache.splats.index] = True

    return ModelGrads(
        mu4=g_mu4,
        q_l=g_ql,
        q_r=g_qr,
        s4=g_s4,
        c_dc=grad_c_dc,
        o_logit=grad_o_logit,
        theta=theta_grads,
        phi=phi_grads,
        view_grad=view_grad,
        visible=visible,
    )


def participation_ratio(
    model: SplatModel,
    times: Iterable[float],
    threshold: Optional[float] = None,
    viewpoints: Optional[Sequence[np.ndarray]] = None,
    use_deformation: bool = True,
) -> np.ndarray:
    """Fraction of Gaussians passing the temporal filter at each time.

    With a deformation predictor the filter is evaluated on deformed Gaussians
    as seen from each viewpoint (default: the origin) and averaged over them.

    Raises:
        EmptyCloudError: If the cloud holds no Gaussians
    """
    cloud = model.cloud
    if cloud.count == 0:
        raise EmptyCloudError("participation ratio needs at least one Gaussian")
    threshold = RasterSettings().temporal_threshold if threshold is None else threshold
    points = [np.zeros(3)] if not viewpoints else [np.asarray(p, dtype=np.float64) for p in viewpoints]
    ratios = []
    for t in times:
        if model.deformation is None or not use_deformation:
            sliced, _ = slice_batch(cloud.mu4, cloud.q_l, cloud.q_r, cloud.s4, t)
            ratios.append(float(np.mean(sliced.temporal_opacity > threshold)))
            continue
        per_view = []
        for point in points:
            d_v, _ = view_directions(cloud.mu4[:, :3], point)
            deformation = model.deformation.forward(cloud.mu4, d_v, t, keep_cache=False)
            deformed = apply_deformation_batch(cloud, deformation).cloud
            sliced, _ = slice_batch(deformed.mu4, deformed.q_l, deformed.q_r, deformed.s4, t)
            per_view.append(np.mean(sliced.temporal_opacity > threshold))
        ratios.append(float(np.mean(per_view)))
    return np.asarray(ratios)
