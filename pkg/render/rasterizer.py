"""Tile-based front-to-back alpha compositing of screen-space splats.

Splats are sorted once by (depth, cloud index) and binned into square tiles by
their support box. Every tile composites its own pixels independently, so
tiles can run on a thread pool; backward contributions are summed in tile
order, which keeps the result independent of the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, TypeVar

import numpy as np

from models.settings import RasterSettings
from render.camera import Camera
from render.projection import Splat2D
from utils.errors import StateError

T = TypeVar("T")


@dataclass
class Tile:
    """Pixel block ``[x0, x1) x [y0, y1)`` and the sorted splats touching it."""

    x0: int
    x1: int
    y0: int
    y1: int
    members: np.ndarray  # positions into Splat2D arrays, front to back

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened pixel sample points; pixel (i, j) sits at x = j, y = i."""
        ys, xs = np.mgrid[self.y0 : self.y1, self.x0 : self.x1]
        return xs.reshape(-1).astype(np.float64), ys.reshape(-1).astype(np.float64)


@dataclass
class TileTerms:
    """Compositing intermediates of one tile; splat axis first, pixel axis second."""

    dx: np.ndarray
    dy: np.ndarray
    raw_alpha: np.ndarray
    alpha: np.ndarray
    active: np.ndarray
    transmittance_before: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray  # (P,) after the last included splat
    color: np.ndarray  # (P, 3)


@dataclass
class RenderCache:
    """What the backward pass needs from a forward rasterization."""

    splats: Splat2D
    camera: Camera
    settings: RasterSettings
    tiles: list[Tile] = field(default_factory=list)


@dataclass
class SplatGrads:
    """Gradients with respect to every Splat2D field that depends on parameters."""

    mean2: np.ndarray
    cov2: np.ndarray
    alpha_base: np.ndarray
    rgb: np.ndarray


@dataclass
class RasterOutput:
    image: np.ndarray  # (H, W, 3)
    transmittance: np.ndarray  # (H, W)
    weight_sum: np.ndarray  # (H, W)
    cache: RenderCache


def depth_order(splats: Splat2D) -> np.ndarray:
    """Stable front-to-back order keyed by (depth, cloud index)."""
    return np.lexsort((splats.index, splats.depth))


def bin_splats(splats: Splat2D, cam: Camera, tile_size: int) -> list[Tile]:
    """Partition the image into tiles and list the splats whose support box overlaps each one."""
    order = depth_order(splats)
    bbox = splats.bbox[order]
    tiles = []
    for y0 in range(0, cam.height, tile_size):
        y1 = min(y0 + tile_size, cam.height)
        for x0 in range(0, cam.width, tile_size):
            x1 = min(x0 + tile_size, cam.width)
            overlap = (bbox[:, 0] < x1) & (bbox[:, 1] >= x0) & (bbox[:, 2] < y1) & (bbox[:, 3] >= y0)
            tiles.append(Tile(x0, x1, y0, y1, order[overlap]))
    return tiles


def composite(
    splats: Splat2D, members: np.ndarray, px: np.ndarray, py: np.ndarray, settings: RasterSettings
) -> TileTerms:
    """Composite ``members`` (already front to back) over the sample points ``(px, py)``."""
    mean2 = splats.mean2[members]
    conic = splats.conic[members]
    dx = px[None, :] - mean2[:, 0:1]
    dy = py[None, :] - mean2[:, 1:2]
    mahalanobis = (
        conic[:, 0, 0, None] * dx * dx
        + (conic[:, 0, 1, None] + conic[:, 1, 0, None]) * dx * dy
        + conic[:, 1, 1, None] * dy * dy
    )
    raw_alpha = splats.alpha_base[members, None] * np.exp(-0.5 * mahalanobis)
    contributes = raw_alpha >= settings.alpha_floor
    alpha = np.where(contributes, np.minimum(raw_alpha, settings.alpha_clamp), 0.0)
    # A splat is composited while the transmittance after it stays above the floor.
    included = np.cumprod(1.0 - alpha, axis=0) >= settings.transmittance_floor
    alpha = np.where(included, alpha, 0.0)
    after = np.cumprod(1.0 - alpha, axis=0)
    before = np.concatenate([np.ones((1, px.shape[0])), after[:-1]], axis=0)
    weights = alpha * before
    transmittance = after[-1] if members.size else np.ones(px.shape[0])
    background = np.asarray(settings.background, dtype=np.float64)
    color = weights.T @ splats.rgb[members] + transmittance[:, None] * background
    active = included & contributes & (raw_alpha < settings.alpha_clamp)
    return TileTerms(dx, dy, raw_alpha, alpha, active, before, weights, transmittance, color)


def _run_tiles(fn: Callable[[Tile], T], tiles: list[Tile], workers: int) -> list[T]:
    if workers <= 1 or len(tiles) <= 1:
        return [fn(tile) for tile in tiles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tiles))


def rasterize_splats(splats: Splat2D, cam: Camera, settings: Optional[RasterSettings] = None) -> RasterOutput:
    """Render splats into an (H, W, 3) image."""
    settings = settings or RasterSettings()
    tiles = bin_splats(splats, cam, settings.tile_size)
    image = np.empty((cam.height, cam.width, 3))
    transmittance = np.empty((cam.height, cam.width))
    weight_sum = np.empty((cam.height, cam.width))

    def render_tile(tile: Tile) -> TileTerms:
        px, py = tile.pixel_grid()
        return composite(splats, tile.members, px, py, settings)

    for tile, terms in zip(tiles, _run_tiles(render_tile, tiles, settings.workers)):
        shape = (tile.y1 - tile.y0, tile.x1 - tile.x0)
        image[tile.y0 : tile.y1, tile.x0 : tile.x1] = terms.color.reshape(*shape, 3)
        transmittance[tile.y0 : tile.y1, tile.x0 : tile.x1] = terms.transmittance.reshape(shape)
        weight_sum[tile.y0 : tile.y1, tile.x0 : tile.x1] = terms.weights.sum(axis=0).reshape(shape)
    return RasterOutput(image, transmittance, weight_sum, RenderCache(splats, cam, settings, tiles))


def _tile_backward(
    splats: Splat2D, tile: Tile, grad_color: np.ndarray, settings: RasterSettings
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    px, py = tile.pixel_grid()
    terms = composite(splats, tile.members, px, py, settings)
    rgb = splats.rgb[tile.members]

    grad_rgb = terms.weights @ grad_color
    color_dot = rgb @ grad_color.T
    # Colour still to be composited behind each splat, background included, dotted with the upstream gradient.
    behind = np.sum(terms.color * grad_color, axis=1)[None, :] - np.cumsum(terms.weights * color_dot, axis=0)
    grad_alpha = terms.transmittance_before * color_dot - behind / (1.0 - terms.alpha)
    grad_raw = np.where(terms.active, grad_alpha, 0.0)

    alpha_base = splats.alpha_base[tile.members]
    grad_alpha_base = np.sum(grad_raw * terms.raw_alpha, axis=1) / np.where(alpha_base > 0, alpha_base, 1.0)
    grad_m = -0.5 * grad_raw * terms.raw_alpha

    conic = splats.conic[tile.members]
    cross = conic[:, 0, 1, None] + conic[:, 1, 0, None]
    grad_mean2 = np.stack(
        [
            -np.sum(grad_m * (2.0 * conic[:, 0, 0, None] * terms.dx + cross * terms.dy), axis=1),
            -np.sum(grad_m * (cross * terms.dx + 2.0 * conic[:, 1, 1, None] * terms.dy), axis=1),
        ],
        axis=1,
    )
    grad_conic = np.empty((tile.members.size, 2, 2))
    grad_conic[:, 0, 0] = np.sum(grad_m * terms.dx * terms.dx, axis=1)
    grad_conic[:, 0, 1] = np.sum(grad_m * terms.dx * terms.dy, axis=1)
    grad_conic[:, 1, 0] = grad_conic[:, 0, 1]
    grad_conic[:, 1, 1] = np.sum(grad_m * terms.dy * terms.dy, axis=1)
    return grad_mean2, grad_conic, grad_alpha_base, grad_rgb


def rasterize_splats_backward(cache: Optional[RenderCache], grad_image: np.ndarray) -> SplatGrads:
    """Back-propagate dL/d(image) to the splat fields.

    Raises:
        StateError: If no forward cache is available
    """
    if cache is None:
        raise StateError("rasterize backward called without a cached forward pass")
    splats, settings = cache.splats, cache.settings
    grad_image = np.asarray(grad_image, dtype=np.float64)

    def tile_grads(tile: Tile):
        block = grad_image[tile.y0 : tile.y1, tile.x0 : tile.x1].reshape(-1, 3)
        return _tile_backward(splats, tile, block, settings)

    grad_mean2 = np.zeros((splats.count, 2))
    grad_conic = np.zeros((splats.count, 2, 2))
    grad_alpha_base = np.zeros(splats.count)
    grad_rgb = np.zeros((splats.count, 3))
    for tile, (g_mean2, g_conic, g_alpha, g_rgb) in zip(
        cache.tiles, _run_tiles(tile_grads, cache.tiles, settings.workers)
    ):
        grad_mean2[tile.members] += g_mean2
        grad_conic[tile.members] += g_conic
        grad_alpha_base[tile.members] += g_alpha
        grad_rgb[tile.members] += g_rgb

    conic_t = np.swapaxes(splats.conic, -1, -2)
    grad_cov2 = -conic_t @ grad_conic @ conic_t
    return SplatGrads(mean2=grad_mean2, cov2=grad_cov2, alpha_base=grad_alpha_base, rgb=grad_rgb)
