"""Rasterizer settings."""

from pydantic import BaseModel, Field

from config import get_config
from gaussians.geometry import DEFAULT_TEMPORAL_THRESHOLD


class RasterSettings(BaseModel):
    """Constants of the tile rasterizer."""

    tile_size: int = Field(default_factory=lambda: get_config().tile_size, ge=1, description="Tile edge in pixels")
    near_plane: float = Field(default=0.01, gt=0, description="Camera-space z below which splats are culled")
    cov_dilation: float = Field(default=0.3, ge=0, description="Added to the 2D covariance diagonal (px^2)")
    alpha_clamp: float = Field(default=0.99, gt=0, lt=1, description="Upper bound on per-splat alpha")
    alpha_floor: float = Field(
        default=1.0 / 255.0, gt=0, lt=1, description="Splats with alpha below this do not contribute"
    )
    transmittance_floor: float = Field(
        default=1e-4, gt=0, lt=1, description="Compositing stops once transmittance drops below this"
    )
    temporal_threshold: float = Field(
        default=DEFAULT_TEMPORAL_THRESHOLD, ge=0, lt=1, description="Temporal opacity needed to be rendered"
    )
    background: tuple[float, float, float] = Field(default=(0.0, 0.0, 0.0), description="Background RGB")
    workers: int = Field(default_factory=lambda: get_config().render_workers, ge=1, description="Tile threads")

    class Config:
        """Pydantic config."""

        frozen = True
        json_schema_extra = {
            "example": {
                "tile_size": 16,
                "near_plane": 0.01,
                "cov_dilation": 0.3,
                "alpha_clamp": 0.99,
                "alpha_floor": 0.00392156862745098,
                "transmittance_floor": 0.0001,
                "temporal_threshold": 0.05,
                "background": [0.0, 0.0, 0.0],
                "workers": 1,
            }
        }
