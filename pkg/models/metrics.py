"""Evaluation report models."""

import math
from typing import Optional

from pydantic import BaseModel, Field, field_serializer

DSSIM_FORMULA = "(1-SSIM)/2"


class FrameMetrics(BaseModel):
    """Image quality of one rendered view."""

    image: str = Field(..., description="Ground-truth image path relative to the dataset")
    camera_index: int = Field(..., ge=0)
    time: float = Field(..., ge=0, le=1)
    psnr: float = Field(..., description="PSNR in dB; infinite when the images are identical")
    dssim1: float = Field(..., ge=0, le=1, description="DSSIM with data range 1.0")
    dssim2: float = Field(..., ge=0, le=1, description="DSSIM with data range 2.0")

    @property
    def psnr_infinite(self) -> bool:
        return math.isinf(self.psnr)

    @field_serializer("psnr")
    def _serialize_psnr(self, value: float) -> float | str:
        return "inf" if math.isinf(value) else value


class MetricsReport(BaseModel):
    """Per-frame and averaged metrics written by ``eval``."""

    model: str = Field(..., description="Evaluated model path")
    dataset: str = Field(..., description="Dataset directory")
    frames: list[FrameMetrics] = Field(default_factory=list)
    dssim_formula: str = Field(default=DSSIM_FORMULA, description="Mapping from SSIM to DSSIM")
    gaussian_count: Optional[int] = Field(default=None, ge=0)

    @property
    def mean_psnr(self) -> float:
        """Mean PSNR over frames; infinite if every frame is identical."""
        finite = [f.psnr for f in self.frames if not f.psnr_infinite]
        if not self.frames:
            return float("nan")
        if not finite:
            return float("inf")
        return sum(finite) / len(finite)

    @property
    def mean_dssim1(self) -> float:
        return sum(f.dssim1 for f in self.frames) / len(self.frames) if self.frames else float("nan")

    @property
    def mean_dssim2(self) -> float:
        return sum(f.dssim2 for f in self.frames) / len(self.frames) if self.frames else float("nan")

    def summary(self) -> dict:
        """Averages plus metadata, JSON-ready."""
        psnr = self.mean_psnr
        return {
            "psnr": "inf" if math.isinf(psnr) else psnr,
            "psnr_infinite_frames": sum(f.psnr_infinite for f in self.frames),
            "dssim1": self.mean_dssim1,
            "dssim2": self.mean_dssim2,
            "frames": len(self.frames),
            "dssim_formula": self.dssim_formula,
        }
