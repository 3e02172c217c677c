"""A trained scene: the Gaussian cloud plus its shared predictors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gaussians.cloud import GaussianCloud
from gaussians.color import ColorPredictor
from gaussians.deform import DeformationPredictor
from models.dataset import CameraSpec


@dataclass
class SplatModel:
    """Cloud, deformation predictor (θ) and AC colour predictor (φ).

    A missing predictor disables that stage: no deformation, or DC-only colour.
    ``rig`` holds the cameras of the dataset the model was trained on, so a
    saved model can be rendered without that dataset.
    """

    cloud: GaussianCloud = field(default_factory=GaussianCloud)
    deformation: Optional[DeformationPredictor] = None
    color: Optional[ColorPredictor] = None
    rig: list[CameraSpec] = field(default_factory=list)

    @classmethod
    def fresh(
        cls,
        cloud: GaussianCloud,
        rng: np.random.Generator,
        use_deformation: bool = True,
        use_ac_color: bool = True,
        deform_hidden: int = 64,
        color_hidden: int = 64,
        mu_frequencies: int = 6,
        view_frequencies: int = 6,
        time_frequencies: int = 10,
    ) -> "SplatModel":
        """Wrap a cloud with newly initialized (zero-output) predictors."""
        deformation = (
            DeformationPredictor(
                rng,
                hidden=deform_hidden,
                mu_frequencies=mu_frequencies,
                view_frequencies=view_frequencies,
                time_frequencies=time_frequencies,
            )
            if use_deformation
            else None
        )
        color = ColorPredictor(rng, hidden=color_hidden) if use_ac_color else None
        return cls(cloud=cloud, deformation=deformation, color=color)

    @property
    def count(self) -> int:
        return self.cloud.count

    def copy(self) -> "SplatModel":
        return SplatModel(
            cloud=self.cloud.copy(),
            deformation=self.deformation.copy() if self.deformation is not None else None,
            color=self.color.copy() if self.color is not None else None,
            rig=list(self.rig),
        )
