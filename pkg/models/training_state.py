"""Training configuration and training log models."""

from typing import Optional

from pydantic import BaseModel, Field, model_validator


class LearningRates(BaseModel):
    """Per-group learning rates.

    Position rates are multiplied by the scene extent for the spatial
    components of ``mu4``; the time component uses them unscaled.
    """

    position_init: float = Field(default=1.6e-4, gt=0)
    position_final: float = Field(default=1.6e-6, gt=0)
    c_dc: float = Field(default=0.0025, gt=0)
    opacity: float = Field(default=0.05, gt=0)
    scale: float = Field(default=0.005, gt=0)
    rotation: float = Field(default=0.001, gt=0)
    deform_init: float = Field(default=8e-4, gt=0)
    deform_final: float = Field(default=1.6e-6, gt=0)
    color_peak: float = Field(default=0.01, gt=0)
    color_warmup: int = Field(default=100, ge=0)
    color_milestones: tuple[int, ...] = Field(default=(5000, 15000, 25000))
    color_decay: float = Field(default=3.0, gt=1)
    reference_iterations: int = Field(
        default=30000, gt=0, description="Run length the color milestones are quoted for"
    )


class TrainConfig(BaseModel):
    """Everything that controls one training run."""

    lambda_ssim: float = Field(default=0.2, ge=0, le=1, description="SSIM weight in the photometric loss")
    kappa: float = Field(default=5e-4, ge=0, description="Opacity entropy weight")
    iterations: int = Field(default=3000, ge=0)
    densify_from: int = Field(default=100, ge=0)
    densify_interval: int = Field(default=100, ge=1)
    densify_until: Optional[int] = Field(default=None, ge=0, description="Defaults to iterations // 2")
    densify_grad_threshold: float = Field(default=2e-4, gt=0, description="Mean view-space gradient, NDC units")
    percent_dense: float = Field(default=0.01, gt=0, lt=1)
    split_factor: float = Field(default=1.6, gt=1)
    split_children: int = Field(default=2, ge=2)
    prune_every: int = Field(default=500, ge=1)
    prune_opacity_threshold: float = Field(default=0.005, gt=0, lt=1)
    temporal_filter_threshold: float = Field(default=0.05, gt=0, lt=1)
    weight_decay_theta: float = Field(default=1e-6, ge=0)
    adam_betas: tuple[float, float] = Field(default=(0.9, 0.999))
    adam_eps: float = Field(default=1e-15, gt=0)
    init_count: int = Field(default=2000, ge=1)
    init_opacity: float = Field(default=0.1, gt=0, lt=1)
    init_time_scale: float = Field(default=0.2 ** 0.5, gt=0, description="Initial temporal standard deviation")
    use_deformation: bool = Field(default=True)
    use_ac_color: bool = Field(default=True)
    use_entropy: bool = Field(default=True)
    deform_hidden: int = Field(default=64, ge=1)
    color_hidden: int = Field(default=64, ge=1)
    mu_frequencies: int = Field(default=6, ge=1)
    view_frequencies: int = Field(default=6, ge=1)
    time_frequencies: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=500, ge=1, description="Participation ratio sampling cadence")
    seed: int = Field(default=0)
    learning_rates: LearningRates = Field(default_factory=LearningRates)

    @model_validator(mode="after")
    def _derive_densify_until(self) -> "TrainConfig":
        if self.densify_until is None:
            self.densify_until = self.iterations // 2
        return self

    @property
    def entropy_weight(self) -> float:
        """Effective κ after the entropy switch."""
        return self.kappa if self.use_entropy else 0.0

    @property
    def variant(self) -> str:
        """Ablation label such as ``DAC+deform+Lopa``."""
        if not self.use_ac_color:
            label = "DC"
        else:
            label = "DAC"
        if self.use_deformation:
            label += "+deform"
        if self.use_entropy and self.kappa > 0:
            label += "+Lopa"
        return label

    class Config:
        """Pydantic config."""

        json_schema_extra = {
            "example": {"lambda_ssim": 0.2, "kappa": 0.0005, "iterations": 3000, "prune_every": 500, "seed": 0}
        }


class IterationRecord(BaseModel):
    """Loss components of one optimisation step (one line of the training log)."""

    iteration: int = Field(..., ge=0)
    l1: float
    ssim_loss: float
    l_opa: float
    count: int = Field(..., ge=0)


class PruneEvent(BaseModel):
    """Gaussian counts around one pruning pass."""

    iteration: int = Field(..., ge=0)
    before: int = Field(..., ge=0)
    after: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _non_increasing(self) -> "PruneEvent":
        if self.after > self.before:
            raise ValueError("pruning cannot increase the Gaussian count")
        return self


class DensifyEvent(BaseModel):
    """Outcome of one densification pass."""

    iteration: int = Field(..., ge=0)
    cloned: int = Field(..., ge=0)
    split: int = Field(..., ge=0)
    before: int = Field(..., ge=0)
    after: int = Field(..., ge=0)


class ParticipationSample(BaseModel):
    """Mean participation ratio over the training times at one checkpoint."""

    iteration: int = Field(..., ge=0)
    ratio: float = Field(..., ge=0, le=1)


class TrainLog(BaseModel):
    """Everything recorded during a training run."""

    variant: str = Field(default="DAC+deform+Lopa")
    records: list[IterationRecord] = Field(default_factory=list)
    prune_events: list[PruneEvent] = Field(default_factory=list)
    densify_events: list[DensifyEvent] = Field(default_factory=list)
    participation: list[ParticipationSample] = Field(default_factory=list)
    degenerate_quaternions: int = Field(default=0, ge=0, description="Deformed quaternions clamped to their prior")

    def losses(self, name: str = "l1") -> list[float]:
        """One loss component over all recorded iterations."""
        return [getattr(record, name) for record in self.records]

    def counts(self) -> list[tuple[int, int]]:
        """``(iteration, count)`` pairs."""
        return [(record.iteration, record.count) for record in self.records]
