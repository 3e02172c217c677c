"""Structure-of-arrays container for a set of 4D Gaussians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from gaussians.geometry import Gaussian4D, sigmoid
from utils.errors import DimensionMismatchError

# Stored attribute order and per-Gaussian widths; the archive format relies on it.
ATTRIBUTES: tuple[str, ...] = ("mu4", "q_l", "q_r", "s4", "c_dc", "o_logit")
ATTRIBUTE_WIDTHS: dict[str, int] = {"mu4": 4, "q_l": 4, "q_r": 4, "s4": 4, "c_dc": 3, "o_logit": 1}
PARAMS_PER_GAUSSIAN = sum(ATTRIBUTE_WIDTHS.values())


def _zeros(width: int) -> np.ndarray:
    return np.zeros((0, width), dtype=np.float64)


@dataclass
class GaussianCloud:
    """Parallel arrays of every Gaussian4D attribute.

    ``o_logit`` is one-dimensional; every other attribute is (count, width).
    """

    mu4: np.ndarray = field(default_factory=lambda: _zeros(4))
    q_l: np.ndarray = field(default_factory=lambda: _zeros(4))
    q_r: np.ndarray = field(default_factory=lambda: _zeros(4))
    s4: np.ndarray = field(default_factory=lambda: _zeros(4))
    c_dc: np.ndarray = field(default_factory=lambda: _zeros(3))
    o_logit: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __post_init__(self) -> None:
        for name in ATTRIBUTES:
            width = ATTRIBUTE_WIDTHS[name]
            values = np.asarray(getattr(self, name), dtype=np.float64)
            values = values.reshape(-1) if name == "o_logit" else values.reshape(-1, width)
            setattr(self, name, values)
        self.validate()

    @property
    def count(self) -> int:
        """Number of Gaussians."""
        return int(self.o_logit.shape[0])

    @property
    def opacity(self) -> np.ndarray:
        """Activated spatial opacities."""
        return sigmoid(self.o_logit)

    def validate(self) -> None:
        """Check that every parallel array has the same length.

        Raises:
            DimensionMismatchError: If the arrays are misaligned
        """
        lengths = {name: getattr(self, name).shape[0] for name in ATTRIBUTES}
        if len(set(lengths.values())) > 1:
            raise DimensionMismatchError(f"misaligned Gaussian arrays: {lengths}")

    def arrays(self) -> dict[str, np.ndarray]:
        """Attribute arrays keyed by name, in storage order."""
        return {name: getattr(self, name) for name in ATTRIBUTES}

    def gaussian(self, index: int) -> Gaussian4D:
        """Extract one Gaussian as a value object."""
        return Gaussian4D(
            mu4=self.mu4[index].copy(),
            q_l=self.q_l[index].copy(),
            q_r=self.q_r[index].copy(),
            s4=self.s4[index].copy(),
            c_dc=self.c_dc[index].copy(),
            o_logit=float(self.o_logit[index]),
        )

    def select(self, index: np.ndarray | Sequence[int]) -> "GaussianCloud":
        """Return a new cloud holding the given rows (index array or boolean mask)."""
        index = np.asarray(index)
        return GaussianCloud(**{name: getattr(self, name)[index].copy() for name in ATTRIBUTES})

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        """Append another cloud's Gaussians after this one's."""
        return GaussianCloud(
            **{name: np.concatenate([getattr(self, name), getattr(other, name)]) for name in ATTRIBUTES}
        )

    def copy(self) -> "GaussianCloud":
        """Deep copy."""
        return GaussianCloud(**{name: getattr(self, name).copy() for name in ATTRIBUTES})

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian4D]) -> "GaussianCloud":
        """Stack value Gaussians into a cloud."""
        items = list(gaussians)
        if not items:
            return cls()
        return cls(
            mu4=np.stack([g.mu4 for g in items]),
            q_l=np.stack([g.q_l for g in items]),
            q_r=np.stack([g.q_r for g in items]),
            s4=np.stack([g.s4 for g in items]),
            c_dc=np.stack([g.c_dc for g in items]),
            o_logit=np.array([g.o_logit for g in items]),
        )

    @classmethod
    def random(
        cls,
        count: int,
        rng: np.random.Generator,
        extent: float = 1.0,
        log_scale_range: tuple[float, float] = (-3.0, -1.5),
    ) -> "GaussianCloud":
        """Random cloud for tests and benchmarks: positions in ``[-extent, extent]^3``, times in [0, 1]."""
        mu4 = np.concatenate(
            [rng.uniform(-extent, extent, size=(count, 3)), rng.uniform(0.0, 1.0, size=(count, 1))], axis=1
        )
        s4 = rng.uniform(*log_scale_range, size=(count, 4))
        s4[:, 3] = rng.uniform(-1.5, 0.0, size=count)
        return cls(
            mu4=mu4,
            q_l=rng.normal(size=(count, 4)),
            q_r=rng.normal(size=(count, 4)),
            s4=s4,
            c_dc=rng.normal(size=(count, 3)),
            o_logit=rng.normal(loc=1.0, size=count),
        )
