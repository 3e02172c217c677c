"""Dense networks with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from utils.errors import ConfigurationError, StateError

Activation = Literal["relu", "none"]


@dataclass
class DenseLayer:
    """One affine layer ``y = act(x @ weight + bias)``; weight is (in, out)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = "relu"

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[1])


@dataclass
class MlpCache:
    """Per-layer inputs and pre-activations from the last forward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)


class Mlp:
    """Multi-layer perceptron over row-major batches shaped (N, in_dim)."""

    def __init__(self, layers: Sequence[DenseLayer]) -> None:
        """Initialize the network.

        Args:
            layers: Layers in application order

        Raises:
            ConfigurationError: If consecutive layer dimensions do not chain
        """
        if not layers:
            raise ConfigurationError("an Mlp needs at least one layer")
        for i, (prev, nxt) in enumerate(zip(layers[:-1], layers[1:])):
            if prev.out_dim != nxt.in_dim:
                raise ConfigurationError(
                    f"layer {i} outputs {prev.out_dim} features but layer {i + 1} expects {nxt.in_dim}"
                )
        for layer in layers:
            if layer.bias.shape != (layer.out_dim,):
                raise ConfigurationError(f"bias shape {layer.bias.shape} does not match width {layer.out_dim}")
        self.layers = list(layers)
        self._cache: Optional[MlpCache] = None

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        zero_last: bool = True,
        final_activation: Activation = "none",
    ) -> "Mlp":
        """Build ``linear-ReLU-...-linear`` with PyTorch-style uniform initialization.

        Args:
            sizes: Layer widths including input and output, e.g. ``[10, 64, 64, 3]``
            rng: Random generator
            zero_last: Zero the final layer so the network starts as the zero map
            final_activation: Activation of the last layer; hidden layers use ReLU
        """
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            bound = 1.0 / np.sqrt(fan_in)
            if last and zero_last:
                weight = np.zeros((fan_in, fan_out))
                bias = np.zeros(fan_out)
            else:
                weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                bias = rng.uniform(-bound, bound, size=fan_out)
            layers.append(DenseLayer(weight=weight, bias=bias, activation=final_activation if last else "relu"))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def shapes(self) -> list[tuple[int, int, str]]:
        """``(in, out, activation)`` per layer."""
        return [(layer.in_dim, layer.out_dim, layer.activation) for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays ``[W0, b0, W1, b1, ...]`` (live references)."""
        params: list[np.ndarray] = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grads(self) -> list[np.ndarray]:
        """Zero arrays matching ``parameters()``."""
        return [np.zeros_like(p) for p in self.parameters()]

    def forward(self, x: np.ndarray, keep_cache: bool = True) -> np.ndarray:
        """Evaluate the network; with ``keep_cache`` also store what backward needs.

        Raises:
            ConfigurationError: If the input width does not match the first layer
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigurationError(f"Mlp expects inputs of width {self.in_dim}, got shape {x.shape}")
        cache = MlpCache()
        h = x
        for layer in self.layers:
            cache.inputs.append(h)
            z = h @ layer.weight + layer.bias
            cache.pre_activations.append(z)
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        if keep_cache:
            self._cache = cache
        return h

    @property
    def cache(self) -> Optional[MlpCache]:
        return self._cache

    def backward(
        self, grad_out: np.ndarray, cache: Optional[MlpCache] = None
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Back-propagate ``dL/d(output)``.

        Args:
            grad_out: Upstream gradient shaped (N, out_dim)
            cache: Forward cache; defaults to the one from the last ``forward``

        Returns:
            Tuple of (gradients aligned with ``parameters()``, dL/d(input))

        Raises:
            StateError: If no forward pass has been cached
        """
        cache = cache or self._cache
        if cache is None:
            raise StateError("Mlp.backward called without a cached forward pass")
        grad = np.asarray(grad_out, dtype=np.float64)
        grads: list[np.ndarray] = []
        for layer, h, z in reversed(list(zip(self.layers, cache.inputs, cache.pre_activations))):
            if layer.activation == "relu":
                grad = grad * (z > 0.0)
            grads.append(grad.sum(axis=0))
            grads.append(h.T @ grad)
            grad = grad @ layer.weight.T
        grads.reverse()
        return grads, grad

    def copy(self) -> "Mlp":
        """Deep copy without the forward cache."""
        return Mlp(
            [DenseLayer(layer.weight.copy(), layer.bias.copy(), layer.activation) for layer in self.layers]
        )
