"""Minimal dense-network machinery on numpy.

Provides exactly what the diagnosis models need: fully connected layers with
sigmoid or identity activation, a forward pass that records a tape, exact
reverse-mode gradients off that tape, and plain gradient-descent updates with
a non-negativity projection for monotone layers. Single-threaded updates keep
training bitwise deterministic for a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataFormatError, TrainingDivergedError

ACTIVATIONS = ("identity", "sigmoid")

SERIAL_VERSION = 1


def sigmoid(x: np.ndarray | float) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class DenseLayer:
    """Affine map plus activation; ``nonneg`` layers keep all weights >= 0."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    nonneg: bool = False
    activation: str = "sigmoid"

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DataFormatError("layer weights must be (out, in) with a matching bias")
        if self.activation not in ACTIVATIONS:
            raise DataFormatError(f"unknown activation {self.activation!r}")
        if self.nonneg and (self.weights < 0).any():
            raise DataFormatError("nonneg layer constructed with negative weights")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


def init_layer(
    in_dim: int,
    out_dim: int,
    rng: np.random.Generator,
    nonneg: bool = False,
    activation: str = "sigmoid",
) -> DenseLayer:
    """Uniform(-1/sqrt(in), 1/sqrt(in)) weights; nonneg layers start in (0, 1/sqrt(in))."""
    bound = 1.0 / np.sqrt(in_dim)
    if nonneg:
        weights = rng.uniform(0.0, bound, size=(out_dim, in_dim))
    else:
        weights = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return DenseLayer(
        weights=weights, bias=np.zeros(out_dim), nonneg=nonneg, activation=activation
    )


@dataclass
class LayerGrads:
    d_weights: np.ndarray
    d_bias: np.ndarray


@dataclass
class GradientTape:
    """Forward cache for a chain of dense layers: inputs and post-activation outputs."""

    layers: tuple[DenseLayer, ...]
    inputs: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)
    squeezed: bool = False


def forward(
    layers: Sequence[DenseLayer], x: np.ndarray
) -> tuple[np.ndarray, GradientTape]:
    """Run ``x`` through the layer chain; returns output and the tape for backward.

    Accepts a single vector or a (batch, in) matrix; a vector input yields a
    vector output.
    """
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2:
        raise DataFormatError("input must be a vector or a (batch, in) matrix")
    tape = GradientTape(layers=tuple(layers), squeezed=squeezed)
    for layer in layers:
        if x.shape[1] != layer.in_dim:
            raise DataFormatError(
                f"dimension mismatch: input has {x.shape[1]} features, layer expects {layer.in_dim}"
            )
        tape.inputs.append(x)
        z = x @ layer.weights.T + layer.bias
        x = sigmoid(z) if layer.activation == "sigmoid" else z
        tape.outputs.append(x)
    return (x[0] if squeezed else x), tape


def backward(
    tape: GradientTape, loss_grad: np.ndarray
) -> tuple[list[LayerGrads], np.ndarray]:
    """Exact reverse-mode gradients for the taped chain.

    ``loss_grad`` is dLoss/dOutput with the output's shape. Parameter
    gradients are summed over the batch; the input gradient is also returned
    so chains can be composed.
    """
    if not tape.outputs:
        raise DataFormatError("backward called on an empty tape")
    g = np.asarray(loss_grad, dtype=np.float64)
    if tape.squeezed and g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise DataFormatError("loss gradient shape does not match the taped output")
    grads: list[LayerGrads] = [None] * len(tape.layers)  # type: ignore[list-item]
    for k in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[k]
        if layer.activation == "sigmoid":
            y = tape.outputs[k]
            g = g * y * (1.0 - y)
        grads[k] = LayerGrads(d_weights=g.T @ tape.inputs[k], d_bias=g.sum(axis=0))
        g = g @ layer.weights
    return grads, (g[0] if tape.squeezed else g)


def sgd_step(layer: DenseLayer, grads: LayerGrads, lr: float) -> DenseLayer:
    """In-place descent step; nonneg layers are projected back onto w >= 0."""
    if lr <= 0:
        raise DataFormatError("learning rate must be positive")
    if not (np.isfinite(grads.d_weights).all() and np.isfinite(grads.d_bias).all()):
        raise TrainingDivergedError("non-finite gradient; aborting training")
    layer.weights -= lr * grads.d_weights
    layer.bias -= lr * grads.d_bias
    if layer.nonneg:
        np.maximum(layer.weights, 0.0, out=layer.weights)
    return layer


def layers_to_dict(layers: Sequence[DenseLayer]) -> dict:
    """JSON-ready serialization: per-layer shape, flags and row-major values."""
    return {
        "serial_version": SERIAL_VERSION,
        "layers": [
            {
                "shape": [layer.out_dim, layer.in_dim],
                "nonneg": layer.nonneg,
                "activation": layer.activation,
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in layers
        ],
    }


def layers_from_dict(data: dict) -> list[DenseLayer]:
    if data.get("serial_version") != SERIAL_VERSION:
        raise DataFormatError(f"unsupported layer serialization version: {data.get('serial_version')}")
    layers = []
    for entry in data["layers"]:
        layer = DenseLayer(
            weights=np.asarray(entry["weights"], dtype=np.float64),
            bias=np.asarray(entry["bias"], dtype=np.float64),
            nonneg=bool(entry["nonneg"]),
            activation=str(entry["activation"]),
        )
        if [layer.out_dim, layer.in_dim] != list(entry["shape"]):
            raise DataFormatError("layer shape does not match stored weights")
        layers.append(layer)
    return layers
