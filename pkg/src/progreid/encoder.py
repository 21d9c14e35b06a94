"""Contextual graph encoder: stacked propagation + perceptron layers per channel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import ChannelGraph
from .errors import ConfigError, ShapeMismatch
from .tensor import Tensor, matmul, propagate, relu, take_rows

PROPAGATIONS = ("diffusion", "identity")


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 3
    hidden_dim: int = 32
    propagation: str = "diffusion"

    def __post_init__(self):
        if self.n_layers not in (1, 2, 3):
            raise ConfigError(f"n_layers must be 1, 2 or 3, got {self.n_layers}")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.propagation not in PROPAGATIONS:
            raise ConfigError(f"propagation must be one of {PROPAGATIONS}, got {self.propagation!r}")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_channel_weights(rng: np.random.Generator, input_dim: int, cfg: EncoderConfig) -> list[Tensor]:
    """``[W0, W1, ...]``: W0 is input_dim x hidden, the rest hidden x hidden."""
    dims = [input_dim] + [cfg.hidden_dim] * cfg.n_layers
    return [
        Tensor(glorot_uniform(rng, dims[l], dims[l + 1]), requires_grad=True, name=f"W{l}")
        for l in range(cfg.n_layers)
    ]


def prop_layer(P, h, propagation: str = "diffusion") -> Tensor:
    if propagation == "identity":
        if P is not None and P.shape[0] != h.shape[0]:
            raise ShapeMismatch(f"propagation {P.shape} for {h.shape[0]} rows")
        return h if isinstance(h, Tensor) else Tensor(h)
    return propagate(P, h)


def perce_layer(h_hat, W) -> Tensor:
    """``ReLU(h_hat @ W)``, no bias."""
    return relu(matmul(h_hat, W))


def encode(P, X, targets, weights: list[Tensor], cfg: EncoderConfig) -> Tensor:
    """Run the layer stack over stacked node rows and read off the target rows.

    ``P`` may be block-diagonal over many examples; ``targets`` holds the row
    of each example's target node.
    """
    X = X if isinstance(X, Tensor) else Tensor(X)
    if len(weights) != cfg.n_layers:
        raise ShapeMismatch(f"{len(weights)} weight matrices for {cfg.n_layers} layers")
    if X.shape[1] != weights[0].shape[0]:
        raise ShapeMismatch(f"features have {X.shape[1]} columns, W0 expects {weights[0].shape[0]}")
    h = X
    for W in weights:
        h = perce_layer(prop_layer(P, h, cfg.propagation), W)
    return take_rows(h, targets)


def cge_forward(ch: ChannelGraph, X, weights: list[Tensor], cfg: EncoderConfig) -> Tensor:
    """Channel embedding ``(1, hidden_dim)`` read at the channel's target node."""
    X = np.asarray(X.data if isinstance(X, Tensor) else X, dtype=np.float64)
    if X.shape[0] != ch.n_nodes:
        raise ShapeMismatch(f"{X.shape[0]} feature rows for {ch.n_nodes} channel nodes")
    return encode(ch.prop, X, [ch.target_index], weights, cfg)
