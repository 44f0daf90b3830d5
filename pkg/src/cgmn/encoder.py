"""Multi-layer GCN node encoder: H^l = act(A_hat H^(l-1) W^(l-1))."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .augment import GraphView
from .graph import Graph

ACTIVATIONS = ("relu", "linear")


def normalize_adjacency(g: Graph | GraphView) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    g = g.graph if isinstance(g, GraphView) else g
    a = g.adjacency + np.eye(g.n)
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class GcnParams:
    layers: list[dc.Tensor]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"model.activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        for k in range(1, len(self.layers)):
            if self.layers[k].shape[0] != self.layers[k - 1].shape[1]:
                raise dc.ShapeError(f"GCN layer {k} expects {self.layers[k].shape[0]} inputs, previous layer gives {self.layers[k - 1].shape[1]}")

    @classmethod
    def init(cls, in_dim: int, hidden: int = 100, layers: int = 3, activation: str = "relu", seed: int = 0) -> GcnParams:
        rng = np.random.default_rng(seed)
        dims = [in_dim] + [hidden] * layers
        ws = [dc.Tensor(glorot(rng, dims[k], dims[k + 1]), requires_grad=True) for k in range(layers)]
        return cls(ws, activation)

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].shape[1]


def propagate(adj_norm: np.ndarray, x: np.ndarray | dc.Tensor, params: GcnParams) -> dc.Tensor:
    """Run the GCN on a (possibly block-diagonal) normalised adjacency."""
    h = x if isinstance(x, dc.Tensor) else dc.Tensor(x)
    if h.shape[1] != params.in_dim:
        raise dc.ShapeError(f"feature dimension {h.shape[1]} does not match encoder input {params.in_dim}")
    a = dc.Tensor(adj_norm)
    for k, w in enumerate(params.layers):
        h = a @ (h @ w)
        if params.activation == "relu" and k < params.L - 1:
            h = dc.relu(h)
    return h


def encode(g: Graph | GraphView, params: GcnParams) -> dc.Tensor:
    """Node embeddings (n x hidden) for one graph or view."""
    graph = g.graph if isinstance(g, GraphView) else g
    return propagate(normalize_adjacency(graph), graph.features, params)
