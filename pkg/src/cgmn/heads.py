"""Graph pooling, prediction heads and the score calibration map."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import diffcore as dc
from .encoder import glorot
from .interaction import cosine


def pool(h: dc.Tensor) -> dc.Tensor:
    """Mean over nodes."""
    if h.shape[0] == 0:
        raise ValueError("cannot pool an empty graph")
    return dc.row_mean(h)


def normalized_ged(ged: float, n1: int, n2: int) -> float:
    """Map an edit distance to a similarity in (0, 1]: exp(-ged / (n1 + n2))."""
    if n1 < 1 or n2 < 1:
        raise ValueError("graph sizes must be >= 1")
    return math.exp(-ged / (n1 + n2))


@dataclass
class MlpParams:
    weights: list[dc.Tensor]
    biases: list[dc.Tensor]
    activation: str = "relu"

    def __post_init__(self):
        for k in range(1, len(self.weights)):
            if self.weights[k].shape[0] != self.weights[k - 1].shape[1]:
                raise dc.ShapeError(f"MLP layer {k} input {self.weights[k].shape[0]} != previous output {self.weights[k - 1].shape[1]}")

    @classmethod
    def init(cls, widths: list[int], seed: int = 0, activation: str = "relu") -> MlpParams:
        rng = np.random.default_rng(seed)
        ws = [dc.Tensor(glorot(rng, widths[k], widths[k + 1]), requires_grad=True) for k in range(len(widths) - 1)]
        bs = [dc.Tensor(np.zeros((1, widths[k + 1])), requires_grad=True) for k in range(len(widths) - 1)]
        return cls(ws, bs, activation)

    @classmethod
    def zeros(cls, widths: list[int]) -> MlpParams:
        ws = [dc.Tensor(np.zeros((widths[k], widths[k + 1])), requires_grad=True) for k in range(len(widths) - 1)]
        bs = [dc.Tensor(np.zeros((1, widths[k + 1])), requires_grad=True) for k in range(len(widths) - 1)]
        return cls(ws, bs)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list[dc.Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]

    def __call__(self, x: dc.Tensor) -> dc.Tensor:
        if x.shape[1] != self.widths[0]:
            raise dc.ShapeError(f"MLP expects {self.widths[0]} inputs, got {x.shape[1]}")
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if k < last and self.activation == "relu":
                x = dc.relu(x)
        return x


def ged_head(z1: dc.Tensor, z2: dc.Tensor, mlp: MlpParams, symmetrize: bool = False) -> dc.Tensor:
    """sigmoid(MLP(z1 ++ z2)) per row; optionally averaged with the swapped order."""
    y = dc.sigmoid(mlp(dc.concat_cols([z1, z2])))
    if symmetrize:
        y = (y + dc.sigmoid(mlp(dc.concat_cols([z2, z1])))) * 0.5
    return y


def bsd_head(z1, z2) -> float:
    return cosine(z1, z2)


def bsd_label(score: float, threshold: float = 0.0) -> int:
    return 1 if score > threshold else -1


# ---------------------------------------------------------------------------
# calibration


def _set_flat(params: list[dc.Tensor], flat: np.ndarray) -> None:
    k = 0
    for p in params:
        size = p.data.size
        p.data[...] = flat[k:k + size].reshape(p.shape)
        k += size


def calibrate(scores, targets, mlp: MlpParams | None = None, seed: int = 0, max_iter: int = 5000, l2: float = 0.0) -> MlpParams:
    """Fit ``sigmoid(MLP(score))`` to ``targets`` by least squares (L-BFGS on tape gradients).

    ``l2`` adds a weight penalty on the standardised problem, which keeps the
    fit smooth when only a handful of labels are available.
    """
    x = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if x.shape[0] < 2:
        raise ValueError(f"calibration needs at least 2 labelled examples, got {x.shape[0]}")
    if x.shape != y.shape:
        raise ValueError("scores and targets differ in length")
    mlp = mlp or MlpParams.init([1, 16, 1], seed=seed)
    params = mlp.tensors()
    # fit on standardised scores, then fold the affine map into the first layer
    shift = float(np.mean(x))
    scale = float(np.std(x)) or 1.0
    xt = dc.Tensor((x - shift) / scale)

    def objective(flat):
        _set_flat(params, flat)
        for p in params:
            p.zero_grad()
        err = dc.sigmoid(mlp(xt)) - y
        loss = dc.sum_all(err * err) * (1.0 / len(y))
        if l2:
            for w in mlp.weights:
                loss = loss + dc.sum_all(w * w) * l2
        loss.backward()
        grad = np.concatenate([(p.grad if p.grad is not None else np.zeros(p.shape)).ravel() for p in params])
        return loss.item(), grad

    x0 = np.concatenate([p.data.ravel() for p in params])
    res = minimize(objective, x0, jac=True, method="L-BFGS-B", options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-12})
    _set_flat(params, res.x)
    w0, b0 = mlp.weights[0], mlp.biases[0]
    b0.data[...] = b0.data - shift / scale * w0.data
    w0.data[...] = w0.data / scale
    return mlp


def apply_calibration(mlp: MlpParams, scores) -> np.ndarray:
    x = dc.Tensor(np.asarray(scores, dtype=np.float64).reshape(-1, 1))
    return dc.sigmoid(mlp(x)).data[:, 0]
