"""Temperature similarity, cross-view and cross-graph interaction, contrastive loss.

The per-graph functions here and the batched model share the masked
primitives :func:`cosine_aggregate` and :func:`masked_info_nce`; a batch is a
block structure expressed through 0/1 masks over the stacked node rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


@dataclass(frozen=True)
class InteractionConfig:
    tau: float = 0.5
    cross_view: bool = True
    cross_graph: bool = True
    cross_graph_mode: str = "vector"
    negatives: str = "both"
    aggregate: str = "sum"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"loss.tau must be > 0, got {self.tau}")
        if self.cross_graph_mode not in ("vector", "scalar"):
            raise ValueError(f"model.cross_graph_mode must be 'vector' or 'scalar', got {self.cross_graph_mode!r}")
        if self.negatives not in ("both", "inter_only"):
            raise ValueError(f"loss.negatives must be 'both' or 'inter_only', got {self.negatives!r}")
        if self.aggregate not in ("sum", "mean"):
            raise ValueError(f"model.aggregate must be 'sum' or 'mean', got {self.aggregate!r}")


def _vec(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, dc.Tensor) else x, dtype=np.float64).reshape(-1)


def cosine(a, b) -> float:
    a, b = _vec(a), _vec(b)
    na, nb = math.sqrt(a @ a), math.sqrt(b @ b)
    if na == 0 or nb == 0:
        raise dc.DegenerateEmbeddingError(0 if na == 0 else 1)
    return float(a @ b) / (na * nb)


def sim(h_u, h_v, tau: float) -> float:
    """exp(cos(h_u, h_v) / tau)."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return math.exp(cosine(h_u, h_v) / tau)


def info_nce(h_u, h_v, negatives, tau: float) -> float:
    """-log of the positive pair's share of similarity mass against ``negatives``."""
    pos = sim(h_u, h_v, tau)
    return -math.log(pos / (pos + sum(sim(h_u, h_k, tau) for h_k in negatives)))


# ---------------------------------------------------------------------------
# masked primitives


def cosine_aggregate(
    q: dc.Tensor,
    k: dc.Tensor,
    mask: np.ndarray | None = None,
    mode: str = "vector",
    zero_ok: bool = False,
    reduce: str = "sum",
) -> dc.Tensor:
    """For every row of ``q``: sum over (masked) rows of ``k`` of cos(q_u, k_v) * k_v.

    In ``scalar`` mode the cosines are summed without the ``k_v`` factor,
    giving one column.  ``reduce="mean"`` divides by the number of rows
    aggregated.
    """
    c = dc.cosine_matrix(q, k, zero_ok=zero_ok)
    if mask is None:
        mask = np.ones(c.shape)
    if reduce == "mean":
        counts = mask.sum(axis=1, keepdims=True)
        mask = mask / np.where(counts == 0, 1.0, counts)
    c = c * mask
    if mode == "scalar":
        return dc.row_sum(c)
    return c @ k


def masked_info_nce(h: dc.Tensor, partner: np.ndarray, neg_mask: np.ndarray, weights: np.ndarray, tau: float, zero_ok: bool = False) -> dc.Tensor:
    """Weighted sum over rows u of -log(sim(u, partner) / (sim(u, partner) + sum_neg sim(u, k)))."""
    c = dc.cosine_matrix(h, h, zero_ok=zero_ok)
    s = dc.exp(c * (1.0 / tau))
    pos_cos = dc.row_sum(c * partner)
    denom = dc.row_sum(s * (partner + neg_mask))
    per_node = dc.log(denom) - pos_cos * (1.0 / tau)
    return dc.sum_all(per_node * weights)


def view_pair_masks(n: int, negatives: str = "both") -> tuple[np.ndarray, np.ndarray]:
    """Partner and negative masks for two stacked views of an ``n``-node graph."""
    eye, ones = np.eye(n), np.ones((n, n))
    zero = np.zeros((n, n))
    partner = np.block([[zero, eye], [eye, zero]])
    inter = np.block([[zero, ones - eye], [ones - eye, zero]])
    intra = np.block([[ones - eye, zero], [zero, ones - eye]])
    return partner, inter + intra if negatives == "both" else inter


# ---------------------------------------------------------------------------
# per-graph API


def cross_view_interact(h: dc.Tensor, h_other: dc.Tensor, reduce: str = "sum") -> dc.Tensor:
    """Concatenate to each row of ``h`` the cosine-weighted sum (or mean) of the rows of ``h_other``."""
    return dc.concat_cols([h, cosine_aggregate(h, h_other, reduce=reduce)])


def cross_graph_interact(h_hat: dc.Tensor, other_v1: dc.Tensor, other_v2: dc.Tensor, cfg: InteractionConfig = InteractionConfig()) -> dc.Tensor:
    """Concatenate aggregates of both views of the paired graph (passthrough if disabled)."""
    if not cfg.cross_graph:
        return h_hat
    mode, red = cfg.cross_graph_mode, cfg.aggregate
    return dc.concat_cols([h_hat, cosine_aggregate(h_hat, other_v1, mode=mode, reduce=red), cosine_aggregate(h_hat, other_v2, mode=mode, reduce=red)])


def contrastive_loss(h1: dc.Tensor, h2: dc.Tensor, tau: float, negatives: str = "both") -> dc.Tensor:
    """Mean over nodes of the symmetrised InfoNCE between two aligned views."""
    n = h1.shape[0]
    if h2.shape != h1.shape:
        raise dc.ShapeError(f"views must align: {h1.shape} vs {h2.shape}")
    if n < 2:
        raise ValueError("contrastive loss needs at least 2 nodes per view (no negatives otherwise)")
    partner, neg = view_pair_masks(n, negatives)
    weights = np.full((2 * n, 1), 1.0 / (2 * n))
    return masked_info_nce(dc.concat_rows([h1, h2]), partner, neg, weights, tau)
