"""The CGMN forward pass over batches of graph pairs.

A batch stacks, for every pair, the node rows of four views in the order
``g1 view A, g1 view B, g2 view A, g2 view B``.  The GCN runs once on the
block-diagonal propagation matrix; interactions and the contrastive loss
are expressed with 0/1 masks over the stacked rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from . import diffcore as dc
from .augment import AugmentConfig, make_views
from .config import Config
from .encoder import GcnParams, normalize_adjacency, propagate
from .graph import Graph, GraphPair
from .heads import MlpParams, apply_calibration, ged_head
from .interaction import InteractionConfig, cosine_aggregate, masked_info_nce

Quad = tuple[Graph, Graph, Graph, Graph]


@dataclass
class Batch:
    adj: np.ndarray
    x: np.ndarray
    cross_view: np.ndarray
    cross_graph: tuple[np.ndarray, np.ndarray]
    partner: np.ndarray
    negatives: np.ndarray
    weights: np.ndarray
    pool1: np.ndarray
    pool2: np.ndarray


def build_batch(quads: Sequence[Quad], negatives: str = "both") -> Batch:
    sizes = []
    for q in quads:
        if q[0].n != q[1].n or q[2].n != q[3].n:
            raise ValueError("views of one graph must have equal node counts")
        sizes.extend(g.n for g in q)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    N = int(offsets[-1])
    B = len(quads)
    cv = np.zeros((N, N))
    cg1 = np.zeros((N, N))
    cg2 = np.zeros((N, N))
    partner = np.zeros((N, N))
    neg = np.zeros((N, N))
    weights = np.zeros((N, 1))
    pool1 = np.zeros((B, N))
    pool2 = np.zeros((B, N))

    def span(k):
        return slice(offsets[k], offsets[k + 1])

    for b in range(B):
        k = 4 * b
        for own, sib, oth_a, oth_b in ((k, k + 1, k + 2, k + 3), (k + 1, k, k + 2, k + 3), (k + 2, k + 3, k, k + 1), (k + 3, k + 2, k, k + 1)):
            n = sizes[own]
            cv[span(own), span(sib)] = 1.0
            cg1[span(own), span(oth_a)] = 1.0
            cg2[span(own), span(oth_b)] = 1.0
            eye = np.eye(n)
            partner[span(own), span(sib)] = eye
            neg[span(own), span(sib)] = 1.0 - eye
            if negatives == "both":
                neg[span(own), span(own)] = 1.0 - eye
            weights[span(own)] = 1.0 / (2 * n) / B
        pool1[b, span(k)] = 1.0 / sizes[k]
        pool2[b, span(k + 2)] = 1.0 / sizes[k + 2]
    adj = block_diag(*[normalize_adjacency(g) for q in quads for g in q])
    x = np.vstack([g.features for q in quads for g in q])
    return Batch(adj, x, cv, (cg1, cg2), partner, neg, weights, pool1, pool2)


class CGMN:
    """Parameters plus the forward computations for training and inference."""

    def __init__(self, cfg: Config, in_dim: int, gcn: GcnParams | None = None, head: MlpParams | None = None):
        self.cfg = cfg
        m = cfg.model
        self.icfg = InteractionConfig(cfg.loss.tau, m.cross_view, m.cross_graph, m.cross_graph_mode, cfg.loss.negatives, m.aggregate)
        self.gcn = gcn or GcnParams.init(in_dim, m.hidden, m.layers, m.activation, seed=cfg.seed)
        self.head = head or MlpParams.init([2 * self.embedding_dim] + list(cfg.head.ged_mlp) + [1], seed=cfg.seed + 1)
        self.calibration: MlpParams | None = None

    @property
    def embedding_dim(self) -> int:
        h = self.cfg.model.hidden
        hat = 2 * h if self.icfg.cross_view else h
        if not self.icfg.cross_graph:
            return hat
        return 3 * hat if self.icfg.cross_graph_mode == "vector" else hat + 2

    def encoder_params(self) -> list[dc.Tensor]:
        return list(self.gcn.layers)

    def matched_embeddings(self, batch: Batch) -> dc.Tensor:
        h = propagate(batch.adj, batch.x, self.gcn)
        if self.icfg.cross_view:
            h = dc.concat_cols([h, cosine_aggregate(h, h, batch.cross_view, zero_ok=True, reduce=self.icfg.aggregate)])
        if self.icfg.cross_graph:
            mode = self.icfg.cross_graph_mode
            h = dc.concat_cols([
                h,
                cosine_aggregate(h, h, batch.cross_graph[0], mode=mode, zero_ok=True, reduce=self.icfg.aggregate),
                cosine_aggregate(h, h, batch.cross_graph[1], mode=mode, zero_ok=True, reduce=self.icfg.aggregate),
            ])
        return h

    def loss(self, batch: Batch) -> dc.Tensor:
        h = self.matched_embeddings(batch)
        return masked_info_nce(h, batch.partner, batch.negatives, batch.weights, self.icfg.tau, zero_ok=True)

    def training_quads(self, pairs: Sequence[GraphPair], aug: AugmentConfig, salt: int) -> list[Quad]:
        quads = []
        for p in pairs:
            a1, b1 = make_views(p.g1, aug, salt)
            a2, b2 = make_views(p.g2, aug, salt)
            quads.append((a1.graph, b1.graph, a2.graph, b2.graph))
        return quads

    def embed_pairs(self, pairs: Sequence[GraphPair], chunk: int = 32) -> tuple[dc.Tensor, dc.Tensor]:
        """Graph-level embeddings with augmentation off (both views are the graph itself)."""
        z1, z2 = [], []
        for start in range(0, len(pairs), chunk):
            part = pairs[start:start + chunk]
            batch = build_batch([(p.g1, p.g1, p.g2, p.g2) for p in part], self.icfg.negatives)
            h = self.matched_embeddings(batch)
            z1.append(dc.Tensor(batch.pool1) @ h)
            z2.append(dc.Tensor(batch.pool2) @ h)
        return dc.concat_rows(z1), dc.concat_rows(z2)

    def raw_scores(self, pairs: Sequence[GraphPair]) -> np.ndarray:
        """Uncalibrated similarity per pair from the pooled embeddings.

        BSD always uses the cosine head.  For GED, ``head.ged_score`` picks
        cosine, negative euclidean distance, or the MLP head.
        """
        z1, z2 = self.embed_pairs(pairs)
        score = self.cfg.head.ged_score if self.cfg.train.task == "ged" else "cosine"
        if score == "mlp":
            return ged_head(z1, z2, self.head, self.cfg.head.symmetrize).data[:, 0]
        if score == "distance":
            return -np.linalg.norm(z1.data - z2.data, axis=1)
        return cosine_scores(z1.data, z2.data)

    def predict_ged(self, pairs: Sequence[GraphPair]) -> np.ndarray:
        raw = self.raw_scores(pairs)
        return raw if self.calibration is None else apply_calibration(self.calibration, raw)


def cosine_scores(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    n1 = np.linalg.norm(z1, axis=1)
    n2 = np.linalg.norm(z2, axis=1)
    zero = np.flatnonzero((n1 == 0) | (n2 == 0))
    if zero.size:
        raise dc.DegenerateEmbeddingError(int(zero[0]))
    return np.einsum("ij,ij->i", z1, z2) / (n1 * n2)
