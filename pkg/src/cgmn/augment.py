"""Correlated graph views by feature masking and edge removal."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .graph import Graph, GraphPair, random_graph


@dataclass(frozen=True)
class AugmentConfig:
    p_mask: float = 0.1
    p_drop: float = 0.1
    seed: int = 0
    mask_mode: str = "column"  # or "entry"

    def __post_init__(self):
        for name in ("p_mask", "p_drop"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"augment.{name} must lie in [0, 1], got {p}")
        if self.mask_mode not in ("column", "entry"):
            raise ValueError(f"augment.mask_mode must be 'column' or 'entry', got {self.mask_mode!r}")


@dataclass(frozen=True)
class GraphView:
    base_id: str
    graph: Graph
    masked_dims: tuple[tuple[int, ...], ...]
    dropped_edges: tuple[tuple[int, int], ...]


def view_rng(g: Graph, seed: int, view: int, salt: int = 0) -> np.random.Generator:
    # crc32 keeps streams stable across interpreter runs (str hash is salted)
    return np.random.default_rng([seed, salt, zlib.crc32(g.id.encode()), view])


def make_view(g: Graph, cfg: AugmentConfig, rng: np.random.Generator) -> GraphView:
    edges = g.sorted_edges()
    keep = rng.random(len(edges)) >= cfg.p_drop
    kept = [e for e, k in zip(edges, keep) if k]
    dropped = tuple(e for e, k in zip(edges, keep) if not k)
    if cfg.mask_mode == "column":
        cols = rng.random(g.d) < cfg.p_mask
        mask = np.broadcast_to(cols, (g.n, g.d))
    else:
        mask = rng.random((g.n, g.d)) < cfg.p_mask
    feats = np.where(mask, 0.0, g.features)
    masked = tuple(tuple(int(c) for c in np.flatnonzero(row)) for row in mask)
    view = g.with_(edges=frozenset(kept), features=feats)
    return GraphView(g.id, view, masked, dropped)


def make_views(g: Graph, cfg: AugmentConfig, salt: int = 0) -> tuple[GraphView, GraphView]:
    """Two views with independent randomness; deterministic in ``(g.id, cfg.seed, salt)``."""
    return make_view(g, cfg, view_rng(g, cfg.seed, 0, salt)), make_view(g, cfg, view_rng(g, cfg.seed, 1, salt))


def identity_view(g: Graph) -> GraphView:
    return GraphView(g.id, g, tuple(() for _ in range(g.n)), ())


def recover_features(view: GraphView, base: Graph) -> np.ndarray:
    """Rebuild the base feature matrix from a view and its mask record."""
    out = view.graph.features.copy()
    for i, dims in enumerate(view.masked_dims):
        for c in dims:
            out[i, c] = base.features[i, c]
    return out


def generate_bsd_pairs(
    count: int,
    n_range: tuple[int, int] = (5, 8),
    d: int = 4,
    seed: int = 0,
    p_mask: float = 0.1,
    p_drop: float = 0.1,
) -> list[GraphPair]:
    """Labelled pairs for binary similarity: half positives, half negatives.

    A positive pairs a random graph with an augmented copy of itself; a
    negative pairs it with an independently drawn graph.
    """
    rng = np.random.default_rng(seed)
    cfg = AugmentConfig(p_mask, p_drop, seed)
    lo, hi = n_range
    out = []
    for i in range(count):
        g = random_graph(rng, int(rng.integers(lo, hi + 1)), d, id=f"b{seed}-{i}")
        if i % 2 == 0:
            other = make_view(g, cfg, rng).graph.with_(id=f"b{seed}-{i}p")
            out.append(GraphPair(g, other, bsd_label=1))
        else:
            other = random_graph(rng, int(rng.integers(lo, hi + 1)), d, id=f"b{seed}-{i}n")
            out.append(GraphPair(g, other, bsd_label=-1))
    return out
