"""Exact graph edit distance under unit-cost node/edge insertion and deletion.

Relabelling is not an edit operation: nodes with different labels never map
onto each other, so a label change costs a deletion plus an insertion.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

from .graph import Graph


class IntractableSizeError(ValueError):
    pass


@dataclass(frozen=True)
class EditOp:
    """One edit.  Node refs are ``"u<i>"`` for node ``i`` of the source graph
    and ``"v<j>"`` for a node inserted to play target node ``j``."""

    kind: str
    a: str
    b: str | None = None
    label: int | None = None


@dataclass
class EditPath:
    ops: list[EditOp] = field(default_factory=list)

    @property
    def cost(self) -> int:
        return len(self.ops)


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _bitmask_adjacency(g: Graph) -> list[int]:
    adj = [0] * g.n
    for i, j in g.edges:
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    return adj


def mapping_cost(g1: Graph, g2: Graph, mapping: dict[int, int | None]) -> int:
    """Edit cost implied by a node mapping (``None`` = delete); ``inf`` if labels clash."""
    l1, l2 = g1.labels_or_default(), g2.labels_or_default()
    if any(t is not None and l1[u] != l2[t] for u, t in mapping.items()):
        return float("inf")
    image = {t for t in mapping.values() if t is not None}
    cost = sum(t is None for t in mapping.values()) + (g2.n - len(image))
    preserved = 0
    for i, j in g1.edges:
        a, b = mapping[i], mapping[j]
        if a is not None and b is not None and (min(a, b), max(a, b)) in g2.edges:
            preserved += 1
    return cost + (g1.m - preserved) + (g2.m - preserved)


def path_from_mapping(g1: Graph, g2: Graph, mapping: dict[int, int | None]) -> EditPath:
    inv = {t: u for u, t in mapping.items() if t is not None}
    ops: list[EditOp] = []
    for i, j in g1.sorted_edges():
        a, b = mapping[i], mapping[j]
        if a is None or b is None or (min(a, b), max(a, b)) not in g2.edges:
            ops.append(EditOp("delete_edge", f"u{i}", f"u{j}"))
    ops.extend(EditOp("delete_node", f"u{u}") for u in sorted(mapping) if mapping[u] is None)
    l2 = g2.labels_or_default()
    ops.extend(EditOp("insert_node", f"v{t}", label=l2[t]) for t in range(g2.n) if t not in inv)

    def ref(t: int) -> str:
        return f"u{inv[t]}" if t in inv else f"v{t}"

    for a, b in g2.sorted_edges():
        if a in inv and b in inv:
            i, j = inv[a], inv[b]
            if (min(i, j), max(i, j)) in g1.edges:
                continue
        ops.append(EditOp("insert_edge", ref(a), ref(b)))
    return EditPath(ops)


def apply_edit_path(g: Graph, path: EditPath) -> Graph:
    """Replay ``path`` on ``g``; node order of the result is survivors then insertions."""
    labels = {f"u{i}": lab for i, lab in enumerate(g.labels_or_default())}
    edges = {frozenset((f"u{i}", f"u{j}")) for i, j in g.edges}
    for op in path.ops:
        if op.kind == "delete_edge":
            edges.remove(frozenset((op.a, op.b)))
        elif op.kind == "insert_edge":
            key = frozenset((op.a, op.b))
            if key in edges or op.a == op.b:
                raise ValueError(f"invalid edge insertion {op}")
            edges.add(key)
        elif op.kind == "delete_node":
            if any(op.a in e for e in edges):
                raise ValueError(f"node {op.a} deleted while it still has edges")
            del labels[op.a]
        elif op.kind == "insert_node":
            if op.a in labels:
                raise ValueError(f"node {op.a} already exists")
            labels[op.a] = op.label if op.label is not None else 0
        else:
            raise ValueError(f"unknown edit {op.kind}")
    keys = sorted(labels, key=lambda k: (k[0], int(k[1:])))
    pos = {k: i for i, k in enumerate(keys)}
    return Graph.from_edges(
        len(keys),
        [tuple(pos[x] for x in e) for e in edges],
        id=f"{g.id}-edited",
        labels=[labels[k] for k in keys] if g.node_labels is not None else None,
    )


def ged_exact(g1: Graph, g2: Graph, node_limit: int = 8) -> tuple[int, EditPath]:
    """Minimum unit-cost edit distance via A* over partial node assignments.

    The heuristic adds the per-label node-count mismatch of the unassigned
    nodes and the difference in still-undecided edge counts; both are lower
    bounds on disjoint sets of remaining edits, so the search is exact.
    """
    for g in (g1, g2):
        if g.n > node_limit:
            raise IntractableSizeError(f"intractable size: graph {g.id} has {g.n} nodes > node_limit {node_limit}")
    l1, l2 = g1.labels_or_default(), g2.labels_or_default()
    label_ids = {lab: k for k, lab in enumerate(sorted(set(l1) | set(l2)))}
    L = len(label_ids)
    adj1, adj2 = _bitmask_adjacency(g1), _bitmask_adjacency(g2)
    # densest nodes first tighten the edge bound early
    order = sorted(range(g1.n), key=lambda u: (-_popcount(adj1[u]), u))
    n1, n2, m1, m2 = g1.n, g2.n, g1.m, g2.m

    suffix_counts = [[0] * L for _ in range(n1 + 1)]
    for k in range(n1 - 1, -1, -1):
        suffix_counts[k] = suffix_counts[k + 1][:]
        suffix_counts[k][label_ids[l1[order[k]]]] += 1
    label_mask2 = [0] * L
    for t in range(n2):
        label_mask2[label_ids[l2[t]]] |= 1 << t
    full2 = (1 << n2) - 1

    def heuristic(k: int, used: int, edges1_done: int, edges2_done: int) -> int:
        free = full2 & ~used
        h = 0
        rem1 = suffix_counts[k]
        for lab in range(L):
            h += abs(rem1[lab] - _popcount(label_mask2[lab] & free))
        return h + abs((m1 - edges1_done) - (m2 - edges2_done))

    tie = itertools.count()
    # (f, -depth, tiebreak, g, depth, mapping, used_mask, proc_mask, edges1_done, edges2_done, complete)
    start = (heuristic(0, 0, 0, 0), 0, next(tie), 0, 0, (), 0, 0, 0, 0, False)
    heap = [start]
    while heap:
        f, _, _, cost, k, mapping, used, proc, e1, e2, complete = heapq.heappop(heap)
        if complete:
            full = {order[i]: (None if t < 0 else t) for i, t in enumerate(mapping)}
            return cost, path_from_mapping(g1, g2, full)
        if k == n1:
            free = full2 & ~used
            extra = _popcount(free) + (m2 - e2)
            heapq.heappush(heap, (cost + extra, -k - 1, next(tie), cost + extra, k, mapping, used, proc, e1, e2, True))
            continue
        u = order[k]
        nbrs_done = adj1[u] & proc
        e1_new = e1 + _popcount(nbrs_done)
        proc_new = proc | (1 << u)
        # deletion of u removes its edges to already-placed nodes
        c = cost + 1 + _popcount(nbrs_done)
        heapq.heappush(heap, (c + heuristic(k + 1, used, e1_new, e2), -k - 1, next(tie), c, k + 1, mapping + (-1,), used, proc_new, e1_new, e2, False))
        lab = label_ids[l1[u]]
        cand = label_mask2[lab] & ~used
        while cand:
            t = (cand & -cand).bit_length() - 1
            cand &= cand - 1
            c = cost
            for i in range(k):
                w = order[i]
                has1 = (nbrs_done >> w) & 1
                tw = mapping[i]
                if tw < 0:
                    c += has1
                else:
                    c += has1 ^ ((adj2[t] >> tw) & 1)
            e2_new = e2 + _popcount(adj2[t] & used)
            used_new = used | (1 << t)
            heapq.heappush(heap, (c + heuristic(k + 1, used_new, e1_new, e2_new), -k - 1, next(tie), c, k + 1, mapping + (t,), used_new, proc_new, e1_new, e2_new, False))
    raise AssertionError("A* exhausted without reaching a complete assignment")


def ged_bruteforce(g1: Graph, g2: Graph, max_nodes: int = 4) -> int:
    """Minimum over every partial injective node mapping; for cross-checking only."""
    if g1.n > max_nodes or g2.n > max_nodes:
        raise IntractableSizeError(f"ged_bruteforce supports graphs up to {max_nodes} nodes")
    best = float("inf")
    targets = list(range(g2.n)) + [None] * g1.n
    for choice in set(itertools.permutations(targets, g1.n)):
        best = min(best, mapping_cost(g1, g2, dict(enumerate(choice))))
    return int(best)
