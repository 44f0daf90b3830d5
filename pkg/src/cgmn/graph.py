"""Graph data model, JSON-lines I/O, synthetic generators and dataset splits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GRAPH_FORMAT = "cgmn-graphs"
PAIR_FORMAT = "cgmn-pairs"
FORMAT_VERSION = 1


class GraphFormatError(ValueError):
    """Malformed record or violated graph invariant."""


def _canon_edges(edges: Iterable[Sequence[int]]) -> frozenset[tuple[int, int]]:
    return frozenset((min(int(i), int(j)), max(int(i), int(j))) for i, j in edges)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph: edge set plus a dense ``n x d`` feature matrix."""

    id: str
    n: int
    edges: frozenset[tuple[int, int]]
    features: np.ndarray
    node_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(self.n, -1)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "edges", _canon_edges(self.edges))
        if self.node_labels is not None:
            object.__setattr__(self, "node_labels", tuple(int(x) for x in self.node_labels))
        self.validate()

    @classmethod
    def from_edges(cls, n: int, edges, features=None, id: str = "g", labels=None) -> Graph:
        if features is None:
            features = np.ones((n, 1))
        return cls(id=id, n=n, edges=_canon_edges(edges), features=features, node_labels=labels)

    def validate(self) -> None:
        if self.n < 1:
            raise GraphFormatError(f"graph {self.id}: n must be >= 1, got {self.n}")
        raw = list(self.edges)
        for i, j in raw:
            if i == j:
                raise GraphFormatError(f"graph {self.id}: self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphFormatError(f"graph {self.id}: edge ({i}, {j}) endpoint out of range [0, {self.n})")
        if self.features.shape[0] != self.n:
            raise GraphFormatError(f"graph {self.id}: features has {self.features.shape[0]} rows, expected n={self.n}")
        if self.node_labels is not None and len(self.node_labels) != self.n:
            raise GraphFormatError(f"graph {self.id}: {len(self.node_labels)} labels for n={self.n}")
        if not np.all(np.isfinite(self.features)):
            raise GraphFormatError(f"graph {self.id}: non-finite feature value")

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def labels_or_default(self) -> tuple[int, ...]:
        return self.node_labels if self.node_labels is not None else (0,) * self.n

    def permute(self, perm: Sequence[int], id: str | None = None) -> Graph:
        """Relabel nodes so that old node ``perm[k]`` becomes new node ``k``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        labels = None if self.node_labels is None else [self.node_labels[p] for p in perm]
        return Graph(
            id=id or self.id,
            n=self.n,
            edges=frozenset((inv[i], inv[j]) for i, j in self.edges),
            features=self.features[perm],
            node_labels=labels,
        )

    def with_(self, **changes) -> Graph:
        fields = dict(id=self.id, n=self.n, edges=self.edges, features=self.features, node_labels=self.node_labels)
        fields.update(changes)
        return Graph(**fields)

    def same_as(self, other: Graph) -> bool:
        return (
            self.n == other.n
            and self.edges == other.edges
            and self.node_labels == other.node_labels
            and self.features.shape == other.features.shape
            and bool(np.array_equal(self.features, other.features))
        )

    def to_record(self) -> dict:
        rec = {"id": self.id, "n": self.n, "edges": [list(e) for e in self.sorted_edges()], "features": self.features.tolist()}
        if self.node_labels is not None:
            rec["labels"] = list(self.node_labels)
        return rec


@dataclass
class GraphPair:
    g1: Graph
    g2: Graph
    ged: int | None = None
    bsd_label: int | None = None

    def __post_init__(self):
        if self.ged is not None and self.ged < 0:
            raise GraphFormatError(f"pair ({self.g1.id}, {self.g2.id}): negative ged {self.ged}")
        if self.bsd_label is not None and self.bsd_label not in (1, -1):
            raise GraphFormatError(f"pair ({self.g1.id}, {self.g2.id}): label must be 1 or -1, got {self.bsd_label}")


@dataclass
class DatasetSplit:
    train: list[int]
    valid: list[int]
    test: list[int]
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.valid), len(self.test)


# ---------------------------------------------------------------------------
# I/O


def one_hot(labels: Sequence[int], width: int) -> np.ndarray:
    out = np.zeros((len(labels), width))
    out[np.arange(len(labels)), list(labels)] = 1.0
    return out


def _parse_graph(rec: dict, lineno: int, num_labels: int | None) -> Graph:
    try:
        gid = str(rec["id"])
        n = int(rec["n"])
        edges = rec.get("edges", [])
        labels = rec.get("labels")
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"line {lineno}: bad graph record ({exc})") from exc
    for e in edges:
        if len(e) != 2:
            raise GraphFormatError(f"line {lineno}: graph {gid}: edge {e} is not a pair")
    canon = [tuple(sorted((int(e[0]), int(e[1])))) for e in edges]
    if len(set(canon)) != len(canon):
        raise GraphFormatError(f"line {lineno}: graph {gid}: duplicate edge")
    if "features" in rec:
        feats = np.array(rec["features"], dtype=np.float64)
        if feats.ndim != 2:
            raise GraphFormatError(f"line {lineno}: graph {gid}: features must be a matrix")
    elif labels is not None:
        width = num_labels if num_labels is not None else max(labels) + 1
        feats = one_hot(labels, width)
    else:
        feats = np.ones((n, 1))
    try:
        return Graph(id=gid, n=n, edges=frozenset(canon), features=feats, node_labels=labels)
    except GraphFormatError as exc:
        raise GraphFormatError(f"line {lineno}: {exc}") from exc


def _read_jsonl(path: Path, expected_format: str) -> tuple[dict, list[tuple[int, dict]]]:
    header = None
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"{path}:{lineno}: parse error: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise GraphFormatError(f"{path}:{lineno}: expected a JSON object")
            if header is None and "format" in obj:
                header = obj
                continue
            records.append((lineno, obj))
    if header is not None:
        if header.get("format") != expected_format:
            raise GraphFormatError(f"{path}: expected format {expected_format!r}, got {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise GraphFormatError(f"{path}: unsupported version {header.get('version')!r}")
    return header or {}, records


def load_graphs(path) -> list[Graph]:
    path = Path(path)
    header, records = _read_jsonl(path, GRAPH_FORMAT)
    num_labels = header.get("num_labels")
    if num_labels is None:
        seen = [max(r["labels"]) for _, r in records if r.get("labels") and "features" not in r]
        num_labels = max(seen) + 1 if seen else None
    graphs = []
    ids = set()
    dims = None
    for lineno, rec in records:
        g = _parse_graph(rec, lineno, num_labels)
        if g.id in ids:
            raise GraphFormatError(f"{path}:{lineno}: duplicate graph id {g.id}")
        if dims is not None and g.d != dims:
            raise GraphFormatError(f"{path}:{lineno}: graph {g.id} has feature width {g.d}, dataset uses {dims}")
        dims = g.d
        ids.add(g.id)
        graphs.append(g)
    return graphs


def write_graphs(graphs: Sequence[Graph], path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": GRAPH_FORMAT, "version": FORMAT_VERSION}) + "\n")
        for g in graphs:
            fh.write(json.dumps(g.to_record()) + "\n")


def load_pairs(path, graphs: Sequence[Graph] | dict[str, Graph]) -> list[GraphPair]:
    path = Path(path)
    index = graphs if isinstance(graphs, dict) else {g.id: g for g in graphs}
    _, records = _read_jsonl(path, PAIR_FORMAT)
    pairs = []
    for lineno, rec in records:
        try:
            g1, g2 = index[str(rec["g1"])], index[str(rec["g2"])]
        except KeyError as exc:
            raise GraphFormatError(f"{path}:{lineno}: unknown graph id {exc}") from exc
        try:
            pairs.append(GraphPair(g1, g2, ged=rec.get("ged"), bsd_label=rec.get("label")))
        except GraphFormatError as exc:
            raise GraphFormatError(f"{path}:{lineno}: {exc}") from exc
    return pairs


def write_pairs(pairs: Sequence[GraphPair], path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": PAIR_FORMAT, "version": FORMAT_VERSION}) + "\n")
        for p in pairs:
            rec: dict = {"g1": p.g1.id, "g2": p.g2.id}
            if p.ged is not None:
                rec["ged"] = int(p.ged)
            if p.bsd_label is not None:
                rec["label"] = int(p.bsd_label)
            fh.write(json.dumps(rec) + "\n")


def pair_graphs(pairs: Sequence[GraphPair]) -> list[Graph]:
    """Distinct graphs referenced by ``pairs`` in first-seen order."""
    seen: dict[str, Graph] = {}
    for p in pairs:
        for g in (p.g1, p.g2):
            seen.setdefault(g.id, g)
    return list(seen.values())


# ---------------------------------------------------------------------------
# splitting


def split_dataset(pairs: Sequence, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then contiguous slices of round(f * N) for train and valid."""
    n = len(pairs)
    if n == 0:
        raise ValueError("cannot split an empty pair list")
    f_train, f_valid, f_test = fractions
    if min(fractions) < 0 or abs(f_train + f_valid + f_test - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(n).tolist()
    n_train = min(n, int(round(f_train * n)))
    n_valid = min(n - n_train, int(round(f_valid * n)))
    if f_test == 0:
        n_valid = n - n_train
    return DatasetSplit(order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:], seed)


# ---------------------------------------------------------------------------
# synthetic data


def random_graph(rng: np.random.Generator, n: int, d: int, id: str, p_extra: float = 0.2) -> Graph:
    """Connected random graph: a random spanning tree plus extra edges with probability ``p_extra``.

    With ``d > 1`` every node draws a label in ``[0, d)`` and features are its
    one-hot encoding; with ``d == 1`` graphs are unlabeled with constant features.
    """
    edges = set()
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(k)])
        edges.add((min(a, b), max(a, b)))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < p_extra:
                edges.add((i, j))
    if d > 1:
        labels = rng.integers(d, size=n).tolist()
        return Graph(id=id, n=n, edges=frozenset(edges), features=one_hot(labels, d), node_labels=labels)
    return Graph(id=id, n=n, edges=frozenset(edges), features=np.ones((n, 1)))


class InfeasibleEdit(Exception):
    pass


def apply_random_edit(rng: np.random.Generator, g: Graph, d: int, n_max: int, n_min: int = 1) -> Graph:
    """One unit-cost edit: insert/delete an edge, insert an isolated node, or delete an isolated node."""
    kind = ("insert_edge", "delete_edge", "insert_node", "delete_node")[rng.integers(4)]
    edges = set(g.edges)
    labels = list(g.labels_or_default()) if g.node_labels is not None else None
    if kind == "delete_edge":
        if not edges:
            raise InfeasibleEdit(kind)
        e = sorted(edges)[rng.integers(len(edges))]
        edges.discard(e)
        return g.with_(edges=frozenset(edges))
    if kind == "insert_edge":
        free = [(i, j) for i in range(g.n) for j in range(i + 1, g.n) if (i, j) not in edges]
        if not free:
            raise InfeasibleEdit(kind)
        edges.add(free[rng.integers(len(free))])
        return g.with_(edges=frozenset(edges))
    if kind == "insert_node":
        if g.n >= n_max:
            raise InfeasibleEdit(kind)
        if labels is not None:
            lab = int(rng.integers(d))
            labels.append(lab)
            feats = np.vstack([g.features, one_hot([lab], d)])
        else:
            feats = np.vstack([g.features, np.ones((1, g.d))])
        return g.with_(n=g.n + 1, features=feats, node_labels=labels)
    degree = np.zeros(g.n, dtype=int)
    for i, j in edges:
        degree[i] += 1
        degree[j] += 1
    isolated = np.flatnonzero(degree == 0)
    if g.n <= max(1, n_min) or isolated.size == 0:
        raise InfeasibleEdit(kind)
    victim = int(isolated[rng.integers(isolated.size)])
    keep = [i for i in range(g.n) if i != victim]
    out = g.permute(keep + [victim])
    return Graph(
        id=g.id,
        n=g.n - 1,
        edges=out.edges,
        features=out.features[:-1],
        node_labels=None if labels is None else out.node_labels[:-1],
    )


def random_edits(rng: np.random.Generator, g: Graph, k: int, d: int, n_max: int, max_retries: int = 100, n_min: int = 1) -> Graph:
    for _ in range(k):
        for _attempt in range(max_retries):
            try:
                g = apply_random_edit(rng, g, d, n_max, n_min)
                break
            except InfeasibleEdit:
                continue
        else:
            raise RuntimeError(f"graph {g.id}: no feasible edit after {max_retries} resamples")
    return g


@dataclass
class SyntheticPair(GraphPair):
    edits: int = field(default=0)


def generate_synthetic_pairs(
    count: int,
    n_range: tuple[int, int] = (5, 8),
    d: int = 4,
    edit_budget: int = 3,
    seed: int = 0,
    label_with_oracle: bool = True,
    node_limit: int = 8,
) -> list[SyntheticPair]:
    """``count`` pairs ``(g, g')`` where ``g'`` is ``g`` after up to ``edit_budget`` random edits.

    The applied edit count is kept on ``.edits`` as an upper bound; ``.ged`` is
    the exact oracle distance when ``label_with_oracle``.
    """
    from .ged import ged_exact

    rng = np.random.default_rng(seed)
    lo, hi = n_range
    out = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        g = random_graph(rng, n, d, id=f"s{seed}-{i}a")
        k = int(rng.integers(0, edit_budget + 1))
        g2 = random_edits(rng, g, k, d, n_max=hi, n_min=lo).with_(id=f"s{seed}-{i}b")
        ged = ged_exact(g, g2, node_limit=node_limit)[0] if label_with_oracle else None
        out.append(SyntheticPair(g, g2, ged=ged, edits=k))
    return out


def generate_families(
    families: int,
    variants: int,
    n_range: tuple[int, int] = (5, 8),
    d: int = 4,
    edit_budget: int = 3,
    seed: int = 0,
) -> tuple[list[Graph], list[tuple[int, int]]]:
    """Graphs grouped in families of edited variants of one base graph.

    Returns the graphs and the index pairs ``(i, j), i < j`` of every two
    graphs in the same family.  Each family's first member is the base itself.
    """
    rng = np.random.default_rng(seed)
    lo, hi = n_range
    graphs: list[Graph] = []
    index_pairs = []
    for f in range(families):
        base = random_graph(rng, int(rng.integers(lo, hi + 1)), d, id=f"f{f}-0")
        members = [base]
        for v in range(1, variants):
            k = int(rng.integers(1, edit_budget + 1))
            members.append(random_edits(rng, base, k, d, n_max=hi, n_min=lo).with_(id=f"f{f}-{v}"))
        start = len(graphs)
        graphs.extend(members)
        index_pairs.extend((start + a, start + b) for a in range(variants) for b in range(a + 1, variants))
    return graphs, index_pairs
