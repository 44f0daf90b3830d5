import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgmn.ged import ged_exact
from cgmn.graph import (
    Graph,
    GraphFormatError,
    GraphPair,
    generate_families,
    generate_synthetic_pairs,
    load_graphs,
    load_pairs,
    split_dataset,
    write_graphs,
    write_pairs,
)


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


def test_single_node_record(tmp_path):
    p = tmp_path / "g.jsonl"
    write_lines(p, [{"format": "cgmn-graphs", "version": 1}, {"id": "a", "n": 1, "edges": [], "features": [[1.0]]}])
    (g,) = load_graphs(p)
    np.testing.assert_array_equal(g.adjacency, [[0.0]])


def test_self_loop_rejected_with_line_number(tmp_path):
    p = tmp_path / "g.jsonl"
    write_lines(p, [{"id": "a", "n": 2, "edges": [[0, 0]], "features": [[1.0], [1.0]]}])
    with pytest.raises(GraphFormatError, match="self-loop") as exc:
        load_graphs(p)
    assert "line 1" in str(exc.value) and "graph a" in str(exc.value)


def test_triangle_edge_count(tmp_path):
    p = tmp_path / "g.jsonl"
    write_lines(p, [{"id": "t", "n": 3, "edges": [[0, 1], [1, 2], [0, 2]], "features": [[1.0]] * 3}])
    (g,) = load_graphs(p)
    assert g.m == 3
    a = g.adjacency
    np.testing.assert_array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)


@pytest.mark.parametrize(
    "record, message",
    [
        ({"id": "x", "n": 2, "edges": [[0, 2]], "features": [[1.0]] * 2}, "out of range"),
        ({"id": "x", "n": 2, "edges": [[0, 1], [1, 0]], "features": [[1.0]] * 2}, "duplicate edge"),
        ({"id": "x", "n": 3, "edges": [], "features": [[1.0]] * 2}, "rows"),
        ({"id": "x", "n": 0, "edges": [], "features": [[1.0]]}, "n must be"),
    ],
)
def test_invariant_violations(tmp_path, record, message):
    p = tmp_path / "g.jsonl"
    write_lines(p, [record])
    with pytest.raises(GraphFormatError, match=message):
        load_graphs(p)


def test_parse_error_names_line(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text('{"format": "cgmn-graphs", "version": 1}\n{"id": "a", "n": 1,\n')
    with pytest.raises(GraphFormatError, match=":2: parse error"):
        load_graphs(p)


def test_wrong_header_version(tmp_path):
    p = tmp_path / "g.jsonl"
    write_lines(p, [{"format": "cgmn-graphs", "version": 7}])
    with pytest.raises(GraphFormatError, match="version"):
        load_graphs(p)


def test_labels_become_one_hot(tmp_path):
    p = tmp_path / "g.jsonl"
    write_lines(p, [{"id": "a", "n": 2, "edges": [[0, 1]], "labels": [0, 2]}, {"id": "b", "n": 1, "edges": [], "labels": [1]}])
    a, b = load_graphs(p)
    np.testing.assert_array_equal(a.features, [[1, 0, 0], [0, 0, 1]])
    np.testing.assert_array_equal(b.features, [[0, 1, 0]])


def test_inconsistent_feature_width(tmp_path):
    p = tmp_path / "g.jsonl"
    write_lines(p, [{"id": "a", "n": 1, "edges": [], "features": [[1.0]]}, {"id": "b", "n": 1, "edges": [], "features": [[1.0, 2.0]]}])
    with pytest.raises(GraphFormatError, match="feature width"):
        load_graphs(p)


def test_graph_and_pair_round_trip(tmp_path):
    pairs = generate_synthetic_pairs(6, (3, 5), d=3, edit_budget=2, seed=3)
    graphs = [g for p in pairs for g in (p.g1, p.g2)]
    write_graphs(graphs, tmp_path / "g.jsonl")
    write_pairs(pairs, tmp_path / "p.jsonl")
    back = load_graphs(tmp_path / "g.jsonl")
    assert all(a.same_as(b) and a.id == b.id for a, b in zip(graphs, back))
    pairs_back = load_pairs(tmp_path / "p.jsonl", back)
    assert [(p.g1.id, p.g2.id, p.ged) for p in pairs] == [(p.g1.id, p.g2.id, p.ged) for p in pairs_back]


def test_pairs_unknown_id(tmp_path):
    write_lines(tmp_path / "p.jsonl", [{"g1": "nope", "g2": "a"}])
    with pytest.raises(GraphFormatError, match="unknown graph id"):
        load_pairs(tmp_path / "p.jsonl", [Graph.from_edges(1, [], id="a")])


def test_pair_label_validation():
    g = Graph.from_edges(1, [])
    with pytest.raises(GraphFormatError):
        GraphPair(g, g, bsd_label=0)
    with pytest.raises(GraphFormatError):
        GraphPair(g, g, ged=-1)


def test_split_default_fractions():
    assert split_dataset(list(range(100)), (0.6, 0.2, 0.2), seed=7).sizes() == (60, 20, 20)


def test_split_degenerate_fractions():
    assert split_dataset(list(range(10)), (1, 0, 0), seed=1).sizes() == (10, 0, 0)


def test_split_rounding_small():
    # round(0.6*5)=3, round(0.2*5)=1, remainder 1
    assert split_dataset(list(range(5)), (0.6, 0.2, 0.2), seed=0).sizes() == (3, 1, 1)


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset([], (0.6, 0.2, 0.2), 0)
    with pytest.raises(ValueError):
        split_dataset([1, 2], (0.5, 0.2, 0.2), 0)


@given(st.integers(1, 300), st.integers(0, 2**32 - 1), st.sampled_from([(0.6, 0.2, 0.2), (0.8, 0.1, 0.1), (0.1, 0.1, 0.8), (1, 0, 0)]))
@settings(max_examples=60, deadline=None)
def test_split_is_deterministic_partition(n, seed, fractions):
    s = split_dataset(list(range(n)), fractions, seed)
    assert sorted(s.train + s.valid + s.test) == list(range(n))
    assert split_dataset(list(range(n)), fractions, seed) == s


def test_zero_edit_budget_gives_zero_ged():
    assert all(p.ged == 0 for p in generate_synthetic_pairs(10, (3, 6), d=2, edit_budget=0, seed=5))


def test_generation_is_deterministic(tmp_path):
    for run in ("a", "b"):
        pairs = generate_synthetic_pairs(50, (4, 7), d=3, edit_budget=3, seed=11)
        write_graphs([g for p in pairs for g in (p.g1, p.g2)], tmp_path / f"g{run}.jsonl")
        write_pairs(pairs, tmp_path / f"p{run}.jsonl")
    assert (tmp_path / "ga.jsonl").read_bytes() == (tmp_path / "gb.jsonl").read_bytes()
    assert (tmp_path / "pa.jsonl").read_bytes() == (tmp_path / "pb.jsonl").read_bytes()


def test_triangle_minus_edge_pair():
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert ged_exact(tri, Graph.from_edges(3, [(0, 1), (1, 2)]))[0] == 1


@pytest.mark.parametrize("d", [1, 4])
def test_oracle_ged_bounded_by_applied_edits(d):
    pairs = generate_synthetic_pairs(60, (3, 7), d=d, edit_budget=4, seed=2)
    assert all(p.ged <= p.edits for p in pairs)
    assert any(p.ged > 0 for p in pairs)


def test_families_shape():
    graphs, idx = generate_families(3, 4, (4, 6), d=2, edit_budget=2, seed=0)
    assert len(graphs) == 12 and len(idx) == 3 * 6
    assert all(graphs[i].id.split("-")[0] == graphs[j].id.split("-")[0] for i, j in idx)
    assert all(4 <= g.n <= 6 for g in graphs)
