import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgmn import diffcore as dc
from cgmn.interaction import (
    InteractionConfig,
    contrastive_loss,
    cosine,
    cosine_aggregate,
    cross_graph_interact,
    cross_view_interact,
    info_nce,
    sim,
    view_pair_masks,
)


def T(x):
    return dc.Tensor(np.asarray(x, dtype=float))


def test_sim_at_cos_one_is_e_squared():
    assert abs(sim([1.0, 2.0], [2.0, 4.0], 0.5) - math.e ** 2) <= 1e-12


def test_sim_orthogonal_is_one():
    assert sim([1.0, 0.0], [0.0, 3.0], 0.5) == 1.0


def test_cosine_zero_vector_raises():
    with pytest.raises(dc.DegenerateEmbeddingError):
        cosine([0.0, 0.0], [1.0, 0.0])


@pytest.mark.parametrize("N", [1, 2, 10])
def test_uniform_similarity_loss_is_log_one_plus_n(N):
    h = [1.0, 0.0]
    assert abs(info_nce(h, h, [h] * N, 0.5) - math.log(1 + N)) <= 1e-9


def test_positive_dominating_loss_tends_to_zero():
    u = [1.0, 0.0]
    assert info_nce(u, u, [[-1.0, 0.0]] * 3, 0.05) < 1e-15


def test_cross_view_aggregate_hand_value():
    h = T([[1.0, 0.0]])
    other = T([[1.0, 0.0], [0.0, 2.0]])
    out = cross_view_interact(h, other)
    # cos = 1 and 0: aggregate is the first row of other
    np.testing.assert_allclose(out.data, [[1.0, 0.0, 1.0, 0.0]], atol=1e-15)


def test_cross_view_output_width():
    rng = np.random.default_rng(0)
    assert cross_view_interact(T(rng.normal(size=(4, 5))), T(rng.normal(size=(4, 5)))).shape == (4, 10)


def test_cross_graph_modes_and_passthrough():
    rng = np.random.default_rng(1)
    h, a, b = (T(rng.normal(size=(k, 6))) for k in (3, 4, 4))
    assert cross_graph_interact(h, a, b).shape == (3, 18)
    assert cross_graph_interact(h, a, b, InteractionConfig(cross_graph_mode="scalar")).shape == (3, 8)
    out = cross_graph_interact(h, a, b, InteractionConfig(cross_graph=False))
    assert out is h


def test_scalar_mode_is_sum_of_cosines():
    rng = np.random.default_rng(2)
    q, k = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    got = cosine_aggregate(T(q), T(k), mode="scalar").data[:, 0]
    want = [sum(cosine(a, b) for b in k) for a in q]
    np.testing.assert_allclose(got, want, rtol=1e-13)


def test_vector_aggregate_matches_loop():
    rng = np.random.default_rng(3)
    q, k = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    want = np.array([sum(cosine(a, b) * b for b in k) for a in q])
    np.testing.assert_allclose(cosine_aggregate(T(q), T(k)).data, want, rtol=1e-12)
    np.testing.assert_allclose(cosine_aggregate(T(q), T(k), reduce="mean").data, want / 5, rtol=1e-12)


def test_interactions_are_differentiable():
    rng = np.random.default_rng(4)
    other = T(rng.normal(size=(3, 4)))
    a, b = T(rng.normal(size=(4, 4))), T(rng.normal(size=(4, 4)))

    def f(x):
        hat = cross_view_interact(x, other)
        return dc.sum_all(dc.sigmoid(cross_graph_interact(hat, dc.concat_cols([a, a]), dc.concat_cols([b, b]))))

    rep = dc.grad_check(f, T(rng.normal(size=(3, 4))), tol=1e-6)
    assert rep.passed, rep


def test_view_masks_count_negatives():
    partner, neg = view_pair_masks(4, "both")
    assert np.all(neg.sum(axis=1) == 2 * (4 - 1))
    assert np.all(partner.sum(axis=1) == 1)
    assert not np.any(partner * neg)
    _, inter = view_pair_masks(4, "inter_only")
    assert np.all(inter.sum(axis=1) == 3)


def per_node_reference(h1, h2, tau, both=True):
    n = len(h1)
    total = 0.0
    for a, b in ((h1, h2), (h2, h1)):
        for i in range(n):
            negs = [b[k] for k in range(n) if k != i]
            if both:
                negs += [a[k] for k in range(n) if k != i]
            total += info_nce(a[i], b[i], negs, tau)
    return total / (2 * n)


@pytest.mark.parametrize("negatives", ["both", "inter_only"])
def test_contrastive_loss_matches_scalar_reference(negatives):
    rng = np.random.default_rng(5)
    h1, h2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    got = contrastive_loss(T(h1), T(h2), 0.5, negatives).item()
    assert got == pytest.approx(per_node_reference(h1, h2, 0.5, negatives == "both"), rel=1e-12)


def test_contrastive_loss_uniform_value():
    n = 6
    h = np.ones((n, 3))
    assert abs(contrastive_loss(T(h), T(h), 0.5).item() - math.log(1 + 2 * (n - 1))) <= 1e-9


def test_contrastive_loss_needs_two_nodes():
    with pytest.raises(ValueError):
        contrastive_loss(T([[1.0, 0.0]]), T([[1.0, 0.0]]), 0.5)


def test_bad_config():
    with pytest.raises(ValueError):
        InteractionConfig(tau=0)
    with pytest.raises(ValueError):
        InteractionConfig(negatives="all")


@given(st.integers(2, 6), st.integers(0, 10_000), st.floats(0.1, 2.0))
@settings(max_examples=40, deadline=None)
def test_contrastive_loss_invariant_to_node_order(n, seed, tau):
    rng = np.random.default_rng(seed)
    h1, h2 = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    perm = rng.permutation(n)
    a = contrastive_loss(T(h1), T(h2), tau).item()
    b = contrastive_loss(T(h1[perm]), T(h2[perm]), tau).item()
    assert a == pytest.approx(b, rel=1e-12)
    assert a >= 0
