import numpy as np
import pytest

from cgmn import diffcore as dc
from cgmn.augment import AugmentConfig
from cgmn.config import Config
from cgmn.encoder import encode
from cgmn.graph import Graph, GraphPair, generate_synthetic_pairs, random_graph
from cgmn.interaction import contrastive_loss, cross_graph_interact, cross_view_interact
from cgmn.metrics import mse
from cgmn.model import CGMN, build_batch
from cgmn.train import (
    SGD,
    Checkpoint,
    DivergenceError,
    TaskLabelError,
    dumps_report,
    evaluate,
    ged_targets,
    minibatch_loss_and_grad,
    train,
    train_contrastive,
)


def small_cfg(**sets):
    cfg = Config()
    cfg.model.hidden = 6
    cfg.train.epochs = 2
    cfg.train.batch_size = 4
    for k, v in sets.items():
        cfg.set(k.replace("__", "."), v)
    return cfg.validate()


def pairs_for(seed, count=4, n=(3, 6), d=3):
    return generate_synthetic_pairs(count, n, d=d, edit_budget=2, seed=seed)


def reference_loss(model, quads):
    """Per-graph composition of encode, interactions and contrastive loss."""
    ic = model.icfg
    total = 0.0
    for q in quads:
        h = [encode(g, model.gcn) for g in q]
        if ic.cross_view:
            hat = [cross_view_interact(h[k], h[k ^ 1], ic.aggregate) for k in range(4)]
        else:
            hat = h
        z = [cross_graph_interact(hat[k], hat[2 if k < 2 else 0], hat[3 if k < 2 else 1], ic) for k in range(4)]
        total += contrastive_loss(z[0], z[1], ic.tau, ic.negatives).item()
        total += contrastive_loss(z[2], z[3], ic.tau, ic.negatives).item()
    return total / len(quads)


@pytest.mark.parametrize(
    "sets",
    [
        {},
        {"model__aggregate": "sum"},
        {"model__cross_view": "false"},
        {"model__cross_graph": "false"},
        {"model__cross_graph_mode": "scalar"},
        {"loss__negatives": "inter_only", "loss__tau": "0.2"},
    ],
)
def test_batched_loss_matches_per_graph_composition(sets):
    cfg = small_cfg(**sets)
    pairs = pairs_for(0)
    model = CGMN(cfg, 3)
    quads = model.training_quads(pairs, AugmentConfig(0.0, 0.3, seed=1), salt=0)
    got = model.loss(build_batch(quads, cfg.loss.negatives)).item()
    assert got == pytest.approx(reference_loss(model, quads), rel=1e-12)


def test_embedding_dimension():
    cfg = small_cfg()
    model = CGMN(cfg, 3)
    z1, _ = model.embed_pairs(pairs_for(1, 2))
    assert z1.shape == (2, model.embedding_dim) == (2, 36)
    assert CGMN(small_cfg(model__cross_graph_mode="scalar"), 3).embedding_dim == 14


def test_full_loss_gradient_check():
    rng = np.random.default_rng(3)
    cfg = small_cfg()
    cfg.model.hidden = 4
    pairs = [GraphPair(random_graph(rng, int(rng.integers(3, 7)), 4, f"a{i}"), random_graph(rng, int(rng.integers(3, 7)), 4, f"b{i}")) for i in range(3)]
    model = CGMN(cfg, 4)
    batch = build_batch(model.training_quads(pairs, AugmentConfig(0.0, 0.1, seed=2), 0))
    rep = dc.grad_check_params(lambda: model.loss(batch), model.encoder_params(), eps=1e-4, tol=1e-4, floor=1e-6, order=4)
    assert rep.passed, rep


@pytest.mark.parametrize("seed", range(3))
def test_graph_embedding_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    model = CGMN(small_cfg(), 3)
    g1, g2 = random_graph(rng, 6, 3, "a"), random_graph(rng, 5, 3, "b")
    p1, p2 = rng.permutation(6), rng.permutation(5)
    za, zb = model.embed_pairs([GraphPair(g1, g2)])
    zc, zd = model.embed_pairs([GraphPair(g1.permute(p1), g2.permute(p2))])
    np.testing.assert_allclose(za.data, zc.data, atol=1e-12)
    np.testing.assert_allclose(zb.data, zd.data, atol=1e-12)


def test_batch_of_two_equals_average_of_singles():
    cfg = small_cfg()
    pairs = pairs_for(4, 2)
    model = CGMN(cfg, 3)
    quads = model.training_quads(pairs, AugmentConfig(0.1, 0.1, seed=0), 0)
    params = model.encoder_params()

    def grads(qs):
        for p in params:
            p.zero_grad()
        minibatch_loss_and_grad(model, qs, "both", chunk=2)
        return [p.grad.copy() for p in params]

    g_pair = grads(quads)
    g_avg = [(a + b) / 2 for a, b in zip(grads(quads[:1]), grads(quads[1:]))]
    before = [p.data.copy() for p in params]
    grads(quads)
    SGD(params, 0.5).step()
    for p, b0, g in zip(params, before, g_avg):
        np.testing.assert_allclose(p.data, b0 - 0.5 * g, rtol=0, atol=1e-12)
    for a, b in zip(g_pair, g_avg):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_chunking_does_not_change_gradients():
    cfg = small_cfg()
    model = CGMN(cfg, 3)
    quads = model.training_quads(pairs_for(5, 5), AugmentConfig(0.1, 0.1, seed=0), 0)
    params = model.encoder_params()
    out = []
    for chunk in (1, 2, 5):
        for p in params:
            p.zero_grad()
        loss = minibatch_loss_and_grad(model, quads, "both", chunk)
        out.append((loss, [p.grad.copy() for p in params]))
    for loss, gs in out[1:]:
        assert loss == pytest.approx(out[0][0], rel=1e-12)
        for a, b in zip(gs, out[0][1]):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("seed", [6, 7, 8])
def test_single_pair_overfits(seed):
    # mean aggregation; with literal sums the loss saturates near its start value
    cfg = small_cfg(train__epochs="200", augment__p_mask="0", augment__p_drop="0", model__aggregate="mean", loss__negatives="inter_only", loss__tau="0.2")
    cfg.model.hidden = 100
    hist = train_contrastive(CGMN(cfg, 3), pairs_for(seed, 1, n=(6, 6)))
    assert hist[-1] <= 0.8 * hist[0]


def test_training_is_deterministic_and_round_trips(tmp_path):
    cfg = small_cfg()
    cfg.calibrate.label_fraction = 0.5
    pairs = pairs_for(7, 6)
    a, b = train(pairs, cfg), train(pairs, cfg.copy())
    assert a.dumps() == b.dumps()
    a.save(tmp_path / "c.json")
    back = Checkpoint.load(tmp_path / "c.json")
    assert back.dumps() == a.dumps()
    assert dumps_report(evaluate(back, pairs)) == dumps_report(evaluate(a, pairs))
    assert dumps_report(evaluate(a, pairs)) == dumps_report(evaluate(a, pairs))


def test_checkpoint_records_defaults():
    ck = train(pairs_for(8, 3), small_cfg(calibrate__label_fraction="1.0"))
    assert ck.config["train"]["lr"] == 1e-4 and ck.config["model"]["layers"] == 3
    assert len(ck.loss_history) == 2 and len(ck.gcn) == 3


def test_ablation_changes_metrics():
    pairs = pairs_for(9, 8)
    base = small_cfg(calibrate__label_fraction="0.5")
    full = evaluate(train(pairs, base), pairs)
    abl = evaluate(train(pairs, small_cfg(calibrate__label_fraction="0.5", model__cross_graph="false")), pairs)
    assert full["mse"] != abl["mse"]


def test_zero_ged_pairs_against_constant_one_predictor():
    g = Graph.from_edges(3, [(0, 1)], id="a")
    h = Graph.from_edges(4, [(0, 1)], id="b")
    truth = ged_targets([GraphPair(g, g, ged=0), GraphPair(h, h, ged=0)])
    assert mse(np.ones(2), truth) == 0.0


def test_ged_report_fields():
    pairs = pairs_for(10, 6)
    rep = evaluate(train(pairs, small_cfg(calibrate__label_fraction="0.5")), pairs)
    assert {"mse", "rho", "tau", "p_at"} <= set(rep) and set(rep["p_at"]) == {"10", "20"}


def test_bsd_evaluation_and_label_mismatch():
    from cgmn.augment import generate_bsd_pairs

    pairs = generate_bsd_pairs(8, (4, 6), d=3, seed=0)
    ck = train(pairs, small_cfg(train__task="bsd"))
    rep = evaluate(ck, pairs)
    assert 0 <= rep["auc"] <= 1 and "mse" not in rep
    with pytest.raises(TaskLabelError):
        evaluate(ck, pairs, task="ged")


def test_divergence_reports_batch():
    # a huge plain-SGD step blows the weights up, so the next forward pass overflows
    cfg = small_cfg(train__optimizer="sgd", train__lr="1e300")
    with pytest.raises(DivergenceError) as exc:
        train_contrastive(CGMN(cfg, 3), pairs_for(3, 4))
    assert exc.value.epoch == 1 and sorted(exc.value.batch) == [0, 1, 2, 3]
    assert "epoch 1" in str(exc.value)
