"""Training loop, optimisers, calibration fitting, evaluation and checkpoints."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import diffcore as dc
from .augment import AugmentConfig
from .config import Config, from_dict
from .encoder import GcnParams
from .graph import GraphPair
from .heads import MlpParams, calibrate, ged_head, normalized_ged
from .metrics import RankedQueryResult, auc, kendall_tau, mean_precision_at_k, mse, spearman_rho
from .model import CGMN, build_batch

CHECKPOINT_VERSION = 1


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, batch: list[int], cause: str):
        super().__init__(f"loss diverged at epoch {epoch}, batch pairs {batch}: {cause}")
        self.epoch = epoch
        self.batch = batch


class TaskLabelError(ValueError):
    pass


class Adam:
    def __init__(self, params: Sequence[dc.Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: Sequence[dc.Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


def make_optimizer(cfg: Config, params):
    t = cfg.train
    if t.optimizer == "adam":
        return Adam(params, t.lr, t.beta1, t.beta2, t.eps)
    return SGD(params, t.lr)


@dataclass
class Checkpoint:
    config: dict
    in_dim: int
    gcn: list[list[list[float]]]
    head_weights: list
    head_biases: list
    calibration: dict | None = None
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION
    code_version: str = __version__

    @classmethod
    def from_model(cls, model: CGMN, epoch: int, history: list[float]) -> Checkpoint:
        cal = None
        if model.calibration is not None:
            cal = {"weights": [w.data.tolist() for w in model.calibration.weights], "biases": [b.data.tolist() for b in model.calibration.biases]}
        return cls(
            config=model.cfg.to_dict(),
            in_dim=model.gcn.in_dim,
            gcn=[w.data.tolist() for w in model.gcn.layers],
            head_weights=[w.data.tolist() for w in model.head.weights],
            head_biases=[b.data.tolist() for b in model.head.biases],
            calibration=cal,
            epoch=epoch,
            loss_history=list(history),
        )

    def to_model(self) -> CGMN:
        cfg = from_dict(self.config)
        gcn = GcnParams([dc.Tensor(w, requires_grad=True) for w in self.gcn], cfg.model.activation)
        head = MlpParams([dc.Tensor(w, requires_grad=True) for w in self.head_weights], [dc.Tensor(b, requires_grad=True) for b in self.head_biases])
        model = CGMN(cfg, self.in_dim, gcn=gcn, head=head)
        if self.calibration is not None:
            model.calibration = MlpParams(
                [dc.Tensor(w, requires_grad=True) for w in self.calibration["weights"]],
                [dc.Tensor(b, requires_grad=True) for b in self.calibration["biases"]],
            )
        return model

    def dumps(self) -> str:
        body = {k: getattr(self, k) for k in ("version", "code_version", "config", "in_dim", "epoch", "loss_history", "gcn", "head_weights", "head_biases", "calibration")}
        return json.dumps(body, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> Checkpoint:
        body = json.loads(Path(path).read_text())
        if body.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {body.get('version')!r}")
        return cls(**body)


# ---------------------------------------------------------------------------
# training


def minibatch_loss_and_grad(model: CGMN, quads, negatives: str, chunk: int) -> float:
    """Average contrastive loss over ``quads``; gradients accumulate on the encoder weights."""
    total = 0.0
    for start in range(0, len(quads), chunk):
        part = quads[start:start + chunk]
        loss = model.loss(build_batch(part, negatives)) * (len(part) / len(quads))
        loss.backward()
        total += loss.item()
    return total


def train_contrastive(
    model: CGMN,
    pairs: Sequence[GraphPair],
    epochs: int | None = None,
    log: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Self-supervised training of the encoder; returns the per-epoch mean loss."""
    cfg = model.cfg
    epochs = cfg.train.epochs if epochs is None else epochs
    aug = AugmentConfig(cfg.augment.p_mask, cfg.augment.p_drop, cfg.augment_seed, cfg.augment.mask_mode)
    params = model.encoder_params()
    opt = make_optimizer(cfg, params)
    rng = np.random.default_rng([cfg.seed, 17])
    bs = cfg.train.batch_size
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(pairs), bs):
            idx = [int(i) for i in order[start:start + bs]]
            for p in params:
                p.zero_grad()
            try:
                quads = model.training_quads([pairs[i] for i in idx], aug, salt=epoch)
                batch_loss = minibatch_loss_and_grad(model, quads, cfg.loss.negatives, cfg.train.chunk)
            except FloatingPointError as exc:
                raise DivergenceError(epoch, idx, str(exc)) from exc
            if not math.isfinite(batch_loss):
                raise DivergenceError(epoch, idx, "non-finite loss")
            opt.step()
            epoch_loss += batch_loss * len(idx)
        history.append(epoch_loss / len(pairs))
        if log is not None:
            log(epoch, history[-1])
    return history


def contrastive_loss_value(model: CGMN, pairs: Sequence[GraphPair], salt: int = 0) -> float:
    cfg = model.cfg
    aug = AugmentConfig(cfg.augment.p_mask, cfg.augment.p_drop, cfg.augment_seed, cfg.augment.mask_mode)
    quads = model.training_quads(pairs, aug, salt)
    return sum(model.loss(build_batch(quads[i:i + cfg.train.chunk], cfg.loss.negatives)).item() * len(quads[i:i + cfg.train.chunk]) for i in range(0, len(quads), cfg.train.chunk)) / len(quads)


def labelled_subset(pairs: Sequence[GraphPair], cfg: Config) -> list[GraphPair]:
    labelled = [p for p in pairs if p.ged is not None]
    if not labelled:
        raise TaskLabelError("GED calibration needs pairs with ged labels")
    count = max(cfg.calibrate.min_labels, math.ceil(cfg.calibrate.label_fraction * len(labelled)))
    count = min(count, len(labelled))
    rng = np.random.default_rng([cfg.seed, 29])
    idx = sorted(rng.choice(len(labelled), size=count, replace=False).tolist())
    return [labelled[i] for i in idx]


def ged_targets(pairs: Sequence[GraphPair]) -> np.ndarray:
    if any(p.ged is None for p in pairs):
        raise TaskLabelError("GED evaluation needs every pair to carry a ged label")
    return np.array([normalized_ged(p.ged, p.g1.n, p.g2.n) for p in pairs])


def fit_ged_head(model: CGMN, pairs: Sequence[GraphPair], iters: int = 500) -> None:
    """Fit the MLP head on labelled pairs with the encoder frozen."""
    z1, z2 = model.embed_pairs(pairs)
    z1, z2 = dc.Tensor(z1.data), dc.Tensor(z2.data)
    y = ged_targets(pairs).reshape(-1, 1)
    params = model.head.tensors()
    opt = Adam(params, 1e-3)
    for _ in range(iters):
        for p in params:
            p.zero_grad()
        err = ged_head(z1, z2, model.head, model.cfg.head.symmetrize) - y
        (dc.sum_all(err * err) * (1.0 / len(y))).backward()
        opt.step()


def fit_calibration(model: CGMN, train_pairs: Sequence[GraphPair]) -> list[GraphPair]:
    """Fit the score calibration on the labelled fraction of ``train_pairs``."""
    subset = labelled_subset(train_pairs, model.cfg)
    model.calibration = None
    if model.cfg.head.ged_score == "mlp":
        fit_ged_head(model, subset)
    model.calibration = calibrate(model.raw_scores(subset), ged_targets(subset), seed=model.cfg.seed + 2, l2=model.cfg.calibrate.l2)
    return subset


def train(pairs: Sequence[GraphPair], cfg: Config, log=None) -> Checkpoint:
    cfg.validate()
    if not pairs:
        raise ValueError("no training pairs")
    dims = {g.d for p in pairs for g in (p.g1, p.g2)}
    if len(dims) != 1:
        raise ValueError(f"incompatible feature dimensions {sorted(dims)}")
    model = CGMN(cfg, dims.pop())
    history = train_contrastive(model, pairs, log=log)
    if cfg.train.task == "ged":
        fit_calibration(model, pairs)
    return Checkpoint.from_model(model, cfg.train.epochs, history)


# ---------------------------------------------------------------------------
# evaluation


def query_results(pairs: Sequence[GraphPair], pred: np.ndarray, truth: np.ndarray) -> list[RankedQueryResult]:
    """Each graph queries every graph it is paired with (pairs count in both directions)."""
    cands: dict[str, dict[str, tuple[float, float]]] = defaultdict(dict)
    for p, yp, yt in zip(pairs, pred, truth):
        if p.g1.id == p.g2.id:
            continue
        cands[p.g1.id][p.g2.id] = (float(yp), float(yt))
        cands[p.g2.id][p.g1.id] = (float(yp), float(yt))
    out = []
    for q in sorted(cands):
        ids = sorted(cands[q])
        out.append(RankedQueryResult(q, ids, [cands[q][i][0] for i in ids], [cands[q][i][1] for i in ids]))
    return out


def ged_report(pred: np.ndarray, truth: np.ndarray, pairs: Sequence[GraphPair], ks=(10, 20)) -> dict:
    queries = query_results(pairs, pred, truth)
    return {
        "task": "ged",
        "n_pairs": len(pairs),
        "mse": mse(pred, truth),
        "rho": spearman_rho(pred, truth),
        "tau": kendall_tau(pred, truth),
        "p_at": {str(k): mean_precision_at_k(queries, k) for k in ks},
    }


def evaluate(model: CGMN | Checkpoint, pairs: Sequence[GraphPair], task: str | None = None) -> dict:
    if isinstance(model, Checkpoint):
        model = model.to_model()
    task = task or model.cfg.train.task
    if task == "ged":
        truth = ged_targets(pairs)
        if model.calibration is None:
            raise TaskLabelError("checkpoint has no GED calibration; train it with train.task = 'ged'")
        return ged_report(model.predict_ged(pairs), truth, pairs)
    if task == "bsd":
        if any(p.bsd_label is None for p in pairs):
            raise TaskLabelError("AUC needs every pair to carry a +1/-1 label")
        scores = model.raw_scores(pairs)
        labels = [p.bsd_label for p in pairs]
        thr = model.cfg.head.bsd_threshold
        acc = float(np.mean([(1 if s > thr else -1) == lab for s, lab in zip(scores, labels)]))
        return {"task": "bsd", "n_pairs": len(pairs), "auc": auc(scores, labels), "accuracy": acc}
    raise TaskLabelError(f"unknown task {task!r}")


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
