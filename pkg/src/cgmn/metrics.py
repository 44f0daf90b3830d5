"""Evaluation metrics: MSE, Spearman rho, Kendall tau-b, precision@k, ROC AUC."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class DegenerateInputError(ValueError):
    pass


def _pair(pred, truth, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {p.size}")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def spearman_rho(pred, truth) -> float:
    """Pearson correlation of average ranks."""
    p, t = _pair(pred, truth, 2)
    rp, rt = rankdata(p) - (p.size + 1) / 2, rankdata(t) - (t.size + 1) / 2
    denom = np.sqrt((rp @ rp) * (rt @ rt))
    if denom == 0:
        raise DegenerateInputError("spearman_rho undefined for constant input")
    return float((rp @ rt) / denom)


def kendall_tau(pred, truth) -> float:
    """Kendall tau-b: (C - D) / sqrt((n0 - n1)(n0 - n2))."""
    p, t = _pair(pred, truth, 2)
    sp = np.sign(p[:, None] - p[None, :])
    st = np.sign(t[:, None] - t[None, :])
    iu = np.triu_indices(p.size, 1)
    sp, st = sp[iu], st[iu]
    denom = np.sqrt(np.count_nonzero(sp) * np.count_nonzero(st))
    if denom == 0:
        raise DegenerateInputError("kendall_tau undefined for constant input")
    return float(np.sum(sp * st) / denom)


@dataclass
class RankedQueryResult:
    query_id: str
    candidate_ids: list[str]
    predicted: list[float]
    truth: list[float]

    def __post_init__(self):
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise ValueError(f"query {self.query_id}: duplicate candidate ids")
        if not (len(self.candidate_ids) == len(self.predicted) == len(self.truth)):
            raise ValueError(f"query {self.query_id}: ragged candidate lists")
        if not np.all(np.isfinite(self.predicted)) or not np.all(np.isfinite(self.truth)):
            raise ValueError(f"query {self.query_id}: non-finite score")


def top_k(ids: Sequence[str], scores: Sequence[float], k: int) -> list[str]:
    """Highest scores first; equal scores ordered by id."""
    return [i for _, i in sorted(zip((-s for s in scores), ids))[:k]]


def precision_at_k(result: RankedQueryResult, k: int) -> float:
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(result.candidate_ids):
        raise ValueError(f"k={k} exceeds {len(result.candidate_ids)} candidates of query {result.query_id}")
    pred = set(top_k(result.candidate_ids, result.predicted, k))
    true = set(top_k(result.candidate_ids, result.truth, k))
    return len(pred & true) / k


def mean_precision_at_k(results: Sequence[RankedQueryResult], k: int) -> float | None:
    """Average over queries having at least ``k`` candidates; None if none do."""
    vals = [precision_at_k(r, k) for r in results if len(r.candidate_ids) >= k]
    return float(np.mean(vals)) if vals else None


def auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties counted 1/2."""
    s, lab = _pair(scores, labels)
    if not np.all(np.isin(lab, (1, -1))):
        raise ValueError("labels must be 1 or -1")
    pos = lab == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("auc needs both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
