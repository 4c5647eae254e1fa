"""AUC-ROC, prefix profiles, transfer metrics, and prediction intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import PrefixTable, TimeSeries
from .errors import ContractError, UndefinedMetricError
from .model import ModelParams, init_params, predict_proba

DECILES = tuple(range(10, 101, 10))


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2 over all pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels must have equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_from_proba(probs: np.ndarray, labels: np.ndarray) -> float:
    """Binary AUC on the class-1 probability; one-vs-rest macro for C > 2."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    C = probs.shape[1]
    if C == 2:
        return auc_roc(probs[:, 1], labels == 1)
    present = [c for c in range(C) if 0 < np.sum(labels == c) < labels.size]
    if not present:
        raise UndefinedMetricError("AUC-ROC needs at least two classes present")
    return float(np.mean([auc_roc(probs[:, c], labels == c) for c in present]))


def _safe_auc(probs, labels) -> float:
    try:
        return auc_from_proba(probs, labels)
    except UndefinedMetricError:
        return float("nan")


# ------------------------------------------------------------ prefix profile


@dataclass(frozen=True)
class PrefixProfile:
    values: tuple[float, ...]  # AUC at 10%, 20%, ..., 100%

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def as_dict(self) -> dict[int, float]:
        return dict(zip(DECILES, self.values))


def decile_length(k: int, T: int) -> int:
    return max(1, (k * T) // 100)


def prefix_profile(params: ModelParams, test: Sequence[TimeSeries] | PrefixTable) -> PrefixProfile:
    table = test if isinstance(test, PrefixTable) else PrefixTable.from_series(list(test))
    if len(table.series_ids) == 0:
        raise ContractError("test split is empty")
    offsets = np.concatenate([[0], np.cumsum(table.lengths)[:-1]])
    ids = np.concatenate(
        [offsets + np.array([decile_length(k, T) for T in table.lengths]) - 1 for k in DECILES]
    )
    probs = predict_proba(params, table, ids).reshape(len(DECILES), len(table.series_ids), -1)
    return PrefixProfile(tuple(auc_from_proba(p, table.series_labels) for p in probs))


# ------------------------------------------------------- accuracy matrix, BWT


@dataclass(frozen=True)
class AccuracyMatrix:
    R: np.ndarray  # R[i, j]: AUC on task j after training stage i
    b: np.ndarray  # AUC of randomly initialised models per task

    @property
    def M(self) -> int:
        return self.R.shape[0]


def bucket_accuracy(params: ModelParams, table: PrefixTable, ids: np.ndarray) -> float:
    ids = np.asarray(ids, dtype=int)
    return _safe_auc(predict_proba(params, table, ids), table.sample_label[ids])


def random_baseline(
    table: PrefixTable,
    tasks: Sequence[np.ndarray],
    input_dim: int,
    hidden: int,
    class_count: int,
    seeds: Sequence[int],
) -> np.ndarray:
    """Per-task AUC averaged over untrained models drawn from ``seeds``."""
    rows = []
    for s in seeds:
        p = init_params(input_dim, hidden, class_count, s)
        rows.append([bucket_accuracy(p, table, ids) for ids in tasks])
    return np.nanmean(np.array(rows), axis=0)


def accuracy_matrix(
    checkpoints: Sequence[ModelParams],
    table: PrefixTable,
    tasks: Sequence[np.ndarray],
    baseline: np.ndarray,
) -> AccuracyMatrix:
    """``tasks`` are the bucket sample ids in training order."""
    if len(checkpoints) != len(tasks):
        raise ContractError("need one checkpoint per task")
    R = np.array([[bucket_accuracy(p, table, ids) for ids in tasks] for p in checkpoints])
    return AccuracyMatrix(R, np.asarray(baseline, dtype=np.float64))


def transfer_metrics(acc: AccuracyMatrix) -> tuple[float, float]:
    """(BWT, FWT) of an accuracy matrix."""
    R, b = np.asarray(acc.R, dtype=np.float64), np.asarray(acc.b, dtype=np.float64)
    M = R.shape[0]
    if M < 2:
        raise ContractError(f"transfer metrics need M >= 2 tasks, got {M}")
    bwt = sum(R[M - 1, i] - R[i, i] for i in range(M - 1)) / (M - 1)
    fwt = sum(R[i - 1, i] - b[i] for i in range(1, M)) / (M - 1)
    return float(bwt), float(fwt)


# --------------------------------------------------------- prediction interval


def prediction_interval(
    samples: np.ndarray,
    alpha: float,
    heldout: np.ndarray | None = None,
) -> tuple[np.ndarray, float | None]:
    """Per-point ``[q(alpha/2), q(1 - alpha/2)]`` of K predictive samples.

    ``samples`` has shape ``(n, K)``; quantiles interpolate linearly between
    order statistics. With ``heldout`` (one independent score per point) the
    fraction of scores outside their interval is returned as well.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] < 10:
        raise ContractError("need an (n, K) sample array with K >= 10")
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")
    lo = np.quantile(samples, alpha / 2.0, axis=1)
    hi = np.quantile(samples, 1.0 - alpha / 2.0, axis=1)
    intervals = np.stack([lo, hi], axis=1)
    if heldout is None:
        return intervals, None
    heldout = np.asarray(heldout, dtype=np.float64)
    outside = (heldout < lo) | (heldout > hi)
    return intervals, float(outside.mean())
