"""Model, data and total uncertainty, confidence, and the plateau stop rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import PrefixTable
from .errors import ContractError, DomainError
from .importance import ImportanceTable
from .model import ModelParams, head_proba, hidden_states, mc_proba, mc_proba_from_hidden

VARIANTS = ("literal", "entropy")
CONFIDENCE_EPS = 1e-6
_LOG_FLOOR = float(np.log(1e-12))


def model_uncertainty(
    params: ModelParams,
    table: PrefixTable,
    ids: np.ndarray,
    K: int,
    keep_rate: float,
    seed: int,
) -> float:
    """Mean over prefixes of the unbiased variance of the true-class probability
    across K dropout passes."""
    if K < 2:
        raise ContractError(f"model uncertainty needs K >= 2, got {K}")
    ids = np.asarray(ids, dtype=int)
    if ids.size == 0:
        raise ContractError("empty bucket")
    probs = mc_proba(params, table, ids, K, keep_rate, seed)
    return _true_class_variance(probs, table.sample_label[ids])


def _true_class_variance(probs: np.ndarray, labels: np.ndarray) -> float:
    p_true = probs[:, np.arange(labels.size), labels]  # (K, n)
    # shifting by the first pass leaves the variance unchanged and makes
    # identical passes give exactly zero
    return float(np.mean(np.var(p_true - p_true[0], axis=0, ddof=1)))


def data_uncertainty_batch(probs: np.ndarray, beta: np.ndarray, variant: str = "literal") -> np.ndarray:
    """Per-row importance-aware data uncertainty for ``probs`` of shape ``(n, C)``.

    ``literal``: beta/C * sum_c p ln(1 - p), with ln(1 - p) floored at ln 1e-12.
    ``entropy``: beta/C * sum_c -p ln p.
    """
    probs = np.asarray(probs, dtype=np.float64)
    C = probs.shape[-1]
    if variant == "literal":
        with np.errstate(divide="ignore"):
            terms = probs * np.maximum(np.log1p(-probs), _LOG_FLOOR)
    elif variant == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(probs > 0, -probs * np.log(probs), 0.0)
    else:
        raise DomainError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return np.asarray(beta, dtype=np.float64) / C * terms.sum(axis=-1)


def data_uncertainty(prob, beta: float, class_count: int, variant: str = "literal") -> float:
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != (class_count,):
        raise ContractError(f"expected a distribution over {class_count} classes")
    if beta < 0:
        raise DomainError("beta must be non-negative")
    return float(data_uncertainty_batch(prob[None, :], np.array([beta]), variant)[0])


def minmax_mean(values: np.ndarray) -> float:
    """Mean of ``values`` after min-max scaling onto [0, 1]; 0.5 when constant."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return 0.5
    return float(np.mean((values - lo) / (hi - lo)))


def confidence(u_total: float) -> float:
    return 1.0 / (u_total + CONFIDENCE_EPS)


@dataclass(frozen=True)
class UncertaintyReport:
    u_model: float
    u_data_mean: float
    u_data_norm: float
    u_data_per_sample: dict[int, float] = field(repr=False)
    u_total: float
    confidence: float
    variant: str
    K: int
    keep_rate: float

    def to_record(self) -> dict:
        return {
            "u_model": self.u_model,
            "u_data_mean": self.u_data_mean,
            "u_data_norm": self.u_data_norm,
            "u_total": self.u_total,
            "confidence": self.confidence,
            "variant": self.variant,
            "K": self.K,
            "keep_rate": self.keep_rate,
        }


def total_uncertainty(
    params: ModelParams,
    table: PrefixTable,
    ids: np.ndarray,
    importance: ImportanceTable,
    K: int = 20,
    keep_rate: float = 0.9,
    variant: str = "literal",
    seed: int = 0,
) -> UncertaintyReport:
    """Model uncertainty plus min-max-normalised mean data uncertainty.

    Data uncertainty uses the deterministic (no-dropout) predictive
    distribution and each sample's current beta.
    """
    if K < 2:
        raise ContractError(f"total uncertainty needs K >= 2, got {K}")
    ids = np.asarray(ids, dtype=int)
    if ids.size == 0:
        raise ContractError("empty bucket")
    beta = importance.values(ids)
    h = hidden_states(params, table, ids)
    u_model = _true_class_variance(mc_proba_from_hidden(params, h, K, keep_rate, seed), table.sample_label[ids])
    u_data = data_uncertainty_batch(head_proba(params, h), beta, variant)
    norm = minmax_mean(u_data)
    u_total = u_model + norm
    return UncertaintyReport(
        u_model=u_model,
        u_data_mean=float(u_data.mean()),
        u_data_norm=norm,
        u_data_per_sample=dict(zip(ids.tolist(), u_data.tolist())),
        u_total=u_total,
        confidence=confidence(u_total),
        variant=variant,
        K=K,
        keep_rate=keep_rate,
    )


@dataclass
class ConfidenceHistory:
    patience: int = 5
    min_delta: float = 1e-3
    epoch_cap: int = 200
    values: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.patience < 1:
            raise ContractError(f"patience must be >= 1, got {self.patience}")

    def append(self, value: float) -> None:
        self.values.append(float(value))

    def clear(self) -> None:
        self.values.clear()


def should_stop(history: ConfidenceHistory) -> bool:
    """True once the best confidence has gone ``patience`` epochs without
    improving by more than ``min_delta``, or the epoch cap is reached."""
    values = history.values
    if len(values) >= history.epoch_cap:
        return True
    best, stale = -np.inf, 0
    for v in values:
        if v > best + history.min_delta:
            best, stale = v, 0
        else:
            stale += 1
    return stale >= history.patience
