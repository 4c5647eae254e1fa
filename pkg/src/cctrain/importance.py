"""Per-sample importance coefficients and replay selection.

The joint objective over a batch ``D`` is::

    L(theta, beta) = 1/|D| * sum_i [ beta_i**2 * L_i(theta) + lam * (beta_i - 1)**2 ]

``theta`` sees it as a ``beta**2``-weighted cross-entropy; ``beta`` sees the
per-sample losses as constants and takes plain gradient steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .dataset import PrefixTable
from .errors import ContractError, DomainError

BETA_MAX = 10.0
POLARITIES = ("as_written", "narrative")
REPLAY_MODES = ("threshold", "fraction", "none")


@dataclass
class ImportanceTable:
    beta: dict[int, float] = field(default_factory=dict)
    lam: float = 0.1
    lr_beta: float = 0.05
    polarity: str = "as_written"
    beta_max: float = BETA_MAX

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise DomainError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")

    @classmethod
    def fresh(cls, sample_ids: Iterable[int], **kwargs) -> "ImportanceTable":
        return cls({int(i): 1.0 for i in sample_ids}, **kwargs)

    def __len__(self) -> int:
        return len(self.beta)

    def __contains__(self, sample_id) -> bool:
        return sample_id in self.beta

    def values(self, ids: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self.beta[int(i)] for i in ids], dtype=np.float64)
        except KeyError as exc:
            raise ContractError(f"sample {exc.args[0]} missing from importance table") from None

    def restricted(self, ids: Iterable[int], default: float = 1.0) -> "ImportanceTable":
        """Table over exactly ``ids``; known samples keep their beta."""
        beta = {int(i): self.beta.get(int(i), default) for i in ids}
        return ImportanceTable(beta, self.lam, self.lr_beta, self.polarity, self.beta_max)

    def snapshot(self) -> dict[int, float]:
        return dict(self.beta)


def _split(per_sample_losses: Mapping[int, float]) -> tuple[list[int], np.ndarray]:
    ids = list(per_sample_losses)
    return ids, np.array([per_sample_losses[i] for i in ids], dtype=np.float64)


def importance_objective(per_sample_losses: Mapping[int, float], table: ImportanceTable) -> float:
    ids, losses = _split(per_sample_losses)
    if not ids:
        raise ContractError("empty batch")
    if not np.isfinite(losses).all():
        raise ContractError("per-sample losses must be finite")
    b = table.values(ids)
    return float(np.mean(b * b * losses + table.lam * (b - 1.0) ** 2))


def importance_gradient(per_sample_losses: Mapping[int, float], table: ImportanceTable) -> dict[int, float]:
    """d objective / d beta_i for the polarity of ``table``.

    ``narrative`` flips the sign of the loss term, so hard samples gain beta.
    """
    ids, losses = _split(per_sample_losses)
    b = table.values(ids)
    sign = 1.0 if table.polarity == "as_written" else -1.0
    g = (sign * 2.0 * b * losses + 2.0 * table.lam * (b - 1.0)) / len(ids)
    return dict(zip(ids, g.tolist()))


def update_importance(
    table: ImportanceTable,
    per_sample_losses: Mapping[int, float],
    lr_beta: float | None = None,
) -> ImportanceTable:
    """One descent step on every beta in the batch, clamped to [0, beta_max].

    Mutates and returns ``table``.
    """
    lr = table.lr_beta if lr_beta is None else lr_beta
    for i, g in importance_gradient(per_sample_losses, table).items():
        table.beta[i] = min(max(table.beta[i] - lr * g, 0.0), table.beta_max)
    return table


def importance_threshold(table: ImportanceTable) -> float:
    if not table.beta:
        raise ContractError("importance table is empty")
    return float(np.mean(list(table.beta.values())))


@dataclass(frozen=True)
class ReplaySelection:
    ids: tuple[int, ...]
    epsilon: float | None
    fraction: float | None

    def __len__(self) -> int:
        return len(self.ids)


def select_replay(table: ImportanceTable, mode: str = "threshold", M: int = 1) -> ReplaySelection:
    """Samples to carry into the next stage.

    ``threshold`` keeps beta strictly above the table mean; ``fraction`` keeps
    the ceil(|table| / M) largest betas, ties broken by ascending id.
    """
    if mode not in REPLAY_MODES:
        raise DomainError(f"replay mode must be one of {REPLAY_MODES}, got {mode!r}")
    if mode == "none" or not table.beta:
        return ReplaySelection((), None, None)
    if mode == "threshold":
        eps = importance_threshold(table)
        return ReplaySelection(tuple(sorted(i for i, b in table.beta.items() if b > eps)), eps, None)
    if M < 1:
        raise ContractError(f"M must be >= 1 in fraction mode, got {M}")
    k = math.ceil(len(table.beta) / M)
    ranked = sorted(table.beta.items(), key=lambda kv: (-kv[1], kv[0]))
    return ReplaySelection(tuple(sorted(i for i, _ in ranked[:k])), None, 1.0 / M)


def export_beta_csv(table: ImportanceTable, prefixes: PrefixTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "series_id", "t", "beta"])
        for i in sorted(table.beta):
            sid, t = prefixes.sample_key(i)
            w.writerow([i, sid, t, repr(table.beta[i])])
