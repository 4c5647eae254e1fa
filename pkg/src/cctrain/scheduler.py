"""Pre-training, baby-step construction, ordering, and staged training.

The pipeline is:

1. :func:`pretrain` fits a throwaway teacher on prefix lengths 1..T in
   order, learning a beta per prefix, and scores every prefix's data
   uncertainty under the teacher.
2. :func:`build_buckets` partitions the prefixes into M baby steps of
   increasing data uncertainty.
3. :func:`run_training` walks the buckets in the chosen order. Each stage
   trains on the buffer until confidence plateaus, then replays the
   high-beta samples into the next stage's buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ORDER_KINDS, RunConfig
from .dataset import PrefixTable
from .errors import ConfigError, ContractError, NumericError, SchedulingError
from .importance import ImportanceTable, ReplaySelection, importance_objective, select_replay, update_importance
from .model import ModelParams, batch_loss_grad, init_params, predict_proba, scaled_mask, sgd_step
from .seeding import derive_seed, stream
from .uncertainty import ConfidenceHistory, data_uncertainty_batch, should_stop, total_uncertainty


def _importance_table(ids, cfg: RunConfig) -> ImportanceTable:
    i = cfg.importance
    return ImportanceTable.fresh(ids, lam=i.lam, lr_beta=i.lr_beta, polarity=i.polarity)


def series_batches(
    table: PrefixTable, ids: np.ndarray, batch_size: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Shuffle the series behind ``ids`` and group them ``batch_size`` at a time.

    Each minibatch holds every requested prefix of its series, so one
    recurrent pass per series serves all of that series' prefixes.
    """
    ids = np.asarray(ids, dtype=int)
    rows = table.sample_series[ids]
    uniq = np.unique(rows)
    rank = np.empty(int(uniq.max()) + 1, dtype=int)
    rank[rng.permutation(uniq)] = np.arange(uniq.size)
    group = rank[rows] // batch_size
    order = np.lexsort((ids, group))
    cuts = np.flatnonzero(np.diff(group[order])) + 1
    return np.split(ids[order], cuts)


def train_epoch(
    params: ModelParams,
    table: PrefixTable,
    ids: np.ndarray,
    importance: ImportanceTable,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> tuple[ModelParams, float]:
    """One pass of alternating theta / beta steps over ``ids``.

    The theta step descends the beta**2-weighted cross-entropy with beta
    frozen; the beta step then re-evaluates the batch's losses at the new
    theta (same dropout masks) and descends beta with theta frozen.
    Returns the new params and the mean objective before each step.
    """
    m = cfg.model
    objective, n_batches = 0.0, 0
    for batch in series_batches(table, ids, m.batch_size, rng):
        beta = importance.values(batch)
        masks = None
        if m.train_dropout and m.keep_rate < 1.0:
            masks = scaled_mask(rng.random((batch.size, params.hidden)) < m.keep_rate, m.keep_rate)
        res = batch_loss_grad(params, table, batch, beta * beta, masks)
        objective += importance_objective(dict(zip(batch.tolist(), res.per_sample_loss)), importance)
        n_batches += 1
        params = sgd_step(params, res.grad, m.lr)
        after = batch_loss_grad(params, table, batch, np.ones(batch.size), masks, compute_grad=False)
        update_importance(importance, dict(zip(batch.tolist(), after.per_sample_loss.tolist())))
    return params, objective / max(n_batches, 1)


# ------------------------------------------------------------------- pretrain


@dataclass
class PretrainResult:
    """Teacher model plus per-prefix scores, indexed by train sample id."""

    params: ModelParams
    beta: np.ndarray
    u_data: np.ndarray  # beta-weighted data uncertainty (bucketing score)
    u_data_plain: np.ndarray  # same with beta = 1
    loss: np.ndarray  # teacher cross-entropy
    stages: int

    def beta_map(self) -> dict[int, float]:
        return dict(enumerate(self.beta.tolist()))

    def u_data_map(self) -> dict[int, float]:
        return dict(enumerate(self.u_data.tolist()))


def pretrain(table: PrefixTable, cfg: RunConfig, seed: int | None = None) -> PretrainResult:
    """Train the teacher over prefix datasets of increasing length.

    Stage ``t`` holds every train prefix of length ``t`` and runs
    ``curriculum.pretrain_epochs`` epochs of :func:`train_epoch`.
    """
    if len(table) == 0:
        raise ContractError("train split is empty")
    seed = cfg.seeds.model if seed is None else seed
    m = cfg.model
    params = init_params(table.X.shape[2], m.hidden, _class_count(table, cfg), derive_seed(seed, "teacher"))
    importance = _importance_table(range(len(table)), cfg)
    t_max = int(table.sample_t.max())
    for t in range(1, t_max + 1):
        ids = np.flatnonzero(table.sample_t == t)
        try:
            for e in range(cfg.curriculum.pretrain_epochs):
                params, _ = train_epoch(params, table, ids, importance, cfg, stream(seed, "pretrain", t, e))
        except NumericError as exc:
            exc.stage = t
            raise
    all_ids = np.arange(len(table))
    probs = predict_proba(params, table, all_ids)
    beta = importance.values(all_ids)
    ce = -np.log(np.maximum(probs[all_ids, table.sample_label], 1e-12))
    return PretrainResult(
        params=params,
        beta=beta,
        u_data=data_uncertainty_batch(probs, beta, cfg.uncertainty.variant),
        u_data_plain=data_uncertainty_batch(probs, np.ones_like(beta), cfg.uncertainty.variant),
        loss=ce,
        stages=t_max,
    )


def _class_count(table: PrefixTable, cfg: RunConfig) -> int:
    return max(cfg.data.class_count, int(table.series_labels.max(initial=0)) + 1)


# -------------------------------------------------------------------- buckets


@dataclass
class CurriculumBucket:
    index: int
    ids: np.ndarray
    mean_u: float
    min_u: float
    max_u: float
    scores: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.ids.size)


def _scores_from(u_data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(u_data, dict):
        ids = np.array(sorted(u_data), dtype=int)
        return ids, np.array([u_data[i] for i in ids], dtype=np.float64)
    scores = np.asarray(u_data, dtype=np.float64)
    return np.arange(scores.size), scores


def sigma_band_cuts(scores: np.ndarray, M: int) -> np.ndarray:
    """Cut points mu + z * sigma for M - 1 equally spaced z in [-1.5, 1.5]."""
    mu, sigma = float(np.mean(scores)), float(np.std(scores))
    z = np.linspace(-1.5, 1.5, M - 1) if M > 2 else np.zeros(1)
    return mu + z * sigma


def build_buckets(u_data, M: int, mode: str = "quantile") -> list[CurriculumBucket]:
    """Partition samples into baby steps sorted by increasing data uncertainty.

    ``u_data`` is a ``{sample_id: score}`` map or an array indexed by id.
    ``quantile`` makes M equal-frequency buckets (ties by id); ``sigma_band``
    cuts a Gaussian fit at :func:`sigma_band_cuts` and drops empty bands.
    """
    ids, scores = _scores_from(u_data)
    if ids.size == 0:
        raise ContractError("no samples to bucket")
    if M > ids.size:
        raise ConfigError(f"curriculum.M: {M} buckets exceed {ids.size} samples")
    if mode == "quantile":
        if M < 1:
            raise ConfigError(f"curriculum.M: expected >= 1, got {M}")
        order = np.lexsort((ids, scores))
        groups = np.array_split(order, M)
    elif mode == "sigma_band":
        if M < 2:
            raise ConfigError(f"curriculum.M: sigma bands need M >= 2, got {M}")
        band = np.searchsorted(sigma_band_cuts(scores, M), scores, side="right")
        groups = [np.flatnonzero(band == k) for k in range(M)]
        groups = [g for g in groups if g.size]
    else:
        raise ConfigError(f"curriculum.bucket_mode: unknown mode {mode!r}")
    buckets = []
    for k, g in enumerate(groups):
        s = scores[g]
        buckets.append(CurriculumBucket(k + 1, np.sort(ids[g]), float(s.mean()), float(s.min()), float(s.max())))
    return buckets


def order_buckets(
    buckets: Sequence[CurriculumBucket],
    strategy: str,
    teacher: PretrainResult | None = None,
    seed: int = 0,
    prefixes: PrefixTable | None = None,
) -> list[CurriculumBucket]:
    """Arrange buckets by one mean per-bucket score, or shuffle them.

    confidence: beta-weighted teacher data uncertainty (the bucketing score);
    time: mean prefix length; difficulty: teacher cross-entropy;
    uncertainty: teacher data uncertainty with beta = 1.
    """
    if strategy not in ORDER_KINDS:
        raise ConfigError(f"curriculum.order: unknown strategy {strategy!r}")
    buckets = list(buckets)
    if strategy == "random":
        perm = stream(seed, "order").permutation(len(buckets))
        return [buckets[i] for i in perm]
    kind, direction = strategy.rsplit("_", 1)
    for b in buckets:
        if kind in b.scores:
            continue
        if kind == "confidence":
            b.scores[kind] = b.mean_u
        elif kind == "time":
            if prefixes is None:
                raise ConfigError("time ordering needs the prefix table")
            b.scores[kind] = float(prefixes.sample_t[b.ids].mean())
        else:
            if teacher is None:
                raise ConfigError(f"{strategy} ordering needs a pretrained teacher")
            src = teacher.loss if kind == "difficulty" else teacher.u_data_plain
            b.scores[kind] = float(src[b.ids].mean())
    keyed = sorted(buckets, key=lambda b: (b.scores[kind], b.index))
    return keyed if direction == "asc" else keyed[::-1]


# ------------------------------------------------------------------- training


@dataclass
class TrainBuffer:
    ids: np.ndarray
    provenance: dict[int, str]

    @classmethod
    def assemble(cls, bucket: CurriculumBucket, replay: ReplaySelection | None = None) -> "TrainBuffer":
        prov = {int(i): "new" for i in bucket.ids}
        for i in replay.ids if replay else ():
            prov.setdefault(int(i), "replay")
        return cls(np.array(sorted(prov), dtype=int), prov)

    def __len__(self) -> int:
        return int(self.ids.size)

    def count(self, tag: str) -> int:
        return sum(1 for v in self.provenance.values() if v == tag)


@dataclass
class RunLog:
    epochs: list[dict] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    checkpoints: list[ModelParams] = field(default_factory=list)
    tasks: list[np.ndarray] = field(default_factory=list)  # bucket ids in training order
    order: list[int] = field(default_factory=list)  # bucket indices in training order
    beta_tables: list[ImportanceTable] = field(default_factory=list)

    @property
    def total_epochs(self) -> int:
        return sum(s["epochs"] for s in self.stages)

    def records(self) -> list[dict]:
        return sorted(self.epochs + self.stages, key=lambda r: (r["stage"], r.get("epoch", 10**9)))


def run_training(
    params: ModelParams,
    table: PrefixTable,
    buckets: Sequence[CurriculumBucket],
    cfg: RunConfig,
    teacher: PretrainResult | None = None,
    on_record: Callable[[dict], None] | None = None,
) -> tuple[ModelParams, RunLog]:
    """Train ``params`` through the buckets in ``cfg.curriculum.order``.

    ``on_record`` receives each epoch and stage record as it is produced.
    """
    seeds, u, imp = cfg.seeds, cfg.uncertainty, cfg.importance
    ordered = order_buckets(buckets, cfg.curriculum.order, teacher, seeds.order, table)
    log = RunLog(order=[b.index for b in ordered], tasks=[b.ids for b in ordered])
    emit = on_record or (lambda r: None)

    buffer = TrainBuffer.assemble(ordered[0])
    importance = _importance_table(buffer.ids, cfg)
    for stage, bucket in enumerate(ordered, start=1):
        if len(buffer) == 0:
            raise SchedulingError(f"stage {stage}: training buffer is empty")
        history = ConfidenceHistory(u.patience, u.min_delta, u.epoch_cap)
        epoch = 0
        while True:
            epoch += 1
            try:
                params, objective = train_epoch(
                    params, table, buffer.ids, importance, cfg, stream(seeds.model, "train", stage, epoch)
                )
            except NumericError as exc:
                exc.stage = stage
                raise
            report = total_uncertainty(
                params, table, buffer.ids, importance, u.K, cfg.model.keep_rate, u.variant,
                derive_seed(seeds.dropout, "confidence", stage, epoch),
            )
            history.append(report.confidence)
            record = {"kind": "epoch", "stage": stage, "bucket": bucket.index, "epoch": epoch,
                      "loss": objective, "buffer_size": len(buffer), **report.to_record()}
            log.epochs.append(record)
            emit(record)
            if should_stop(history):
                break

        log.checkpoints.append(params.copy())
        log.beta_tables.append(ImportanceTable(importance.snapshot(), importance.lam, importance.lr_beta,
                                               importance.polarity))
        selection = select_replay(importance, imp.replay_mode, imp.replay_M)
        nxt = ordered[stage] if stage < len(ordered) else None
        stage_record = {
            "kind": "stage", "stage": stage, "bucket": bucket.index, "epochs": epoch,
            "buffer_size": len(buffer), "new": buffer.count("new"), "replayed": buffer.count("replay"),
            "replay_selected": len(selection), "epsilon": selection.epsilon,
        }
        log.stages.append(stage_record)
        emit(stage_record)
        if nxt is None:
            break
        new_buffer = TrainBuffer.assemble(nxt, selection)
        overlap = len(set(nxt.ids.tolist()) & set(selection.ids))
        if len(new_buffer) != len(nxt) + len(selection) - overlap:
            raise SchedulingError(f"stage {stage + 1}: buffer law violated")
        buffer = new_buffer
        importance = importance.restricted(buffer.ids)
    return params, log
