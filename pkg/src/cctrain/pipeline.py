"""End-to-end runs and the on-disk run directory.

A run directory holds::

    config.json            resolved config (reproduces the run on its own)
    metrics.jsonl          one record per epoch and per stage
    teacher.ckpt           pretrained teacher parameters
    pretrain.csv           per-prefix teacher scores
    buckets.csv            sample_id, bucket, U_data, beta_final
    checkpoints/stage-m.ckpt
    beta/stage-m.csv       importance table at the end of stage m
    timing.json            wall-clock (kept out of metrics.jsonl)
    report.csv             written by evaluate
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig, load_config
from .dataset import Dataset, PrefixTable, generate_synthetic, load_csv, save_csv
from .errors import ConfigError
from .evaluation import (
    DECILES,
    AccuracyMatrix,
    PrefixProfile,
    accuracy_matrix,
    prediction_interval,
    prefix_profile,
    random_baseline,
    transfer_metrics,
)
from .importance import export_beta_csv
from .model import ModelParams, init_params, load_params, mc_proba, save_params
from .scheduler import CurriculumBucket, PretrainResult, RunLog, build_buckets, pretrain, run_training
from .seeding import derive_seed

SCHEMA_VERSION = 1
log = logging.getLogger(__name__)


def run_id(cfg: RunConfig) -> str:
    """Hash of the experiment config; where the run is written does not count."""
    return hashlib.sha256(cfg.replace(output_dir="-").to_json().encode()).hexdigest()[:12]


def raw_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.source == "csv":
        if not Path(d.path).is_file():
            raise ConfigError(f"data.path: file not found: {d.path}")
        return load_csv(d.path, d.class_count, cfg.seeds.split, d.split_ratios)
    return generate_synthetic(cfg.synth_spec(), cfg.seeds.data, cfg.seeds.split, d.split_ratios)


def load_dataset(cfg: RunConfig) -> Dataset:
    """The run's dataset, z-normalised with train statistics."""
    return raw_dataset(cfg).normalized()[0]


@dataclass
class RunResult:
    cfg: RunConfig
    dataset: Dataset
    train: PrefixTable
    teacher: PretrainResult
    buckets: list[CurriculumBucket]
    params: ModelParams
    log: RunLog
    seconds: float


class _JsonlWriter:
    def __init__(self, path: Path | None, rid: str):
        self.fh = open(path, "w", encoding="utf-8") if path else None
        self.rid = rid

    def __call__(self, record: dict) -> None:
        if self.fh is None:
            return
        line = json.dumps({"schema": SCHEMA_VERSION, "run_id": self.rid, **record}, sort_keys=True)
        self.fh.write(line + "\n")
        self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def _write_pretrain(out: Path, train: PrefixTable, teacher: PretrainResult, buckets: Sequence[CurriculumBucket]):
    save_params(teacher.params, out / "teacher.ckpt")
    with open(out / "pretrain.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "series_id", "t", "beta", "u_data", "u_data_plain", "loss"])
        for i in range(len(train)):
            sid, t = train.sample_key(i)
            w.writerow([i, sid, t, repr(float(teacher.beta[i])), repr(float(teacher.u_data[i])),
                        repr(float(teacher.u_data_plain[i])), repr(float(teacher.loss[i]))])
    bucket_of = {int(i): b.index for b in buckets for i in b.ids}
    with open(out / "buckets.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "bucket", "U_data", "beta_final"])
        for i in range(len(train)):
            w.writerow([i, bucket_of[i], repr(float(teacher.u_data[i])), repr(float(teacher.beta[i]))])


def run_pretrain(cfg: RunConfig, out_dir: str | Path | None = None):
    dataset = load_dataset(cfg)
    train = PrefixTable.from_dataset(dataset, "train")
    teacher = pretrain(train, cfg)
    buckets = build_buckets(teacher.u_data, cfg.curriculum.M, cfg.curriculum.bucket_mode)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
        _write_pretrain(out, train, teacher, buckets)
    return dataset, train, teacher, buckets


def run_pipeline(
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    pretrained: tuple | None = None,
) -> RunResult:
    """Pretrain, bucket, and train; persist a run directory if ``out_dir``."""
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    dataset, train, teacher, buckets = pretrained or run_pretrain(cfg)
    if out is not None:
        _write_pretrain(out, train, teacher, buckets)
    m = cfg.model
    params = init_params(dataset.feature_dim, m.hidden, dataset.class_count, derive_seed(cfg.seeds.model, "target"))
    writer = _JsonlWriter(out / "metrics.jsonl" if out else None, run_id(cfg))
    try:
        params, runlog = run_training(params, train, buckets, cfg, teacher, writer)
    finally:
        writer.close()
    seconds = time.perf_counter() - t0
    if out is not None:
        (out / "checkpoints").mkdir(exist_ok=True)
        (out / "beta").mkdir(exist_ok=True)
        for k, (ckpt, table) in enumerate(zip(runlog.checkpoints, runlog.beta_tables), start=1):
            save_params(ckpt, out / "checkpoints" / f"stage-{k}.ckpt")
            export_beta_csv(table, train, out / "beta" / f"stage-{k}.csv")
        (out / "timing.json").write_text(json.dumps({"seconds": seconds}) + "\n", encoding="utf-8")
    log.info("run %s: %d stages, %d epochs, %.1fs", run_id(cfg), len(runlog.stages), runlog.total_epochs, seconds)
    return RunResult(cfg, dataset, train, teacher, buckets, params, runlog, seconds)


# ----------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    profile: PrefixProfile
    accuracy: AccuracyMatrix
    bwt: float
    fwt: float
    noncoverage: float
    epochs: list[int]

    @property
    def total_epochs(self) -> int:
        return sum(self.epochs)


def evaluate_trained(
    cfg: RunConfig,
    dataset: Dataset,
    train: PrefixTable,
    params: ModelParams,
    checkpoints: Sequence[ModelParams],
    tasks: Sequence[np.ndarray],
    epochs: Sequence[int],
) -> EvalResult:
    test = PrefixTable.from_dataset(dataset, "test")
    profile = prefix_profile(params, test)

    seeds = [derive_seed(cfg.seeds.model, "baseline", k) for k in range(cfg.evaluation.baseline_seeds)]
    b = random_baseline(train, tasks, dataset.feature_dim, cfg.model.hidden, dataset.class_count, seeds)
    acc = accuracy_matrix(checkpoints, train, tasks, b)
    bwt, fwt = transfer_metrics(acc) if acc.M >= 2 else (float("nan"), float("nan"))

    offsets = np.concatenate([[0], np.cumsum(test.lengths)[:-1]])
    full = offsets + test.lengths - 1
    K = max(cfg.uncertainty.K, 10)
    keep = cfg.model.keep_rate
    draws = mc_proba(params, test, full, K, keep, derive_seed(cfg.seeds.dropout, "interval"))
    held = mc_proba(params, test, full, 1, keep, derive_seed(cfg.seeds.dropout, "heldout"))[0]
    labels = test.series_labels
    col = 1 if dataset.class_count == 2 else None
    pick = (lambda p: p[..., 1]) if col else (lambda p: p[..., np.arange(labels.size), labels])
    _, noncov = prediction_interval(pick(draws).T, cfg.evaluation.alpha, pick(held))
    return EvalResult(profile, acc, bwt, fwt, noncov, list(epochs))


def evaluate_result(result: RunResult) -> EvalResult:
    log_ = result.log
    return evaluate_trained(result.cfg, result.dataset, result.train, result.params,
                            log_.checkpoints, log_.tasks, [s["epochs"] for s in log_.stages])


def _read_run(run_dir: Path):
    cfg = load_config(run_dir / "config.json")
    dataset = load_dataset(cfg)
    train = PrefixTable.from_dataset(dataset, "train")
    ckpt_dir = run_dir / "checkpoints"
    paths = sorted(ckpt_dir.glob("stage-*.ckpt"), key=lambda p: int(p.stem.split("-")[1]))
    if not paths:
        raise ConfigError(f"{ckpt_dir}: no stage checkpoints")
    checkpoints = [load_params(p) for p in paths]

    members: dict[int, list[int]] = {}
    bpath = run_dir / "buckets.csv"
    if bpath.exists():
        with open(bpath, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                members.setdefault(int(row["bucket"]), []).append(int(row["sample_id"]))
    order, epochs = [], []
    mpath = run_dir / "metrics.jsonl"
    if mpath.exists():
        for line in mpath.read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            if rec.get("kind") == "stage":
                order.append(rec["bucket"])
                epochs.append(rec["epochs"])
    if not order:
        order = sorted(members) or [1]
        epochs = [0] * len(checkpoints)
    if not members:
        members = {order[0]: list(range(len(train)))}
    tasks = [np.array(sorted(members[b]), dtype=int) for b in order][: len(checkpoints)]
    checkpoints = checkpoints[: len(tasks)]
    return cfg, dataset, train, checkpoints, tasks, epochs[: len(tasks)]


def report_rows(ev: EvalResult, seed: int) -> list[tuple]:
    rows = [("auc", k, v, seed) for k, v in zip(DECILES, ev.profile.values)]
    rows.append(("auc_mean", "all", ev.profile.mean, seed))
    M = ev.accuracy.M
    for i in range(M):
        for j in range(M):
            rows.append(("R", f"{i + 1}:{j + 1}", float(ev.accuracy.R[i, j]), seed))
    for j in range(M):
        rows.append(("b_bar", j + 1, float(ev.accuracy.b[j]), seed))
    rows += [("bwt", "all", ev.bwt, seed), ("fwt", "all", ev.fwt, seed),
             ("pi_noncoverage", "all", ev.noncoverage, seed)]
    rows += [("epochs", m + 1, e, seed) for m, e in enumerate(ev.epochs)]
    rows.append(("epochs_total", "all", ev.total_epochs, seed))
    return rows


def write_report(rows: Sequence[tuple], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "stage_or_decile", "value", "seed"])
        for metric, where, value, seed in rows:
            w.writerow([metric, where, repr(float(value)) if isinstance(value, float) else value, seed])


def evaluate_run(run_dir: str | Path) -> EvalResult:
    run_dir = Path(run_dir)
    cfg, dataset, train, checkpoints, tasks, epochs = _read_run(run_dir)
    ev = evaluate_trained(cfg, dataset, train, checkpoints[-1], checkpoints, tasks, epochs)
    write_report(report_rows(ev, cfg.seeds.model), run_dir / "report.csv")
    return ev


# ---------------------------------------------------------------- comparisons

COMPARE_METRICS = ("accuracy", "epochs", "alpha", "bwt", "fwt")


def _compare_one_seed(cfg: RunConfig, strategies: Sequence[str], k: int, out: Path) -> dict:
    seeded = cfg.replace(seeds=cfg.seeds.offset(k))
    pretrained = run_pretrain(seeded)
    results = {}
    for strategy in strategies:
        run_cfg = seeded.replace(**{"curriculum.order": strategy, "output_dir": str(out / strategy / f"seed-{k}")})
        res = run_pipeline(run_cfg, run_cfg.output_dir, pretrained)
        ev = evaluate_result(res)
        write_report(report_rows(ev, run_cfg.seeds.model), Path(run_cfg.output_dir) / "report.csv")
        results[strategy] = {
            "accuracy": ev.profile.values[-1], "epochs": ev.total_epochs, "alpha": ev.noncoverage,
            "bwt": ev.bwt, "fwt": ev.fwt,
        }
    return results


def compare_orders(
    cfg: RunConfig,
    strategies: Sequence[str] | None = None,
    seeds: int | None = None,
    out_dir: str | Path | None = None,
) -> Path:
    """Train every (strategy, seed) pair and merge a per-strategy summary CSV.

    Seed ``k`` offsets every seed in the config by ``k``; all strategies of
    one seed share its dataset and teacher. ``accuracy`` is the full-length
    test AUC, ``epochs`` the total epochs, ``alpha`` the interval
    non-coverage.
    """
    strategies = list(strategies or cfg.compare.strategies)
    n_seeds = seeds or cfg.compare.seeds
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = max(1, int(os.environ.get("CCTRAIN_THREADS", "1") or 1))
    if workers > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_seeds)) as pool:
            per_seed = list(pool.map(_compare_one_seed, [cfg] * n_seeds, [strategies] * n_seeds,
                                     range(n_seeds), [out] * n_seeds))
    else:
        per_seed = [_compare_one_seed(cfg, strategies, k, out) for k in range(n_seeds)]

    path = out / "comparison.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "metric", "mean", "std", "n_seeds", "values"])
        for strategy in sorted(strategies):
            for metric in COMPARE_METRICS:
                vals = np.array([float(r[strategy][metric]) for r in per_seed])
                w.writerow([strategy, metric, repr(float(np.mean(vals))), repr(float(np.std(vals))),
                            len(vals), ";".join(repr(float(v)) for v in vals)])
    return path


def write_dataset(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "data.csv"
    save_csv(raw_dataset(cfg), path)
    return path
