"""Labeled time series, prefix expansion, splits, and the synthetic benchmark.

A prefix sample is an index pair ``(series, t)``; its values are a view of the
first ``t`` rows of the parent series and are never copied. The batched
training code works on :class:`PrefixTable`, which stacks one split into a
padded ``(S, T_max, d)`` array plus per-sample index arrays.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, IntegrityError, SchemaError, SpecError
from .seeding import stream

SPLITS = ("train", "valid", "test")
DEFAULT_SPLIT_RATIOS = (0.7, 0.15, 0.15)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    id: str
    values: np.ndarray  # (T, d)
    label: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise DomainError(f"series {self.id!r}: values must be a non-empty (T, d) array")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "label", int(self.label))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class PrefixSample:
    """The first ``t`` observations of ``series``, labeled with its final class.

    ``sample_id`` is this prefix's position in :func:`expand_prefixes` order
    for its split, so integer order equals ``(series_id, t)`` order.
    """

    series: TimeSeries = field(repr=False, compare=False)
    t: int
    sample_id: int = -1

    @property
    def series_id(self) -> str:
        return self.series.id

    @property
    def label(self) -> int:
        return self.series.label

    @property
    def values(self) -> np.ndarray:
        return self.series.values[: self.t]


def assign_splits(
    ids: Iterable[str],
    seed: int = 0,
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
) -> dict[str, str]:
    """Deterministically map series ids to train/valid/test.

    Ids are ordered by a SHA-256 of ``"{seed}:{id}"``, which depends on nothing
    but the ids and the seed, then cut by ``ratios``.
    """
    ids = sorted(set(ids))
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DomainError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = sorted(ids, key=lambda s: hashlib.sha256(f"{seed}:{s}".encode()).hexdigest())
    n = len(order)
    n_train = int(round(ratios[0] * n))
    n_valid = min(n - n_train, int(round(ratios[1] * n)))
    out = {}
    for i, sid in enumerate(order):
        out[sid] = "train" if i < n_train else ("valid" if i < n_train + n_valid else "test")
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    series: tuple[TimeSeries, ...]
    class_count: int
    feature_dim: int
    split_assignment: dict[str, str]
    split_seed: int = 0

    @classmethod
    def build(
        cls,
        series: Sequence[TimeSeries],
        class_count: int,
        split_seed: int = 0,
        split_ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
    ) -> "Dataset":
        series = tuple(sorted(series, key=lambda s: s.id))
        if not series:
            raise DomainError("dataset has no series")
        ids = [s.id for s in series]
        if len(set(ids)) != len(ids):
            raise IntegrityError("duplicate series ids")
        d = series[0].d
        for s in series:
            if s.d != d:
                raise SchemaError(f"series {s.id!r} has dimension {s.d}, expected {d}")
            if not 0 <= s.label < class_count:
                raise DomainError(f"series {s.id!r}: label {s.label} outside 0..{class_count - 1}")
        return cls(series, class_count, d, assign_splits(ids, split_seed, split_ratios), split_seed)

    def split(self, tag: str) -> list[TimeSeries]:
        if tag not in SPLITS:
            raise DomainError(f"unknown split {tag!r}")
        return [s for s in self.series if self.split_assignment[s.id] == tag]

    def normalized(self) -> tuple["Dataset", np.ndarray, np.ndarray]:
        """Z-normalise every feature with train-split statistics.

        Returns the new dataset with the per-feature mean and std used.
        Constant features get std 1.
        """
        train = self.split("train") or list(self.series)
        stacked = np.concatenate([s.values for s in train], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0] = 1.0
        series = [TimeSeries(s.id, (s.values - mean) / std, s.label) for s in self.series]
        return (
            Dataset(tuple(series), self.class_count, self.feature_dim, dict(self.split_assignment), self.split_seed),
            mean,
            std,
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.feature_dim == other.feature_dim
            and self.split_assignment == other.split_assignment
            and self.series == other.series
        )

    __hash__ = None  # type: ignore[assignment]


def expand_prefixes(dataset: Dataset, split: str) -> list[PrefixSample]:
    out = []
    for s in dataset.split(split):
        for t in range(1, s.T + 1):
            out.append(PrefixSample(s, t, len(out)))
    return out


@dataclass(frozen=True, eq=False)
class PrefixTable:
    """Array view of one split's prefixes for batched computation.

    ``X`` is zero-padded past each series' length; the recurrent pass is
    causal, so padding never influences a prefix of valid length.
    """

    series_ids: tuple[str, ...]
    X: np.ndarray  # (S, T_max, d)
    lengths: np.ndarray  # (S,)
    series_labels: np.ndarray  # (S,)
    sample_series: np.ndarray  # (n,) row into X
    sample_t: np.ndarray  # (n,) 1-based prefix length
    sample_label: np.ndarray  # (n,)

    def __len__(self) -> int:
        return int(self.sample_t.shape[0])

    @classmethod
    def from_series(cls, series: Sequence[TimeSeries]) -> "PrefixTable":
        if not series:
            return cls((), np.zeros((0, 0, 0)), np.zeros(0, int), np.zeros(0, int),
                       np.zeros(0, int), np.zeros(0, int), np.zeros(0, int))
        t_max = max(s.T for s in series)
        d = series[0].d
        X = np.zeros((len(series), t_max, d))
        for i, s in enumerate(series):
            X[i, : s.T] = s.values
        lengths = np.array([s.T for s in series])
        labels = np.array([s.label for s in series])
        rows = np.repeat(np.arange(len(series)), lengths)
        ts = np.concatenate([np.arange(1, n + 1) for n in lengths])
        return cls(tuple(s.id for s in series), X, lengths, labels, rows, ts, labels[rows])

    @classmethod
    def from_dataset(cls, dataset: Dataset, split: str) -> "PrefixTable":
        return cls.from_series(dataset.split(split))

    def sample_key(self, sample_id: int) -> tuple[str, int]:
        return self.series_ids[self.sample_series[sample_id]], int(self.sample_t[sample_id])


# --------------------------------------------------------------------------- CSV


def save_csv(dataset: Dataset, path: str | Path) -> None:
    d = dataset.feature_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "t", "label", *[f"f{j + 1}" for j in range(d)]])
        for s in dataset.series:
            for t in range(s.T):
                w.writerow([s.id, t + 1, s.label, *[repr(float(v)) for v in s.values[t]]])


def load_csv(
    path: str | Path,
    class_count: int,
    split_seed: int = 0,
    split_ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
) -> Dataset:
    """Read the ``series_id,t,label,f1..fd`` format into a :class:`Dataset`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in ("series_id", "t", "label"):
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        feats = [h for h in header if h not in ("series_id", "t", "label")]
        expected = [f"f{j + 1}" for j in range(len(feats))]
        if not feats:
            raise SchemaError(f"{path}: missing column 'f1'")
        if feats != expected:
            missing = next(e for e, f in zip(expected + [None], feats + [None]) if e != f)
            raise SchemaError(f"{path}: missing column {missing!r}")
        i_sid, i_t, i_lab = header.index("series_id"), header.index("t"), header.index("label")
        i_feat = [header.index(f) for f in feats]

        rows: dict[str, list] = {}
        labels: dict[str, int] = {}
        last_sid = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            sid = row[i_sid]
            try:
                t = int(row[i_t])
                label = int(row[i_lab])
                vec = [float(row[i]) for i in i_feat]
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= label < class_count:
                raise DomainError(f"{path}:{lineno}: label {label} outside 0..{class_count - 1}")
            if sid != last_sid:
                if sid in rows:
                    raise IntegrityError(f"{path}:{lineno}: rows of series {sid!r} are not contiguous")
                rows[sid] = []
                labels[sid] = label
                last_sid = sid
            if t != len(rows[sid]) + 1:
                raise IntegrityError(
                    f"{path}:{lineno}: series {sid!r} expected t={len(rows[sid]) + 1}, got t={t}"
                )
            if label != labels[sid]:
                raise IntegrityError(f"{path}:{lineno}: label changes within series {sid!r}")
            rows[sid].append(vec)

    series = [TimeSeries(sid, np.array(v, dtype=np.float64), labels[sid]) for sid, v in rows.items()]
    return Dataset.build(series, class_count, split_seed, split_ratios)


# --------------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class Regime:
    means: tuple[tuple[float, ...], ...]  # (class_count, d)
    stds: tuple[tuple[float, ...], ...]  # (class_count, d)


@dataclass(frozen=True)
class SynthSpec:
    N: int
    T: int
    d: int
    class_count: int
    regimes: tuple[Regime, ...]
    ar_coef: float = 0.5

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthSpec":
        regimes = tuple(
            Regime(tuple(map(tuple, r["means"])), tuple(map(tuple, r["stds"]))) for r in raw["regimes"]
        )
        return cls(int(raw["N"]), int(raw["T"]), int(raw["d"]), int(raw["class_count"]), regimes,
                   float(raw.get("ar_coef", 0.5)))

    def to_dict(self) -> dict:
        return {
            "N": self.N, "T": self.T, "d": self.d, "class_count": self.class_count,
            "ar_coef": self.ar_coef,
            "regimes": [{"means": [list(m) for m in r.means], "stds": [list(s) for s in r.stds]}
                        for r in self.regimes],
        }


def benchmark_spec(N: int = 600, T: int = 48) -> SynthSpec:
    """Three-regime, two-class benchmark.

    Each regime separates the classes along a different feature, and the
    separation grows with time, so early prefixes are genuinely harder and the
    informative direction shifts between stages.
    """
    regimes = (
        Regime(means=((-0.25, 0.0, 0.0), (0.25, 0.0, 0.0)), stds=((1.0, 1.0, 1.0),) * 2),
        Regime(means=((0.0, -0.3, 0.0), (0.0, 0.3, 0.0)), stds=((1.0, 1.2, 1.0), (1.0, 0.9, 1.0))),
        Regime(means=((0.0, 0.0, -0.45), (0.0, 0.0, 0.45)), stds=((1.0, 1.0, 1.3), (1.0, 1.0, 0.8))),
    )
    return SynthSpec(N=N, T=T, d=3, class_count=2, regimes=regimes, ar_coef=0.5)


def validate_spec(spec: SynthSpec) -> None:
    R = len(spec.regimes)
    if spec.N < 1 or spec.T < 1 or spec.d < 1 or spec.class_count < 2:
        raise SpecError("N, T, d must be positive and class_count >= 2")
    if R < 2:
        raise SpecError(f"need at least 2 regimes, got {R}")
    if R > spec.T:
        raise SpecError(f"{R} regimes cannot fit in T={spec.T} steps")
    if not -1.0 < spec.ar_coef < 1.0:
        raise SpecError(f"ar_coef must lie in (-1, 1), got {spec.ar_coef}")
    for k, r in enumerate(spec.regimes):
        means, stds = np.asarray(r.means, float), np.asarray(r.stds, float)
        shape = (spec.class_count, spec.d)
        if means.shape != shape or stds.shape != shape:
            raise SpecError(f"regime {k}: means/stds must have shape {shape}")
        if np.any(stds <= 0):
            raise SpecError(f"regime {k}: std must be positive")


def generate_synthetic(
    spec: SynthSpec,
    seed: int,
    split_seed: int = 0,
    split_ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
) -> Dataset:
    """Draw ``spec.N`` series from a piecewise Gaussian AR(1) process.

    The time axis is cut into ``len(spec.regimes)`` contiguous segments and
    segment ``r`` emits around regime ``r``'s class-conditional mean. The AR
    deviation carries across segment boundaries.
    """
    validate_spec(spec)
    rng = stream(seed, "synthetic")
    C, N, T, d = spec.class_count, spec.N, spec.T, spec.d
    labels = rng.permutation(np.arange(N) % C)
    means = np.asarray([r.means for r in spec.regimes], float)  # (R, C, d)
    stds = np.asarray([r.stds for r in spec.regimes], float)
    segment = np.empty(T, dtype=int)
    for r, idx in enumerate(np.array_split(np.arange(T), len(spec.regimes))):
        segment[idx] = r

    phi = spec.ar_coef
    innov = np.sqrt(1.0 - phi * phi)
    eps = rng.standard_normal((N, T, d))
    dev = eps[:, 0]
    values = np.empty((N, T, d))
    for t in range(T):
        if t > 0:
            dev = phi * dev + innov * eps[:, t]
        r = segment[t]
        values[:, t] = means[r, labels] + stds[r, labels] * dev

    width = len(str(N - 1))
    series = [TimeSeries(f"s{i:0{width}d}", values[i], int(labels[i])) for i in range(N)]
    return Dataset.build(series, C, split_seed, split_ratios)
