"""Single-layer gated recurrent classifier with analytic BPTT.

The cell is a GRU (update gate ``z``, reset gate ``r``, candidate ``n``)::

    z = sigmoid(x Wz + h Uz + bz)
    r = sigmoid(x Wr + h Ur + br)
    n = tanh(x Wn + (r * h) Un + bn)
    h' = (1 - z) * n + z * h

and the head maps the last hidden state of a prefix to class logits. Dropout
acts only on that final hidden state, never inside the recurrence.

All batched entry points take a :class:`~cctrain.dataset.PrefixTable` plus
sample ids. The recurrence runs once per distinct series up to the longest
requested prefix, and every prefix reads its hidden state off that pass, so
a batch costs O(S * T_max) cell steps rather than O(sum of prefix lengths).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax

from .dataset import PrefixSample, PrefixTable
from .errors import ContractError, DomainError, NumericError
from .seeding import stream

CHECKPOINT_FORMAT = "cctrain.params"
CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12
_LOG_FLOOR = float(np.log(PROB_FLOOR))
_PARAM_NAMES = ("W", "U", "b", "V", "c")

_clamp_events = 0


def clamp_count() -> int:
    """How many true-class probabilities have been floored at 1e-12 so far."""
    return _clamp_events


def reset_clamp_count() -> None:
    global _clamp_events
    _clamp_events = 0


@dataclass
class ModelParams:
    W: np.ndarray  # (d, 3H) input weights, gate order [z | r | n]
    U: np.ndarray  # (H, 3H) hidden weights
    b: np.ndarray  # (3H,)
    V: np.ndarray  # (H, C) head
    c: np.ndarray  # (C,)

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def class_count(self) -> int:
        return self.V.shape[1]

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, k) for k in _PARAM_NAMES)

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i : i + a.size], dtype=np.float64).reshape(a.shape).copy())
            i += a.size
        return ModelParams(*out)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays()))

    __hash__ = None  # type: ignore[assignment]


def zero_params(input_dim: int, hidden: int, class_count: int) -> ModelParams:
    H = hidden
    return ModelParams(
        np.zeros((input_dim, 3 * H)), np.zeros((H, 3 * H)), np.zeros(3 * H),
        np.zeros((H, class_count)), np.zeros(class_count),
    )


def init_params(input_dim: int, hidden: int, class_count: int, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) for every weight and bias."""
    rng = stream(seed, "init")
    bound = 1.0 / np.sqrt(hidden)
    shapes = zero_params(input_dim, hidden, class_count).arrays()
    return ModelParams(*(rng.uniform(-bound, bound, a.shape) for a in shapes))


def save_params(params: ModelParams, path: str | Path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": params.input_dim,
        "hidden": params.hidden,
        "class_count": params.class_count,
        "arrays": {
            k: {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
            for k, a in zip(_PARAM_NAMES, params.arrays())
        },
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> ModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"{path}: not a cctrain checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    arrays = []
    for k in _PARAM_NAMES:
        entry = doc["arrays"][k]
        arrays.append(np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
    params = ModelParams(*arrays)
    expected = zero_params(doc["input_dim"], doc["hidden"], doc["class_count"])
    if any(a.shape != e.shape for a, e in zip(params.arrays(), expected.arrays())):
        raise DomainError(f"{path}: array shapes disagree with header")
    return params


@dataclass(frozen=True)
class DropoutMask:
    keep: np.ndarray  # (H,) bool
    keep_rate: float
    seed: int | None = None

    @classmethod
    def draw(cls, hidden: int, keep_rate: float, seed: int) -> "DropoutMask":
        rng = stream(seed, "mc_dropout")
        return cls(rng.random(hidden) < keep_rate, keep_rate, seed)

    @classmethod
    def identity(cls, hidden: int) -> "DropoutMask":
        return cls(np.ones(hidden, dtype=bool), 1.0)

    def scaled(self) -> np.ndarray:
        return scaled_mask(self.keep, self.keep_rate)


def scaled_mask(keep: np.ndarray, keep_rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: kept units scaled by 1/keep_rate."""
    if not 0.0 <= keep_rate <= 1.0:
        raise DomainError(f"keep rate must lie in [0, 1], got {keep_rate}")
    if keep_rate == 0.0:
        return np.zeros(keep.shape)
    return keep.astype(np.float64) / keep_rate


# ---------------------------------------------------------------- core passes


@dataclass
class _CellCache:
    X: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    n: np.ndarray
    hs: np.ndarray


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        bad = ~np.isfinite(arr).reshape(arr.shape[0], arr.shape[1], -1).all(axis=(0, 2))
        step = int(np.argmax(bad)) + 1
        raise NumericError(f"non-finite {what}", step=step)


def _cell_forward(p: ModelParams, X: np.ndarray) -> _CellCache:
    B, L, _ = X.shape
    H = p.hidden
    XW = X @ p.W + p.b
    _check_finite(XW, "input projection")
    U_zr, U_n = p.U[:, : 2 * H], p.U[:, 2 * H :]
    h_prev = np.empty((B, L, H))
    z = np.empty((B, L, H))
    r = np.empty((B, L, H))
    n = np.empty((B, L, H))
    hs = np.empty((B, L, H))
    h = np.zeros((B, H))
    for t in range(L):
        h_prev[:, t] = h
        zr = expit(XW[:, t, : 2 * H] + h @ U_zr)
        z[:, t], r[:, t] = zr[:, :H], zr[:, H:]
        n[:, t] = np.tanh(XW[:, t, 2 * H :] + (r[:, t] * h) @ U_n)
        h = n[:, t] + z[:, t] * (h - n[:, t])
        hs[:, t] = h
    _check_finite(hs, "hidden state")
    return _CellCache(X, h_prev, z, r, n, hs)


def _cell_backward(p: ModelParams, cache: _CellCache, dhs: np.ndarray) -> tuple[np.ndarray, ...]:
    B, L, H = dhs.shape
    U_zr, U_n = p.U[:, : 2 * H], p.U[:, 2 * H :]
    da = np.empty((B, L, 3 * H))
    dh_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        dh = dhs[:, t] + dh_next
        z, r, n, hp = cache.z[:, t], cache.r[:, t], cache.n[:, t], cache.h_prev[:, t]
        da_n = dh * (1.0 - z) * (1.0 - n * n)
        drh = da_n @ U_n.T
        da_z = dh * (hp - n) * z * (1.0 - z)
        da_r = drh * hp * r * (1.0 - r)
        da[:, t, :H] = da_z
        da[:, t, H : 2 * H] = da_r
        da[:, t, 2 * H :] = da_n
        dh_next = dh * z + drh * r + da[:, t, : 2 * H] @ U_zr.T
    _check_finite(da, "gradient")
    flat_da = da.reshape(B * L, 3 * H)
    dW = cache.X.reshape(B * L, -1).T @ flat_da
    db = flat_da.sum(axis=0)
    dU = np.empty_like(p.U)
    dU[:, : 2 * H] = cache.h_prev.reshape(B * L, H).T @ flat_da[:, : 2 * H]
    dU[:, 2 * H :] = (cache.r * cache.h_prev).reshape(B * L, H).T @ flat_da[:, 2 * H :]
    return dW, dU, db


def _gather(table: PrefixTable, ids: np.ndarray):
    """Distinct series rows touched by ``ids`` and each sample's local row."""
    rows = table.sample_series[ids]
    uniq, local = np.unique(rows, return_inverse=True)
    ts = table.sample_t[ids]
    L = int(ts.max())
    return table.X[uniq, :L], local, ts - 1, table.sample_label[ids]


def hidden_states(params: ModelParams, table: PrefixTable, ids: np.ndarray) -> np.ndarray:
    """Final hidden state of every requested prefix, shape ``(n, H)``."""
    ids = np.asarray(ids, dtype=int)
    if ids.size == 0:
        return np.zeros((0, params.hidden))
    X, local, tpos, _ = _gather(table, ids)
    cache = _cell_forward(params, X)
    return cache.hs[local, tpos]


def head_proba(params: ModelParams, h: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax of the head applied to (optionally masked) hidden states."""
    if mask is not None:
        h = h * mask
    logits = h @ params.V + params.c
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------ batched public


def predict_proba(
    params: ModelParams,
    table: PrefixTable,
    ids: np.ndarray | None = None,
    masks: np.ndarray | None = None,
) -> np.ndarray:
    """Class probabilities for prefixes ``ids`` (all samples if None), ``(n, C)``.

    ``masks`` holds per-sample scaled dropout multipliers, shape ``(n, H)``.
    """
    ids = np.arange(len(table)) if ids is None else np.asarray(ids, dtype=int)
    return head_proba(params, hidden_states(params, table, ids), masks)


@dataclass
class BatchResult:
    loss: float
    per_sample_loss: np.ndarray
    grad: ModelParams | None
    clamped: int


def batch_loss_grad(
    params: ModelParams,
    table: PrefixTable,
    ids: np.ndarray,
    weights: np.ndarray,
    masks: np.ndarray | None = None,
    compute_grad: bool = True,
) -> BatchResult:
    """Mean of ``weight * CE`` over the batch, its gradient, and per-sample CE.

    Duplicate ids are separate batch members. A true-class probability below
    1e-12 is floored there; the floored term then has zero gradient.
    """
    global _clamp_events
    ids = np.asarray(ids, dtype=int)
    weights = np.asarray(weights, dtype=np.float64)
    if ids.size == 0:
        raise ContractError("empty batch")
    if weights.shape != ids.shape:
        raise ContractError("weights must align with ids")
    if np.any(weights < 0):
        raise ContractError("weights must be non-negative")
    nb = ids.size
    X, local, tpos, labels = _gather(table, ids)
    cache = _cell_forward(params, X)
    h = cache.hs[local, tpos]
    hm = h if masks is None else h * masks
    logits = hm @ params.V + params.c
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits")
    logp = log_softmax(logits, axis=1)
    logp_true = logp[np.arange(nb), labels]
    clamped = logp_true < _LOG_FLOOR
    n_clamped = int(clamped.sum())
    _clamp_events += n_clamped
    ce = -np.maximum(logp_true, _LOG_FLOOR)
    loss = float(np.dot(weights, ce) / nb)
    if not compute_grad:
        return BatchResult(loss, ce, None, n_clamped)

    dlogits = np.exp(logp)
    dlogits[np.arange(nb), labels] -= 1.0
    dlogits *= (weights * ~clamped / nb)[:, None]
    dV = hm.T @ dlogits
    dc = dlogits.sum(axis=0)
    dh = dlogits @ params.V.T
    if masks is not None:
        dh = dh * masks
    dhs = np.zeros_like(cache.hs)
    np.add.at(dhs, (local, tpos), dh)
    dW, dU, db = _cell_backward(params, cache, dhs)
    return BatchResult(loss, ce, ModelParams(dW, dU, db, dV, dc), n_clamped)


def mc_proba(
    params: ModelParams,
    table: PrefixTable,
    ids: np.ndarray,
    K: int,
    keep_rate: float,
    seed: int,
) -> np.ndarray:
    """K dropout passes over prefixes ``ids``, shape ``(K, n, C)``.

    Pass ``k`` draws an ``(n, H)`` keep matrix from the ``"mc_dropout"``
    stream of ``seed``; passes are drawn in order, so for a single prefix
    this is exactly :func:`mc_predict`.
    """
    ids = np.asarray(ids, dtype=int)
    return mc_proba_from_hidden(params, hidden_states(params, table, ids), K, keep_rate, seed)


def mc_proba_from_hidden(params: ModelParams, h: np.ndarray, K: int, keep_rate: float, seed: int) -> np.ndarray:
    if K < 1:
        raise ContractError(f"K must be >= 1, got {K}")
    if not 0.0 < keep_rate <= 1.0:
        raise DomainError(f"keep rate must lie in (0, 1], got {keep_rate}")
    rng = stream(seed, "mc_dropout")
    out = np.empty((K, h.shape[0], params.class_count))
    for k in range(K):
        keep = rng.random(h.shape) < keep_rate
        out[k] = head_proba(params, h, scaled_mask(keep, keep_rate))
    return out


def sgd_step(params: ModelParams, gradient: ModelParams, learning_rate: float) -> ModelParams:
    if learning_rate <= 0:
        raise DomainError(f"learning rate must be positive, got {learning_rate}")
    return ModelParams(*(p - learning_rate * g for p, g in zip(params.arrays(), gradient.arrays())))


# ----------------------------------------------------- per-prefix convenience


def _table_for(prefixes: Sequence[PrefixSample]) -> tuple[PrefixTable, np.ndarray]:
    """Build a table over the distinct parent series of ``prefixes``."""
    series, index = [], {}
    for p in prefixes:
        key = id(p.series)
        if key not in index:
            index[key] = len(series)
            series.append(p.series)
    table = PrefixTable.from_series(series)
    offsets = np.concatenate([[0], np.cumsum(table.lengths)[:-1]])
    ids = np.array([offsets[index[id(p.series)]] + p.t - 1 for p in prefixes], dtype=int)
    for p in prefixes:
        if not 1 <= p.t <= p.series.T:
            raise ContractError(f"prefix length {p.t} outside 1..{p.series.T}")
    return table, ids


def forward(params: ModelParams, prefix: PrefixSample, mask: DropoutMask | None = None) -> np.ndarray:
    """Predictive distribution of one prefix."""
    table, ids = _table_for([prefix])
    m = None if mask is None else mask.scaled()[None, :]
    return predict_proba(params, table, ids, m)[0]


def _unpack(batch: Sequence[tuple[PrefixSample, float]]):
    if not batch:
        raise ContractError("empty batch")
    table, ids = _table_for([p for p, _ in batch])
    return table, ids, np.array([w for _, w in batch], dtype=np.float64)


def weighted_batch_loss(
    params: ModelParams,
    batch: Sequence[tuple[PrefixSample, float]],
    masks: np.ndarray | None = None,
) -> float:
    table, ids, w = _unpack(batch)
    return batch_loss_grad(params, table, ids, w, masks, compute_grad=False).loss


def backward(
    params: ModelParams,
    batch: Sequence[tuple[PrefixSample, float]],
    masks: np.ndarray | None = None,
) -> ModelParams:
    table, ids, w = _unpack(batch)
    return batch_loss_grad(params, table, ids, w, masks).grad


def mc_predict(
    params: ModelParams,
    prefix: PrefixSample,
    K: int,
    keep_rate: float,
    rng_seed: int,
) -> list[np.ndarray]:
    table, ids = _table_for([prefix])
    return list(mc_proba(params, table, ids, K, keep_rate, rng_seed)[:, 0])
