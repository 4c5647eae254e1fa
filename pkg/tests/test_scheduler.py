import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cctrain import scheduler
from cctrain.config import ORDER_KINDS
from cctrain.dataset import Dataset, PrefixTable, TimeSeries, benchmark_spec, generate_synthetic
from cctrain.errors import ConfigError, SchedulingError
from cctrain.importance import select_replay
from cctrain.model import init_params
from cctrain.scheduler import (
    CurriculumBucket,
    TrainBuffer,
    build_buckets,
    order_buckets,
    pretrain,
    run_training,
    series_batches,
    sigma_band_cuts,
)

from conftest import tiny_config


def tiny_run(cfg, **kw):
    ds = generate_synthetic(cfg.synth_spec(), cfg.seeds.data, cfg.seeds.split).normalized()[0]
    table = PrefixTable.from_dataset(ds, "train")
    teacher = pretrain(table, cfg)
    buckets = build_buckets(teacher.u_data, cfg.curriculum.M, cfg.curriculum.bucket_mode)
    params = init_params(ds.feature_dim, cfg.model.hidden, 2, 1)
    return table, teacher, buckets, *run_training(params, table, buckets, cfg, teacher, **kw)


# ------------------------------------------------------------------- batches


def test_series_batches_cover_ids_once():
    rng = np.random.default_rng(0)
    table = PrefixTable.from_series([TimeSeries(f"s{i}", np.zeros((3, 1)), 0) for i in range(7)])
    ids = np.array([0, 2, 4, 5, 8, 10, 13, 20])
    batches = series_batches(table, ids, 2, rng)
    assert sorted(np.concatenate(batches).tolist()) == ids.tolist()
    for b in batches:
        assert len(np.unique(table.sample_series[b])) <= 2


# ------------------------------------------------------------------ pretrain


def test_pretrain_single_series(tiny_cfg):
    ds = Dataset.build([TimeSeries("a", np.array([[0.1, 0.2], [0.3, -0.1]]), 1)], 2, split_ratios=(1, 0, 0))
    res = pretrain(PrefixTable.from_dataset(ds, "train"), tiny_cfg)
    assert res.stages == 2
    assert len(res.beta_map()) == 2 and len(res.u_data_map()) == 2


def test_pretrain_deterministic(tiny_cfg):
    ds = generate_synthetic(tiny_cfg.synth_spec(), 0)
    table = PrefixTable.from_dataset(ds, "train")
    a, b = pretrain(table, tiny_cfg), pretrain(table, tiny_cfg)
    assert a.beta.tobytes() == b.beta.tobytes()
    assert a.u_data.tobytes() == b.u_data.tobytes()
    assert a.params == b.params


def test_pretrain_beta_non_degenerate_on_benchmark():
    from cctrain.config import RunConfig

    ds = generate_synthetic(benchmark_spec(), 0).normalized()[0]
    res = pretrain(PrefixTable.from_dataset(ds, "train"), RunConfig())
    assert res.beta.std(ddof=1) > 0
    assert res.beta.size == 420 * 48


# ------------------------------------------------------------------- buckets


def test_median_split():
    b = build_buckets({0: 0.4, 1: 0.1, 2: 0.9, 3: 0.2}, 2)
    assert [x.ids.tolist() for x in b] == [[1, 3], [0, 2]]


def test_equal_scores_balanced_by_id():
    b = build_buckets(np.zeros(10), 3)
    assert [x.ids.tolist() for x in b] == [[0, 1, 2, 3], [4, 5, 6], [7, 8, 9]]


def test_sigma_band_cuts_refit():
    scores = np.random.default_rng(4).standard_normal(1000) * 2.0 + 0.7
    # independent fit: two-pass mean and population std
    mu = sum(scores) / len(scores)
    sigma = (sum((s - mu) ** 2 for s in scores) / len(scores)) ** 0.5
    np.testing.assert_allclose(sigma_band_cuts(scores, 4), [mu - 1.5 * sigma, mu, mu + 1.5 * sigma], atol=1e-9)
    buckets = build_buckets(scores, 4, "sigma_band")
    assert len(buckets) == 4
    assert buckets[0].max_u < mu - 1.5 * sigma <= buckets[1].min_u


def test_sigma_band_drops_empty_bands():
    scores = np.array([0.0] * 10 + [1.0])
    b = build_buckets(scores, 4, "sigma_band")
    assert sum(len(x) for x in b) == 11 and all(len(x) > 0 for x in b)
    assert [x.index for x in b] == list(range(1, len(b) + 1))


def test_too_many_buckets():
    with pytest.raises(ConfigError):
        build_buckets(np.arange(3.0), 4)


@settings(max_examples=200, deadline=None)
@given(
    scores=st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=60),
    M=st.integers(2, 6),
    mode=st.sampled_from(["quantile", "sigma_band"]),
)
def test_partition_and_monotone(scores, M, mode):
    if M > len(scores):
        return
    buckets = build_buckets(np.array(scores), M, mode)
    ids = np.concatenate([b.ids for b in buckets])
    assert sorted(ids.tolist()) == list(range(len(scores)))
    means = [b.mean_u for b in buckets]
    assert all(a <= b + 1e-12 for a, b in zip(means, means[1:]))


# ------------------------------------------------------------------ ordering


def _tagged(means):
    return [CurriculumBucket(k + 1, np.array([k]), m, m, m) for k, m in enumerate(means)]


def test_confidence_asc_is_identity():
    b = build_buckets(np.random.default_rng(0).standard_normal(40), 4)
    assert [x.index for x in order_buckets(b, "confidence_asc")] == [1, 2, 3, 4]
    assert [x.index for x in order_buckets(b, "confidence_desc")] == [4, 3, 2, 1]


def test_time_desc():
    buckets = _tagged([0.0, 0.0, 0.0])
    for b, t in zip(buckets, (10, 20, 30)):
        b.scores["time"] = t
    assert [b.scores["time"] for b in order_buckets(buckets, "time_desc")] == [30, 20, 10]


def test_time_from_prefix_table():
    table = PrefixTable.from_series([TimeSeries("a", np.zeros((4, 1)), 0)])
    buckets = [CurriculumBucket(1, np.array([3]), 0, 0, 0), CurriculumBucket(2, np.array([0]), 1, 1, 1)]
    assert [b.index for b in order_buckets(buckets, "time_asc", prefixes=table)] == [2, 1]


def test_random_same_seed_same_permutation():
    b = _tagged(range(8))
    a1 = [x.index for x in order_buckets(b, "random", seed=1)]
    a2 = [x.index for x in order_buckets(b, "random", seed=1)]
    assert a1 == a2 and sorted(a1) == list(range(1, 9))


@pytest.mark.parametrize("strategy", ["difficulty_asc", "uncertainty_desc"])
def test_teacher_required(strategy):
    with pytest.raises(ConfigError):
        order_buckets(_tagged([1.0, 2.0]), strategy)


def test_all_strategies_permute(tiny_cfg):
    table, teacher, buckets, _, _ = tiny_run(tiny_cfg.replace(**{"uncertainty.epoch_cap": 1}))
    for s in ORDER_KINDS:
        got = order_buckets(buckets, s, teacher, 3, table)
        assert sorted(b.index for b in got) == [b.index for b in buckets]


# ------------------------------------------------------------------ training


def test_buffer_assembly_dedups():
    bucket = CurriculumBucket(2, np.array([3, 4, 5]), 0, 0, 0)
    sel = select_replay(scheduler.ImportanceTable({1: 2.0, 4: 3.0, 6: 0.1}), "threshold")
    buf = TrainBuffer.assemble(bucket, sel)
    assert buf.ids.tolist() == [1, 3, 4, 5]
    assert buf.provenance[4] == "new" and buf.provenance[1] == "replay"


def test_buffer_law_every_stage(tiny_cfg):
    _, _, buckets, _, log = tiny_run(tiny_cfg)
    order = {b.index: b for b in buckets}
    for prev, cur in zip(log.stages, log.stages[1:]):
        bucket = order[cur["bucket"]]
        assert cur["buffer_size"] == cur["new"] + cur["replayed"]
        assert cur["new"] == len(bucket)
        # buckets are disjoint, so the new bucket never overlaps the replay
        assert cur["replayed"] == prev["replay_selected"]
    assert [s["bucket"] for s in log.stages] == log.order


def test_single_bucket_never_replays(tiny_cfg):
    cfg = tiny_cfg.replace(**{"curriculum.M": 1})
    table, _, _, _, log = tiny_run(cfg)
    assert len(log.stages) == 1
    assert log.stages[0]["replayed"] == 0 and log.stages[0]["buffer_size"] == len(table)


def test_replay_everything_accumulates(tiny_cfg):
    cfg = tiny_cfg.replace(**{"importance.replay_mode": "fraction", "importance.replay_M": 1})
    _, _, buckets, _, log = tiny_run(cfg)
    sizes = {b.index: len(b) for b in buckets}
    seen = 0
    for s in log.stages:
        seen += sizes[s["bucket"]]
        assert s["buffer_size"] == seen


def test_run_log_deterministic(tiny_cfg):
    _, _, _, p1, log1 = tiny_run(tiny_cfg)
    _, _, _, p2, log2 = tiny_run(tiny_cfg)
    assert log1.records() == log2.records()
    assert p1 == p2
    assert all(a == b for a, b in zip(log1.checkpoints, log2.checkpoints))


def test_on_record_stream_matches_log(tiny_cfg):
    seen = []
    _, _, _, _, log = tiny_run(tiny_cfg, on_record=seen.append)
    assert len(seen) == len(log.epochs) + len(log.stages)
    assert seen[-1]["kind"] == "stage"


def test_empty_buffer_names_stage(tiny_cfg):
    table = PrefixTable.from_series([TimeSeries("a", np.zeros((3, 2)), 0)])
    buckets = [CurriculumBucket(1, np.array([], dtype=int), 0, 0, 0)]
    with pytest.raises(SchedulingError, match="stage 1"):
        run_training(init_params(2, 3, 2, 0), table, buckets, tiny_cfg)


def test_training_work_within_envelope(tiny_cfg, monkeypatch):
    # sample-gradient evaluations: pretrain sees each prefix E1 times, stage m
    # sees its buffer once per epoch
    work = []
    real = scheduler.batch_loss_grad

    def counting(params, table, ids, weights, masks=None, compute_grad=True):
        if compute_grad:
            work.append(len(ids))
        return real(params, table, ids, weights, masks, compute_grad)

    monkeypatch.setattr(scheduler, "batch_loss_grad", counting)
    table, _, _, _, log = tiny_run(tiny_cfg)
    e1 = tiny_cfg.curriculum.pretrain_epochs
    bound = e1 * len(table) + sum(s["epochs"] * s["buffer_size"] for s in log.stages)
    assert sum(work) <= bound
