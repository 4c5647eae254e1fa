import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cctrain.dataset import PrefixTable, TimeSeries
from cctrain.errors import ContractError, UndefinedMetricError
from cctrain.evaluation import (
    AccuracyMatrix,
    accuracy_matrix,
    auc_from_proba,
    auc_roc,
    decile_length,
    prediction_interval,
    prefix_profile,
    random_baseline,
    transfer_metrics,
)
from cctrain.model import init_params, zero_params

from oracles import brute_auc, scalar_gru_proba


# ----------------------------------------------------------------------- AUC


def test_auc_examples():
    assert auc_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc_roc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        auc_roc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(
    data=st.lists(
        st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), st.booleans()),
        min_size=2, max_size=50,
    )
)
def test_auc_matches_pairwise_enumeration(data):
    scores, labels = zip(*data)
    if all(labels) or not any(labels):
        return
    assert abs(auc_roc(scores, labels) - brute_auc(scores, labels)) <= 1e-12


def test_multiclass_macro():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(3), 30)
    labels = np.arange(30) % 3
    expected = np.mean([brute_auc(probs[:, c], labels == c) for c in range(3)])
    assert auc_from_proba(probs, labels) == pytest.approx(expected, abs=1e-12)
    two = rng.dirichlet(np.ones(2), 10)
    assert auc_from_proba(two, np.arange(10) % 2) == auc_roc(two[:, 1], np.arange(10) % 2)


# -------------------------------------------------------------- prefix profile


def test_decile_lengths():
    assert decile_length(10, 48) == 4
    assert decile_length(100, 48) == 48
    assert decile_length(10, 5) == 1


def _test_series(rng, n=12, T=10):
    return [TimeSeries(f"s{i}", rng.standard_normal((T, 2)), i % 2) for i in range(n)]


def test_untrained_profile_is_half(rng):
    prof = prefix_profile(zero_params(2, 4, 2), _test_series(rng))
    assert prof.values == (0.5,) * 10 and prof.mean == 0.5


def test_full_length_value_recomputed(rng):
    series = _test_series(rng, T=7)
    p = init_params(2, 4, 2, 3)
    prof = prefix_profile(p, series)
    scores = [scalar_gru_proba(p, s.values)[1] for s in series]
    assert prof.as_dict()[100] == pytest.approx(brute_auc(scores, [s.label for s in series]), abs=1e-12)


def test_profile_empty_split():
    with pytest.raises(ContractError):
        prefix_profile(zero_params(2, 3, 2), [])


# --------------------------------------------------------------- BWT and FWT


def test_no_forgetting_means_zero_bwt():
    R = np.array([[0.7, 0.5, 0.4], [0.6, 0.8, 0.5], [0.7, 0.8, 0.9]])
    assert transfer_metrics(AccuracyMatrix(R, np.full(3, 0.5)))[0] == 0.0


def test_two_task_hand_case():
    bwt, fwt = transfer_metrics(AccuracyMatrix(np.array([[0.9, 0.6], [0.8, 0.85]]), np.array([0.5, 0.5])))
    assert bwt == pytest.approx(-0.1, abs=1e-15) and fwt == pytest.approx(0.1, abs=1e-15)


def test_three_task_oracle():
    R = np.array([[0.61, 0.52, 0.47], [0.66, 0.73, 0.58], [0.64, 0.71, 0.82]])
    b = np.array([0.50, 0.49, 0.53])
    # spelled-out sums
    bwt = ((0.64 - 0.61) + (0.71 - 0.73)) / 2
    fwt = ((0.52 - 0.49) + (0.58 - 0.53)) / 2
    got = transfer_metrics(AccuracyMatrix(R, b))
    assert abs(got[0] - bwt) <= 1e-12 and abs(got[1] - fwt) <= 1e-12


def test_transfer_needs_two_tasks():
    with pytest.raises(ContractError):
        transfer_metrics(AccuracyMatrix(np.array([[0.7]]), np.array([0.5])))


def test_accuracy_matrix_shape(rng):
    table = PrefixTable.from_series(_test_series(rng, n=8, T=4))
    tasks = [np.arange(0, 16), np.arange(16, 32)]
    ckpts = [init_params(2, 3, 2, s) for s in (1, 2)]
    b = random_baseline(table, tasks, 2, 3, 2, [5, 6])
    acc = accuracy_matrix(ckpts, table, tasks, b)
    assert acc.R.shape == (2, 2) and acc.b.shape == (2,)
    assert np.all((acc.R >= 0) & (acc.R <= 1))
    with pytest.raises(ContractError):
        accuracy_matrix(ckpts[:1], table, tasks, b)


# ------------------------------------------------------- prediction interval


def test_identical_samples_degenerate_interval():
    iv, _ = prediction_interval(np.full((3, 12), 0.3), 0.1)
    np.testing.assert_array_equal(iv, np.full((3, 2), 0.3))


def test_grid_quantiles():
    grid = np.arange(100)[None, :] / 100.0
    iv, _ = prediction_interval(grid, 0.1)
    # linear interpolation on 0.00..0.99: positions 4.95 and 94.05
    assert iv[0, 0] == pytest.approx(0.0495, abs=1e-12)
    assert iv[0, 1] == pytest.approx(0.9405, abs=1e-12)
    assert abs(iv[0, 0] - 0.05) < 0.005 and abs(iv[0, 1] - 0.945) < 0.005


def test_calibrated_noncoverage():
    rng = np.random.default_rng(0)
    samples = rng.standard_normal((1000, 200))
    held = rng.standard_normal(1000)
    _, nc = prediction_interval(samples, 0.1, held)
    assert 0.05 <= nc <= 0.15


def test_interval_contract():
    with pytest.raises(ContractError):
        prediction_interval(np.zeros((2, 9)), 0.1)
    with pytest.raises(ContractError):
        prediction_interval(np.zeros((2, 10)), 1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), alpha=st.floats(0.01, 0.99))
def test_interval_ordered_and_within_range(seed, alpha):
    s = np.random.default_rng(seed).random((5, 15))
    iv, _ = prediction_interval(s, alpha)
    assert np.all(iv[:, 0] <= iv[:, 1])
    assert np.all(iv[:, 0] >= s.min(axis=1)) and np.all(iv[:, 1] <= s.max(axis=1))
