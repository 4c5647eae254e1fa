import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cctrain.dataset import PrefixTable, TimeSeries
from cctrain.errors import ContractError
from cctrain.importance import (
    ImportanceTable,
    export_beta_csv,
    importance_gradient,
    importance_objective,
    importance_threshold,
    select_replay,
    update_importance,
)

from oracles import central_difference, rel_error


def table(betas, **kw):
    return ImportanceTable(dict(enumerate(map(float, betas))), **kw)


def test_objective_examples():
    t = table([1.0, 1.0, 1.0], lam=3.7)
    assert importance_objective({0: 0.2, 1: 0.4, 2: 0.9}, t) == pytest.approx(0.5)
    assert importance_objective({0: 5.0}, table([0.0], lam=0.1)) == pytest.approx(0.1)
    assert importance_objective({0: 1.0, 1: 2.0}, table([1.0, 2.0], lam=0.0)) == pytest.approx(4.5)


def test_zero_loss_fixed_point():
    t = update_importance(table([1.0]), {0: 0.0})
    assert t.beta[0] == 1.0
    assert importance_gradient({0: 0.0}, table([1.0])) == {0: 0.0}


def test_converges_to_fixed_point():
    t = table([1.0], lam=0.1, lr_beta=0.05)
    for _ in range(500):
        update_importance(t, {0: 1.0})
    assert abs(t.beta[0] - 0.1 / 1.1) < 1e-3


def test_single_step_hand_value():
    t = update_importance(table([1.0], lam=0.0), {0: 1.0}, lr_beta=0.1)
    assert t.beta[0] == pytest.approx(0.8, abs=1e-15)


def test_narrative_polarity_raises_hard_samples():
    t = table([1.0, 1.0], polarity="narrative", lam=0.1)
    update_importance(t, {0: 0.1, 1: 3.0})
    assert t.beta[1] > t.beta[0] > 1.0
    w = table([1.0, 1.0], lam=0.1)
    update_importance(w, {0: 0.1, 1: 3.0})
    assert w.beta[1] < w.beta[0] < 1.0


def test_clamped_to_range():
    t = table([0.01, 9.99], lr_beta=10.0, polarity="narrative")
    update_importance(t, {0: 0.0, 1: 50.0})
    assert 0.0 <= t.beta[0] and t.beta[1] == 10.0
    t = table([0.01], lr_beta=10.0, lam=0.0)
    update_importance(t, {0: 5.0})
    assert t.beta[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(
    betas=st.lists(st.floats(0.0, 3.0), min_size=1, max_size=8),
    lam=st.floats(0.0, 1.0),
    seed=st.integers(0, 1000),
)
def test_gradient_matches_finite_differences(betas, lam, seed):
    rng = np.random.default_rng(seed)
    losses = dict(enumerate(rng.uniform(0, 3, len(betas)).tolist()))
    t = table(betas, lam=lam)
    analytic = [importance_gradient(losses, t)[i] for i in range(len(betas))]

    def f(vec):
        return importance_objective(losses, table(vec, lam=lam))

    assert rel_error(analytic, central_difference(f, betas)).max() <= 1e-4


def test_threshold_examples():
    assert importance_threshold(table([1.0, 1.0, 1.0])) == 1.0
    assert importance_threshold(table([0.5, 1.5])) == 1.0
    assert importance_threshold(table([0.2, 0.4, 1.0, 2.4])) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ContractError):
        importance_threshold(ImportanceTable())


def test_threshold_replay_examples():
    assert select_replay(table([1.0] * 4)).ids == ()
    sel = select_replay(table([0.5, 1.5]))
    assert sel.ids == (1,) and sel.epsilon == 1.0


def test_fraction_replay_top_k():
    rng = np.random.default_rng(3)
    betas = rng.uniform(0, 2, 10)
    sel = select_replay(table(betas), "fraction", 5)
    assert sel.ids == tuple(sorted(np.argsort(-betas)[:2]))
    assert sel.fraction == pytest.approx(0.2)


def test_fraction_ties_by_id():
    sel = select_replay(table([1.0, 2.0, 1.0, 1.0, 2.0]), "fraction", 2)
    assert sel.ids == (0, 1, 4)


def test_none_mode():
    assert len(select_replay(table([0.1, 3.0]), "none")) == 0


@settings(max_examples=100, deadline=None)
@given(betas=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30), M=st.integers(1, 6))
def test_selection_properties(betas, M):
    t = table(betas)
    thr = select_replay(t, "threshold")
    assert all(t.beta[i] > thr.epsilon for i in thr.ids)
    assert all(t.beta[i] <= thr.epsilon for i in set(t.beta) - set(thr.ids))
    frac = select_replay(t, "fraction", M)
    assert len(frac) == -(-len(betas) // M)
    worst_kept = min(t.beta[i] for i in frac.ids)
    assert all(t.beta[i] <= worst_kept for i in set(t.beta) - set(frac.ids))


def test_restricted_keeps_history():
    t = table([0.3, 0.7])
    r = t.restricted([1, 5])
    assert r.beta == {1: 0.7, 5: 1.0}
    with pytest.raises(ContractError):
        r.values([0])


def test_export_beta_csv(tmp_path):
    pt = PrefixTable.from_series([TimeSeries("a", np.zeros((2, 1)), 0), TimeSeries("b", np.zeros((1, 1)), 1)])
    export_beta_csv(table([0.5, 1.0, 2.0]), pt, tmp_path / "b.csv")
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert [(r["series_id"], r["t"], float(r["beta"])) for r in rows] == [("a", "1", 0.5), ("a", "2", 1.0), ("b", "1", 2.0)]
