import numpy as np
import pytest

from cctrain.config import RunConfig
from cctrain.dataset import Dataset, PrefixTable, Regime, SynthSpec, TimeSeries


def two_regime_spec(N=40, T=10, d=2, C=2):
    def regime(axis):
        means = np.zeros((C, d))
        means[:, axis % d] = np.linspace(-0.6, 0.6, C)
        return Regime(tuple(map(tuple, means)), tuple(map(tuple, np.ones((C, d)))))

    return SynthSpec(N=N, T=T, d=d, class_count=C, regimes=(regime(0), regime(1)))


def random_table(rng, n_series=3, T=4, d=2, C=2, ragged=True):
    series = []
    for i in range(n_series):
        length = int(rng.integers(1, T + 1)) if ragged else T
        series.append(TimeSeries(f"s{i}", rng.standard_normal((length, d)), int(rng.integers(C))))
    return PrefixTable.from_series(series)


def tiny_config(**overrides) -> RunConfig:
    """A config small enough to train end to end in about a second."""
    raw = {
        "data": {"synth": two_regime_spec().to_dict()},
        "model": {"hidden": 6, "batch_size": 8},
        "uncertainty": {"K": 5, "patience": 2, "epoch_cap": 4},
        "curriculum": {"M": 3},
        "evaluation": {"baseline_seeds": 2},
    }
    cfg = RunConfig().replace(**raw)
    return cfg.replace(**overrides) if overrides else cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
