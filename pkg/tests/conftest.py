from __future__ import annotations

from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from spike_edcr.edcr import RuleData, build_conditions
from spike_edcr.market_data import PricePoint, PriceSeries
from spike_edcr.model_pool import PredictionMatrix

# sample counts of the four metal corpora the defaults were tuned against
CORPUS_SIZES = {"cobalt": 1039, "copper": 1008, "magnesium": 716, "nickel": 1006}


def make_series(opens: list[float] | np.ndarray, symbol: str = "TEST", start: date = date(2021, 1, 1)) -> PriceSeries:
    return PriceSeries(
        symbol=symbol,
        points=tuple(
            PricePoint(date=start + timedelta(days=i), open=float(v), high=float(v), low=float(v))
            for i, v in enumerate(opens)
        ),
    )


def make_rule_data(
    base: list[int] | np.ndarray,
    truths: list[int] | np.ndarray,
    fires: dict[str, set[int] | np.ndarray],
    primary: str = "BASE",
) -> RuleData:
    """Build RuleData where ``fires[name]`` lists the samples on which model ``name`` predicts spike."""
    base = np.asarray(base, dtype=np.int8)
    m = len(base)
    names = [primary, *fires]
    values = np.zeros((len(names), m), dtype=np.int8)
    values[0] = base
    for row, name in enumerate(fires, start=1):
        spec = fires[name]
        if isinstance(spec, np.ndarray):
            # a full 0/1 column
            values[row] = spec
        else:
            values[row, sorted(spec)] = 1
    matrix = PredictionMatrix(model_names=tuple(names), sample_indices=np.arange(m), values=values)
    return RuleData(matrix=matrix, base_preds=base, truths=np.asarray(truths, dtype=np.int8))


def spike_truth(m: int, spikes: set[int]) -> np.ndarray:
    t = np.zeros(m, dtype=np.int8)
    t[sorted(spikes)] = 1
    return t


@pytest.fixture
def f1_data() -> RuleData:
    """Fixture F1: primary predicts no everywhere; truth spike on {0,1,2}; c1 fires on {0,1,5}, c2 on {2}."""
    return make_rule_data(
        base=np.zeros(10, dtype=np.int8),
        truths=spike_truth(10, {0, 1, 2}),
        fires={"C1": {0, 1, 5}, "C2": {2}},
    )


@pytest.fixture
def f2_data() -> RuleData:
    """Fixture F2: F1 with the primary predicting spike on {0,5}."""
    return make_rule_data(
        base=spike_truth(10, {0, 5}),
        truths=spike_truth(10, {0, 1, 2}),
        fires={"C1": {0, 1, 5}, "C2": {2}},
    )


@pytest.fixture
def f1_conditions(f1_data: RuleData):
    c1, c2 = build_conditions(f1_data.matrix, "BASE")
    assert (c1.model_name, c2.model_name) == ("C1", "C2")
    return c1, c2


def random_instance(seed: int, n_conditions: int, n_samples: int) -> tuple[RuleData, list]:
    """Random primary/truth/condition columns with conditions loosely correlated to the truth."""
    rng = np.random.default_rng(seed)
    truths = (rng.random(n_samples) < 0.2).astype(np.int8)
    # primary misses about half the spikes and raises some false alarms
    base = np.where(rng.random(n_samples) < 0.5, truths, 0).astype(np.int8)
    base[(truths == 0) & (rng.random(n_samples) < 0.05)] = 1
    fires: dict[str, np.ndarray] = {}
    for i in range(n_conditions):
        hit = rng.uniform(0.05, 0.9)
        false_alarm = rng.uniform(0.0, 0.3)
        col = np.where(truths == 1, rng.random(n_samples) < hit, rng.random(n_samples) < false_alarm)
        fires[f"M{i:03d}"] = col.astype(np.int8)
    data = make_rule_data(base, truths, fires)
    return data, build_conditions(data.matrix, "BASE")


@pytest.fixture
def repo_root() -> Path:
    return Path(__file__).resolve().parents[1]
