from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .market_data import LabelSeries, PriceSeries
from .types import UNDEFINED, Label

LOGGER = logging.getLogger(__name__)

FEATURE_SPEC = "zscore(open[t-n:t]) ++ returns(open[t-n:t])"


@dataclass(frozen=True, slots=True)
class LabeledDataset:
    """Chronologically ordered samples held as aligned arrays."""

    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n: int
    feature_spec: str = FEATURE_SPEC

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or len(self.features) != len(self.indices) or len(self.labels) != len(self.indices):
            raise ValueError("dataset arrays are not aligned")
        if len(self.indices) > 1 and np.any(np.diff(self.indices) <= 0):
            raise ValueError("sample indices must be strictly increasing")
        if not np.isin(self.labels, (Label.NO, Label.SPIKE)).all():
            raise ValueError("dataset labels must be spike or no")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, start: int, stop: int) -> "LabeledDataset":
        return LabeledDataset(
            indices=self.indices[start:stop],
            features=self.features[start:stop],
            labels=self.labels[start:stop],
            n=self.n,
            feature_spec=self.feature_spec,
        )


@dataclass(frozen=True, slots=True)
class Split:
    train: LabeledDataset
    test: LabeledDataset
    ratio: float


def window_features(window: np.ndarray) -> np.ndarray:
    """z-normalized opens (population std, 0 for flat windows) followed by one-day returns."""
    mean = window.mean(axis=-1, keepdims=True)
    std = window.std(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, (window - mean) / np.where(std > 0, std, 1.0), 0.0)
        returns = window[..., 1:] / window[..., :-1] - 1.0
    return np.concatenate([z, returns], axis=-1)


def build_samples(series: PriceSeries, labels: LabelSeries, n: int = 20) -> LabeledDataset:
    if n < 2:
        raise ValueError("sample window n must be >= 2")
    if len(labels) != len(series):
        raise ValueError(f"labels ({len(labels)}) not aligned to series ({len(series)})")

    opens = series.opens
    eligible = np.flatnonzero(labels.labels != UNDEFINED)
    eligible = eligible[eligible >= n]
    if len(eligible) == 0:
        raise ValueError(f"no eligible samples for n={n} in series of length {len(series)}")

    # windows[t - n] is opens[t - n : t]
    windows = sliding_window_view(opens[:-1], n)[eligible - n]
    features = window_features(windows)
    ds = LabeledDataset(
        indices=eligible.astype(np.int64),
        features=features,
        labels=labels.labels[eligible].astype(np.int8),
        n=n,
    )
    LOGGER.info("Built samples: n=%s count=%s features=%s spikes=%s", n, len(ds), ds.n_features, spike_count(ds))
    return ds


def spike_count(ds: LabeledDataset) -> int:
    return int(np.count_nonzero(ds.labels == Label.SPIKE))


def spike_prevalence(ds: LabeledDataset) -> float:
    return spike_count(ds) / len(ds) if len(ds) else 0.0


def chronological_split(ds: LabeledDataset, ratio: float = 0.6) -> Split:
    if not 0 < ratio < 1:
        raise ValueError("split ratio must be in (0, 1)")
    if len(ds) < 2:
        raise ValueError("need at least 2 samples to split")
    boundary = math.floor(ratio * len(ds))
    if boundary == 0 or boundary == len(ds):
        raise ValueError(f"split ratio {ratio} leaves one side empty for {len(ds)} samples")
    split = Split(train=ds.subset(0, boundary), test=ds.subset(boundary, len(ds)), ratio=ratio)
    LOGGER.info("Split: train=%s test=%s ratio=%s", len(split.train), len(split.test), ratio)
    return split


def write_dataset_csv(path: Path, ds: LabeledDataset) -> None:
    frame = pd.DataFrame(ds.features, columns=[f"f{i}" for i in range(ds.n_features)])
    frame.insert(0, "label", ds.labels.astype(int))
    frame.insert(0, "index", ds.indices.astype(int))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def read_dataset_csv(path: Path, n: int, feature_spec: str = FEATURE_SPEC) -> LabeledDataset:
    frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    if list(frame.columns[:2]) != ["index", "label"]:
        raise ValueError(f"{path}: expected header index,label,f0..")
    feature_cols = [c for c in frame.columns[2:]]
    return LabeledDataset(
        indices=frame["index"].to_numpy(dtype=np.int64),
        features=frame[feature_cols].to_numpy(dtype=float),
        labels=frame["label"].to_numpy(dtype=np.int8),
        n=n,
        feature_spec=feature_spec,
    )


def write_dataset_meta(path: Path, split: Split, symbol: str) -> None:
    meta = {
        "symbol": symbol,
        "n": split.train.n,
        "feature_spec": split.train.feature_spec,
        "ratio": split.ratio,
        "train_samples": len(split.train),
        "test_samples": len(split.test),
        "train_spikes": spike_count(split.train),
        "test_spikes": spike_count(split.test),
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_dataset_meta(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))
