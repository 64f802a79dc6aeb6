from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Protocol

import numpy as np
import pandas as pd

from .config import PoolConfig
from .dataset import LabeledDataset
from .types import Label, PredictionFormatError, TrainingDivergedError
from .utils import worker_count

LOGGER = logging.getLogger(__name__)

PredictorKind = Literal["builtin-logistic", "builtin-zdetector", "imported"]


@dataclass(frozen=True, slots=True)
class PredictorSpec:
    name: str
    kind: PredictorKind
    params: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind, "params": dict(sorted(self.params.items()))}


class Predictor(Protocol):
    @property
    def spec(self) -> PredictorSpec: ...

    @property
    def n_features(self) -> int: ...

    def predict(self, features: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, slots=True)
class PredictionMatrix:
    model_names: tuple[str, ...]
    sample_indices: np.ndarray
    # int8, shape (len(model_names), len(sample_indices))
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.model_names), len(self.sample_indices)):
            raise PredictionFormatError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.model_names)} models x {len(self.sample_indices)} samples"
            )
        if len(set(self.model_names)) != len(self.model_names):
            raise PredictionFormatError(f"duplicate model names in {list(self.model_names)}")
        if self.values.size and not np.isin(self.values, (Label.NO, Label.SPIKE)).all():
            raise PredictionFormatError("prediction values must be 0 (no) or 1 (spike)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row(self, name: str) -> np.ndarray:
        try:
            return self.values[self.model_names.index(name)]
        except ValueError:
            raise KeyError(f"model {name!r} not in prediction matrix") from None

    def select(self, sample_indices: np.ndarray) -> "PredictionMatrix":
        position = {int(s): i for i, s in enumerate(self.sample_indices)}
        missing = [int(s) for s in sample_indices if int(s) not in position]
        if missing:
            raise PredictionFormatError(f"predictions missing for sample indices {missing[:5]}")
        cols = np.array([position[int(s)] for s in sample_indices], dtype=np.int64)
        return PredictionMatrix(
            model_names=self.model_names,
            sample_indices=np.asarray(sample_indices, dtype=np.int64),
            values=self.values[:, cols],
        )

    def without(self, names: set[str]) -> "PredictionMatrix":
        keep = [i for i, n in enumerate(self.model_names) if n not in names]
        return PredictionMatrix(
            model_names=tuple(self.model_names[i] for i in keep),
            sample_indices=self.sample_indices,
            values=self.values[keep],
        )

    def canonical(self) -> "PredictionMatrix":
        model_order = sorted(range(len(self.model_names)), key=lambda i: self.model_names[i])
        sample_order = np.argsort(self.sample_indices, kind="stable")
        return PredictionMatrix(
            model_names=tuple(self.model_names[i] for i in model_order),
            sample_indices=self.sample_indices[sample_order],
            values=self.values[model_order][:, sample_order],
        )

    def equals(self, other: "PredictionMatrix") -> bool:
        return (
            self.model_names == other.model_names
            and np.array_equal(self.sample_indices, other.sample_indices)
            and np.array_equal(self.values, other.values)
        )


# ---------------------------------------------------------------- logistic


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_loss_and_grad(
    weights: np.ndarray,
    bias: float,
    features: np.ndarray,
    targets: np.ndarray,
    pos_weight: float = 1.0,
) -> tuple[float, np.ndarray, float]:
    """Mean class-weighted cross-entropy and its analytic gradient."""
    z = features @ weights + bias
    y = targets.astype(float)
    scale = np.where(y > 0, pos_weight, 1.0)
    per_sample = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    loss = float(np.mean(scale * per_sample))
    residual = scale * (_sigmoid(z) - y)
    m = len(y)
    return loss, features.T @ residual / m, float(residual.sum() / m)


@dataclass(slots=True)
class LogisticPredictor:
    spec: PredictorSpec
    weights: np.ndarray
    bias: float
    feature_idx: np.ndarray
    n_features: int
    loss_history: list[float] = field(default_factory=list)

    def predict(self, features: np.ndarray) -> np.ndarray:
        # probability > 0.5 exactly when the logit is positive
        z = features[:, self.feature_idx] @ self.weights + self.bias
        return (z > 0).astype(np.int8)


def train_logistic(
    train: LabeledDataset,
    lr: float,
    epochs: int,
    seed: int,
    *,
    pos_weight: float = 1.0,
    feature_fraction: float = 1.0,
    name: str = "LOGIT",
) -> LogisticPredictor:
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    if lr <= 0:
        raise ValueError("learning rate must be > 0")

    d = train.n_features
    if feature_fraction < 1.0:
        rng = np.random.default_rng(seed)
        size = max(1, int(round(feature_fraction * d)))
        feature_idx = np.sort(rng.choice(d, size=size, replace=False))
    else:
        feature_idx = np.arange(d)

    x = train.features[:, feature_idx]
    y = train.labels
    weights = np.zeros(len(feature_idx))
    bias = 0.0
    history: list[float] = []

    for epoch in range(epochs):
        loss, grad_w, grad_b = logistic_loss_and_grad(weights, bias, x, y, pos_weight)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad_w)):
            raise TrainingDivergedError(epoch, loss)
        history.append(loss)
        weights = weights - lr * grad_w
        bias = bias - lr * grad_b
    final_loss, _, _ = logistic_loss_and_grad(weights, bias, x, y, pos_weight)
    if not np.isfinite(final_loss):
        raise TrainingDivergedError(epochs, final_loss)
    history.append(final_loss)

    spec = PredictorSpec(
        name=name,
        kind="builtin-logistic",
        params={
            "lr": lr,
            "epochs": epochs,
            "seed": seed,
            "pos_weight": pos_weight,
            "feature_fraction": feature_fraction,
        },
    )
    LOGGER.debug("Trained %s: loss %.6f -> %.6f", name, history[0], history[-1])
    return LogisticPredictor(
        spec=spec,
        weights=weights,
        bias=bias,
        feature_idx=feature_idx,
        n_features=d,
        loss_history=history,
    )


# ---------------------------------------------------------------- z-score


@dataclass(frozen=True, slots=True)
class ZScoreDetector:
    """Fires when the last known return is an outlier against the returns before it."""

    window: int
    threshold: float
    n: int

    @property
    def spec(self) -> PredictorSpec:
        return PredictorSpec(
            name=f"ZDET-{self.window}-{self.threshold:g}",
            kind="builtin-zdetector",
            params={"window": self.window, "threshold": self.threshold},
        )

    @property
    def n_features(self) -> int:
        return 2 * self.n - 1

    def predict(self, features: np.ndarray) -> np.ndarray:
        returns = features[:, self.n:]
        last = returns[:, -1]
        trailing = returns[:, -1 - self.window:-1]
        mean = trailing.mean(axis=1)
        std = trailing.std(axis=1, ddof=1)
        return (np.abs(last - mean) > self.threshold * std).astype(np.int8)


def make_zscore_detectors(grid: list[tuple[int, float]], n: int = 20) -> list[ZScoreDetector]:
    detectors: list[ZScoreDetector] = []
    for window, threshold in grid:
        if window < 2 or threshold <= 0:
            raise ValueError(f"invalid z-score detector ({window}, {threshold})")
        if window > n - 2:
            raise ValueError(f"z-score window {window} needs more than the {n - 1} returns in a sample")
        detectors.append(ZScoreDetector(window=window, threshold=threshold, n=n))
    return detectors


# ---------------------------------------------------------------- pool


def build_builtin_pool(train: LabeledDataset, cfg: PoolConfig, seed: int) -> list[Predictor]:
    def fit(item: tuple[int, Any]) -> LogisticPredictor:
        i, variant = item
        return train_logistic(
            train,
            lr=variant.lr,
            epochs=variant.epochs,
            seed=seed + i,
            pos_weight=variant.pos_weight,
            feature_fraction=variant.feature_fraction,
            name=f"LOGIT-{i}",
        )

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        logistic = list(pool.map(fit, enumerate(cfg.logistic, start=1)))

    predictors: list[Predictor] = [*logistic, *make_zscore_detectors(cfg.zscore, train.n)]
    names = [p.spec.name for p in predictors]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate predictor names in pool: {names}")
    LOGGER.info("Built pool: %s", ", ".join(names))
    return predictors


def predict_matrix(pool: list[Predictor], ds: LabeledDataset) -> PredictionMatrix:
    if not pool:
        raise ValueError("predictor pool is empty")
    for predictor in pool:
        if predictor.n_features != ds.n_features:
            raise ValueError(
                f"{predictor.spec.name} expects {predictor.n_features} features, dataset has {ds.n_features}"
            )

    def run(predictor: Predictor) -> np.ndarray:
        return np.asarray(predictor.predict(ds.features), dtype=np.int8)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool_exec:
        rows = list(pool_exec.map(run, pool))

    return PredictionMatrix(
        model_names=tuple(p.spec.name for p in pool),
        sample_indices=ds.indices.copy(),
        values=np.vstack(rows) if rows else np.zeros((0, len(ds)), dtype=np.int8),
    )


def merge_matrices(*matrices: PredictionMatrix) -> PredictionMatrix:
    present = [m for m in matrices if m is not None]
    if not present:
        raise ValueError("nothing to merge")
    base = present[0]
    names: list[str] = []
    rows: list[np.ndarray] = []
    for m in present:
        if not np.array_equal(m.sample_indices, base.sample_indices):
            m = m.select(base.sample_indices)
        for name in m.model_names:
            if name in names:
                raise PredictionFormatError(f"duplicate model name {name!r} across merged pools")
        names.extend(m.model_names)
        rows.append(m.values)
    return PredictionMatrix(
        model_names=tuple(names),
        sample_indices=base.sample_indices,
        values=np.vstack(rows),
    )


# ---------------------------------------------------------------- CSV codec


def _raw_header(path: Path) -> list[str]:
    # pandas renames repeated headers (CNN1 -> CNN1.1), so read the first row as data
    try:
        head = pd.read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise PredictionFormatError(f"{path}: empty prediction file") from e
    return [str(c).strip() for c in head.iloc[0].tolist()]


def import_predictions(path: Path) -> PredictionMatrix:
    header = _raw_header(path)
    if not header or header[0] != "sample_index":
        raise PredictionFormatError(f"{path}: header must start with sample_index")
    model_names = tuple(header[1:])
    if not model_names:
        raise PredictionFormatError(f"{path}: no model columns")
    duplicates = sorted({n for n in model_names if model_names.count(n) > 1})
    if duplicates:
        raise PredictionFormatError(f"{path}: duplicate model columns {duplicates}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise PredictionFormatError(f"{path}: ragged rows ({e})") from e

    try:
        indices = frame.iloc[:, 0].astype(int).to_numpy(dtype=np.int64)
    except ValueError as e:
        raise PredictionFormatError(f"{path}: non-integer sample_index") from e
    if len(indices) > 1 and np.any(np.diff(indices) <= 0):
        raise PredictionFormatError(f"{path}: sample_index must be strictly ascending")

    values = np.zeros((len(model_names), len(indices)), dtype=np.int8)
    for col, name in enumerate(model_names):
        for row, token in enumerate(frame.iloc[:, col + 1]):
            token = token.strip() if isinstance(token, str) else ""
            if token == "":
                raise PredictionFormatError(f"{path}: ragged row for sample {indices[row]}")
            if token not in {"0", "1"}:
                raise PredictionFormatError(f"{path}: unknown label token {token!r} for {name} at sample {indices[row]}")
            values[col, row] = int(token)
    LOGGER.info("Imported predictions from %s: models=%s samples=%s", path, len(model_names), len(indices))
    return PredictionMatrix(model_names=model_names, sample_indices=indices, values=values)


def export_predictions(m: PredictionMatrix, path: Path) -> Path:
    if not m.model_names:
        raise ValueError("cannot export a prediction matrix without models")
    canon = m.canonical()
    frame = pd.DataFrame(canon.values.T.astype(int), columns=list(canon.model_names))
    frame.insert(0, "sample_index", canon.sample_indices.astype(int))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
