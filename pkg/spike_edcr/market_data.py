from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .types import UNDEFINED, DuplicateDateError, Label, PriceParseError

LOGGER = logging.getLogger(__name__)

PRICE_COLUMNS = ("date", "open", "high", "low")
LABEL_TOKENS = {Label.SPIKE: "spike", Label.NO: "no", UNDEFINED: "undefined"}


@dataclass(frozen=True, slots=True)
class PricePoint:
    date: date
    open: float
    high: float
    low: float


@dataclass(frozen=True, slots=True)
class PriceSeries:
    symbol: str
    points: tuple[PricePoint, ...]

    def __post_init__(self) -> None:
        if not self.points:
            raise ValueError(f"price series {self.symbol!r} is empty")
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.date <= prev.date:
                raise ValueError(f"price series {self.symbol!r} dates not strictly ascending at {cur.date}")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def opens(self) -> np.ndarray:
        return np.array([p.open for p in self.points], dtype=float)

    @property
    def dates(self) -> list[date]:
        return [p.date for p in self.points]


@dataclass(frozen=True, slots=True)
class RollingStats:
    window: int
    # NaN where undefined (t < window)
    means: np.ndarray
    stds: np.ndarray

    def defined(self) -> np.ndarray:
        return ~np.isnan(self.means)


@dataclass(frozen=True, slots=True)
class LabelSeries:
    # int8: Label.SPIKE, Label.NO or UNDEFINED
    labels: np.ndarray
    window: int
    k: float

    def __len__(self) -> int:
        return len(self.labels)

    def spike_count(self) -> int:
        return int(np.count_nonzero(self.labels == Label.SPIKE))


def load_price_csv(path: Path, symbol: str) -> PriceSeries:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in PRICE_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}; expected header {','.join(PRICE_COLUMNS)}")

    points: list[PricePoint] = []
    seen: dict[date, int] = {}
    # data rows start on line 2 of the file
    for offset, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            day = date.fromisoformat(row.date.strip())
        except ValueError as e:
            raise PriceParseError(offset, f"malformed date {row.date!r}") from e
        values: list[float] = []
        for column in ("open", "high", "low"):
            raw = getattr(row, column).strip()
            try:
                values.append(float(raw))
            except ValueError as e:
                raise PriceParseError(offset, f"non-numeric {column} {raw!r}") from e
            if not np.isfinite(values[-1]):
                raise PriceParseError(offset, f"non-finite {column} {raw!r}")
        if day in seen:
            raise DuplicateDateError(f"{path}: date {day} appears on rows {seen[day]} and {offset}")
        seen[day] = offset
        points.append(PricePoint(date=day, open=values[0], high=values[1], low=values[2]))

    points.sort(key=lambda p: p.date)
    LOGGER.info("Loaded %s: rows=%s first=%s last=%s", symbol, len(points), points[0].date if points else "-", points[-1].date if points else "-")
    return PriceSeries(symbol=symbol, points=tuple(points))


def _trailing_std(values: np.ndarray, fallback: float) -> tuple[float, float]:
    if len(values) >= 2:
        mean = float(values.mean())
        std = float(values.std(ddof=1))
    else:
        mean = float(values[-1])
        std = 0.0
    return mean, (std if std > 0 else fallback)


def generate_synthetic(
    seed: int,
    length: int,
    start: float,
    drift: float,
    vol: float,
    jumps: list[tuple[int, float]],
    *,
    symbol: str = "SYNTH",
    start_date: date = date(2020, 1, 1),
    sigma_window: int = 20,
    band: float = 0.005,
) -> PriceSeries:
    """Geometric random walk with transient jumps.

    A jump ``(j, m)`` places ``open[j]`` at ``m`` trailing sample standard
    deviations from the trailing mean of the ``sigma_window`` opens before
    ``j``; the walk itself continues from the unjumped path.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    for index, _ in jumps:
        if not 1 <= index < length:
            raise ValueError(f"jump index {index} outside [1, {length}); index 0 is the fixed start")

    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(length - 1)
    log_steps = (drift - 0.5 * vol * vol) + vol * shocks
    opens = start * np.exp(np.concatenate(([0.0], np.cumsum(log_steps))))
    opens[0] = start

    for index, magnitude in sorted(jumps):
        trailing = opens[max(0, index - sigma_window) : index]
        mean, sigma = _trailing_std(trailing, max(vol, 1e-3) * abs(float(trailing.mean())))
        opens[index] = mean + magnitude * sigma

    points = tuple(
        PricePoint(
            date=start_date + timedelta(days=t),
            open=float(opens[t]),
            high=float(opens[t] * (1.0 + band)),
            low=float(opens[t] * (1.0 - band)),
        )
        for t in range(length)
    )
    return PriceSeries(symbol=symbol, points=points)


def random_jumps(
    seed: int,
    length: int,
    count: int,
    min_sigmas: float = 3.0,
    max_sigmas: float = 8.0,
    window: int = 20,
) -> list[tuple[int, float]]:
    eligible = length - window
    if count <= 0 or eligible <= 0:
        return []
    rng = np.random.default_rng([seed, 1])
    count = min(count, eligible)
    indices = np.sort(rng.choice(np.arange(window, length), size=count, replace=False))
    magnitudes = rng.uniform(min_sigmas, max_sigmas, size=count)
    signs = rng.choice(np.array([-1.0, 1.0]), size=count)
    return [(int(i), float(s * m)) for i, s, m in zip(indices, signs, magnitudes)]


def rolling_stats(series: PriceSeries, window: int) -> RollingStats:
    if window < 2:
        raise ValueError("rolling window must be >= 2")
    opens = series.opens
    if len(opens) <= window:
        raise ValueError(f"series of length {len(opens)} too short for window {window}")

    # windows[i] covers opens[i : i + window], the trailing window of day i + window
    windows = sliding_window_view(opens[:-1], window)
    means = np.full(len(opens), np.nan)
    stds = np.full(len(opens), np.nan)
    means[window:] = windows.mean(axis=1)
    stds[window:] = windows.std(axis=1, ddof=1)
    return RollingStats(window=window, means=means, stds=stds)


def label_spikes(series: PriceSeries, window: int = 20, k: float = 2.0) -> LabelSeries:
    stats = rolling_stats(series, window)
    opens = series.opens
    labels = np.full(len(opens), UNDEFINED, dtype=np.int8)
    defined = stats.defined()
    deviation = np.abs(opens[defined] - stats.means[defined])
    labels[defined] = np.where(deviation > k * stats.stds[defined], Label.SPIKE, Label.NO)
    result = LabelSeries(labels=labels, window=window, k=k)
    LOGGER.info(
        "Labeled %s: window=%s k=%s defined=%s spikes=%s",
        series.symbol,
        window,
        k,
        int(defined.sum()),
        result.spike_count(),
    )
    return result


def write_labels_csv(path: Path, series: PriceSeries, labels: LabelSeries, stats: RollingStats) -> None:
    frame = pd.DataFrame(
        {
            "date": [p.date.isoformat() for p in series.points],
            "open": [p.open for p in series.points],
            "high": [p.high for p in series.points],
            "low": [p.low for p in series.points],
            "mean": stats.means,
            "std": stats.stds,
            "label": [LABEL_TOKENS[int(v)] for v in labels.labels],
        }
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g", na_rep="")


def read_labels_csv(path: Path, symbol: str, window: int, k: float) -> tuple[PriceSeries, LabelSeries]:
    series = load_price_csv(path, symbol)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if "label" not in frame.columns:
        raise ValueError(f"{path}: no label column")
    reverse = {v: k_ for k_, v in LABEL_TOKENS.items()}
    try:
        by_date = {
            date.fromisoformat(d.strip()): reverse[t.strip()]
            for d, t in zip(frame["date"], frame["label"])
        }
    except KeyError as e:
        raise ValueError(f"{path}: unknown label token {e.args[0]!r}") from e
    labels = np.array([by_date[d] for d in series.dates], dtype=np.int8)
    return series, LabelSeries(labels=labels, window=window, k=k)
