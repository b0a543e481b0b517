"""Per-feature correlation of quality scores against true distortion labels.

Each original feature contributes one series of (score, label) pairs over the
rate ladder; PLCC measures linearity, SROCC monotonicity. Signs are never
rectified: a metric that decreases while distortion grows correlates
negatively and is reported that way. Constant series have no defined
correlation and yield None, which aggregation excludes and counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

MIN_SERIES_LENGTH = 3
DEFAULT_SERIES_LENGTH = 10


def _as_series_pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1 or xa.size != ya.size:
        raise ShapeError(f"series lengths differ: {xa.shape} vs {ya.shape}")
    if xa.size < MIN_SERIES_LENGTH:
        raise ShapeError(f"need at least {MIN_SERIES_LENGTH} points, got {xa.size}")
    return xa, ya


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    # Constant series are detected exactly; float mean-subtraction residue on a
    # constant input must not masquerade as variance.
    if (x == x[0]).all() or (y == y[0]).all():
        return None
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float(np.dot(xd, xd)) * float(np.dot(yd, yd)))
    if denom == 0.0:
        return None
    return float(np.dot(xd, yd)) / denom


def plcc(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson linear correlation; None when either series has zero variance."""
    return _pearson(*_as_series_pair(x, y))


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; ties receive the mean of their rank positions."""
    xa = np.asarray(x, dtype=np.float64)
    order = np.argsort(xa, kind="stable")
    ranks = np.empty(xa.size, dtype=np.float64)
    i = 0
    while i < xa.size:
        j = i
        while j + 1 < xa.size and xa[order[j + 1]] == xa[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srocc(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman rank correlation with average-rank ties; None on constant input."""
    xa, ya = _as_series_pair(x, y)
    return _pearson(average_ranks(xa), average_ranks(ya))


@dataclass
class Series:
    """One feature's paired scores and labels across the rate ladder."""

    feature_id: str
    scores: list[float]
    labels: list[float]
    metric: str = ""
    codec: str = ""
    task: str = ""

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.labels):
            raise ShapeError(
                f"{self.feature_id}: {len(self.scores)} scores vs {len(self.labels)} labels"
            )
        if len(self.scores) < MIN_SERIES_LENGTH:
            raise ShapeError(f"{self.feature_id}: series shorter than {MIN_SERIES_LENGTH}")


@dataclass
class SeriesCorrelation:
    feature_id: str
    metric: str
    plcc: float | None
    srocc: float | None
    codec: str = ""
    task: str = ""


@dataclass
class AggregateReport:
    codec: str
    task: str
    metric: str
    mean_plcc: float | None
    mean_srocc: float | None
    undefined_count: int


def evaluate_series(s: Series) -> SeriesCorrelation:
    """PLCC and SROCC of one series, signs kept."""
    return SeriesCorrelation(
        feature_id=s.feature_id,
        metric=s.metric,
        plcc=plcc(s.scores, s.labels),
        srocc=srocc(s.scores, s.labels),
        codec=s.codec,
        task=s.task,
    )


def aggregate(
    rows: list[SeriesCorrelation],
    group_keys: tuple[str, ...] = ("codec", "task", "metric"),
) -> list[AggregateReport]:
    """Arithmetic mean of the defined correlations per group, sorted by key."""
    if not rows:
        raise ValueError("aggregate needs at least one row")
    groups: dict[tuple[str, ...], list[SeriesCorrelation]] = {}
    for row in rows:
        key = tuple(getattr(row, k) for k in group_keys)
        groups.setdefault(key, []).append(row)
    reports = []
    for key in sorted(groups):
        members = groups[key]
        defined_p = [r.plcc for r in members if r.plcc is not None]
        defined_s = [r.srocc for r in members if r.srocc is not None]
        fields = dict(zip(group_keys, key))
        reports.append(
            AggregateReport(
                codec=fields.get("codec", ""),
                task=fields.get("task", ""),
                metric=fields.get("metric", ""),
                mean_plcc=float(np.mean(defined_p)) if defined_p else None,
                mean_srocc=float(np.mean(defined_s)) if defined_s else None,
                undefined_count=sum(1 for r in members if r.plcc is None),
            )
        )
    return reports


HISTOGRAM_BIN_TENTHS = tuple(range(-10, 11))


def _tenths(v: float) -> int:
    """Signed tenths after rounding half away from zero to one decimal."""
    return int(math.copysign(math.floor(abs(v) * 10.0 + 0.5), v))


def round_to_tenth(v: float) -> float:
    """Round half away from zero to one decimal."""
    return _tenths(v) / 10.0


def plcc_histogram(values: Iterable[float | None]) -> list[tuple[float, int]]:
    """Counts per 0.1-wide bin from -1.0 to 1.0; None entries are skipped."""
    counts = {t: 0 for t in HISTOGRAM_BIN_TENTHS}
    for v in values:
        if v is None:
            continue
        if not -1.0 - 1e-12 <= v <= 1.0 + 1e-12:
            raise ValueError(f"correlation {v} outside [-1, 1]")
        counts[min(max(_tenths(v), -10), 10)] += 1
    return [(t / 10.0, counts[t]) for t in HISTOGRAM_BIN_TENTHS]
