"""Quality scores between an original and a reconstructed feature.

All reductions run in float64 regardless of the float32 payloads; sums over
millions of elements would otherwise lose precision. Degenerate inputs (zero
norms, constant token rows) raise DegenerateError; score_all converts that
into an explicit undefined score rather than dropping the entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateError, ShapeError
from .store import FeatureTensor, flatten_2d

_BOUND_SLACK = 1e-9


class Metric(str, Enum):
    MSE = "mse"
    COSINE = "cosine"
    CKA = "cka"


class Orientation(Enum):
    LOWER_IS_BETTER = "lower_is_better"
    HIGHER_IS_BETTER = "higher_is_better"


ORIENTATIONS = {
    Metric.MSE: Orientation.LOWER_IS_BETTER,
    Metric.COSINE: Orientation.HIGHER_IS_BETTER,
    Metric.CKA: Orientation.HIGHER_IS_BETTER,
}

_BOUNDS = {
    Metric.MSE: (0.0, math.inf),
    Metric.COSINE: (-1.0, 1.0),
    Metric.CKA: (0.0, 1.0),
}


@dataclass(frozen=True)
class QualityScore:
    """A metric name and its scalar value; value None means undefined."""

    metric: Metric
    value: float | None

    def __post_init__(self) -> None:
        if self.value is not None:
            lo, hi = _BOUNDS[self.metric]
            if not (lo - _BOUND_SLACK <= self.value <= hi + _BOUND_SLACK):
                raise ValueError(f"{self.metric.value} value {self.value} out of range")

    @property
    def orientation(self) -> Orientation:
        return ORIENTATIONS[self.metric]


def _check_shapes(f: FeatureTensor, g: FeatureTensor) -> None:
    if f.shape != g.shape:
        raise ShapeError(f"shape mismatch: {f.shape} vs {g.shape}")


def mse(f: FeatureTensor, g: FeatureTensor) -> QualityScore:
    """Mean squared element-wise difference."""
    _check_shapes(f, g)
    d = f.values.astype(np.float64).ravel() - g.values.astype(np.float64).ravel()
    return QualityScore(Metric.MSE, float(np.dot(d, d) / d.size))


def cosine(f: FeatureTensor, g: FeatureTensor, per_token: bool = False) -> QualityScore:
    """Cosine similarity of the fully flattened tensors.

    per_token=True averages the per-row cosine over the token rows instead;
    the flattened form is the default.
    """
    _check_shapes(f, g)
    if per_token:
        x = flatten_2d(f).astype(np.float64)
        y = flatten_2d(g).astype(np.float64)
        nx = np.linalg.norm(x, axis=1)
        ny = np.linalg.norm(y, axis=1)
        if (nx == 0).any() or (ny == 0).any():
            raise DegenerateError("zero-norm token row")
        value = float(np.mean((x * y).sum(axis=1) / (nx * ny)))
        return QualityScore(Metric.COSINE, value)
    x = f.values.astype(np.float64).ravel()
    y = g.values.astype(np.float64).ravel()
    xx = float(np.dot(x, x))
    yy = float(np.dot(y, y))
    if xx == 0.0 or yy == 0.0:
        raise DegenerateError("zero-norm input")
    # sqrt(xx * yy) keeps cosine(f, f) exactly 1: sqrt(s*s) == s in IEEE-754.
    return QualityScore(Metric.COSINE, float(np.dot(x, y)) / math.sqrt(xx * yy))


def _centered_views(f: FeatureTensor, g: FeatureTensor) -> tuple[np.ndarray, np.ndarray]:
    x = flatten_2d(f).astype(np.float64)
    y = flatten_2d(g).astype(np.float64)
    if x.shape[0] < 2:
        raise ShapeError("CKA needs at least 2 token rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    if not xc.any() or not yc.any():
        raise DegenerateError("centered matrix is all zero")
    return xc, yc


def _cka_from_cross(xty: np.ndarray, xtx: np.ndarray, yty: np.ndarray) -> float:
    num = float((xty * xty).sum())
    a = float((xtx * xtx).sum())
    b = float((yty * yty).sum())
    return num / math.sqrt(a * b)


def _cka_feature_path(xc: np.ndarray, yc: np.ndarray) -> float:
    """||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) on d x d products."""
    return _cka_from_cross(yc.T @ xc, xc.T @ xc, yc.T @ yc)


def _cka_gram_path(xc: np.ndarray, yc: np.ndarray) -> float:
    """Normalized HSIC of the n x n centered Gram matrices; equals the feature path."""
    k = xc @ xc.T
    l = yc @ yc.T
    num = float((k * l).sum())
    return num / math.sqrt(float((k * k).sum()) * float((l * l).sum()))


def linear_cka(f: FeatureTensor, g: FeatureTensor) -> QualityScore:
    """Linear centered kernel alignment over the token-by-channel views."""
    _check_shapes(f, g)
    xc, yc = _centered_views(f, g)
    n, d = xc.shape
    value = _cka_gram_path(xc, yc) if n <= d else _cka_feature_path(xc, yc)
    return QualityScore(Metric.CKA, value)


def score_all(f: FeatureTensor, g: FeatureTensor) -> list[QualityScore]:
    """All three scores in fixed order; degenerate ones become undefined."""
    _check_shapes(f, g)
    scores = [mse(f, g)]
    for metric, fn in ((Metric.COSINE, cosine), (Metric.CKA, linear_cka)):
        try:
            scores.append(fn(f, g))
        except DegenerateError:
            scores.append(QualityScore(metric, None))
    return scores


def format_score_value(value: float | None) -> str:
    """CSV cell for a possibly-undefined score."""
    return "undefined" if value is None else repr(value)
