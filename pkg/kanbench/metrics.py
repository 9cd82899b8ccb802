"""Accuracy, generalization gap, TwoNN intrinsic dimension and the efficiency score."""

import logging
import math
from typing import Literal, Optional, Sequence, Union

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.neighbors import NearestNeighbors

from kanbench.errors import DimensionError, DomainError, EstimationError
from kanbench.models import EfficiencyInputs
from kanbench.tensor import Tensor

logger = logging.getLogger(__name__)

DUPLICATE_JITTER = 1e-12
MIN_POINTS = 10


def accuracy(logits: Union[Tensor, np.ndarray], labels: Union[Sequence[int], np.ndarray]) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    values = logits.values if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels)
    if values.ndim != 2 or values.shape[0] != labels.shape[0]:
        raise DimensionError(f"logits {values.shape} do not match {labels.shape[0]} labels")
    if labels.size == 0:
        return 0.0
    return float(np.mean(np.argmax(values, axis=1) == labels))


def generalization_gap(train_accuracy: float, test_accuracy: float) -> float:
    """Train minus test accuracy; negative when the model does better on test."""
    return float(train_accuracy) - float(test_accuracy)


def _jitter_duplicates(points: np.ndarray, seed: int) -> np.ndarray:
    _, first, counts = np.unique(points, axis=0, return_index=True, return_counts=True)
    if np.all(counts == 1):
        return points
    duplicate = np.ones(len(points), dtype=bool)
    duplicate[first] = False
    logger.debug("Jittering %d duplicate points before TwoNN", int(duplicate.sum()))
    points = points.copy()
    rng = np.random.default_rng(seed)
    points[duplicate] += DUPLICATE_JITTER * rng.standard_normal((int(duplicate.sum()), points.shape[1]))
    return points


def twonn_intrinsic_dimension(
    X: Union[Tensor, np.ndarray],
    method: Literal["mle", "regression"] = "mle",
    discard_fraction: float = 0.1,
    seed: int = 0,
) -> float:
    """Estimate the intrinsic dimension from ratios of second to first neighbor distances.

    ``mle`` returns N / sum(log mu). ``regression`` fits -log(1 - F(mu)) = d log(mu)
    through the origin after discarding the largest ``discard_fraction`` of ratios.
    """
    points = X.values if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError(f"TwoNN needs an [N x d] array, got shape {points.shape}")
    n = points.shape[0]
    if n < MIN_POINTS:
        raise EstimationError(f"TwoNN needs at least {MIN_POINTS} points, got {n}")
    if np.all(points == points[0]):
        raise EstimationError("all points are identical; intrinsic dimension is undefined")

    points = _jitter_duplicates(points, seed)
    neighbors = NearestNeighbors(n_neighbors=3, metric="euclidean").fit(points)
    distances, _ = neighbors.kneighbors(points)
    r1, r2 = distances[:, 1], distances[:, 2]
    if np.any(r1 <= 0):
        raise EstimationError("coincident points remain after jitter")
    log_mu = np.log(r2 / r1)

    if method == "mle":
        total = float(log_mu.sum())
        if total <= 0:
            raise EstimationError("every point has equidistant first and second neighbors")
        return n / total
    if method != "regression":
        raise ValueError(f"unknown TwoNN method {method!r}")

    log_mu = np.sort(log_mu)
    cdf = np.arange(1, n + 1) / n
    keep = max(2, int(math.floor(n * (1.0 - discard_fraction))))
    x = log_mu[:keep].reshape(-1, 1)
    y = -np.log(1.0 - np.clip(cdf[:keep], 0.0, 1.0 - 1e-10))
    reg = LinearRegression(fit_intercept=False).fit(x, y)
    return float(reg.coef_[0])


def efficiency(inputs: Optional[EfficiencyInputs] = None, **kwargs) -> float:
    """A* / (E* + 1) * 1 / (ln(P - ID + 1) + 1); maximal (1.0) at A*=1, E*=0, P=ID."""
    e = inputs if inputs is not None else EfficiencyInputs(**kwargs)
    excess = e.param_count - e.intrinsic_dimension
    if excess < 0:
        raise DomainError(
            f"efficiency needs P >= ID, got P={e.param_count} and ID={e.intrinsic_dimension:g}"
        )
    return e.best_accuracy / (e.epochs_to_best + 1) * (1.0 / (math.log(excess + 1.0) + 1.0))
