"""Classical baselines: ordinary least squares and Euclidean proximity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, SchemaError
from .proximity import ProximityMatrix


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return x @ self.coefficients + self.intercept


def fit_linear(train_set) -> LinearModel:
    """Least-squares fit of y on [X, 1]; singular designs resolve to the
    least-norm solution."""
    x, y = train_set
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise SchemaError("non-finite values in the training data")
    design = np.hstack([x, np.ones((x.shape[0], 1))])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearModel(coefficients=beta[:-1], intercept=float(beta[-1]))


def _pairwise_distances(a: np.ndarray, b: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Exact (difference-based) Euclidean distances, chunked over rows of a."""
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        block = a[start:start + chunk]
        out[start:start + chunk] = np.sqrt(
            ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    return out


def euclidean_proximity(x_train: np.ndarray, x_query: np.ndarray,
                        query_role: str = "test") -> ProximityMatrix:
    """Proximity 1 - d/d_max with d_max the maximum pairwise train distance.

    Query distances beyond d_max clamp to proximity 0 so the [0, 1]
    contract survives out-of-range test points.
    """
    x_train = np.atleast_2d(np.asarray(x_train, dtype=np.float64))
    x_query = np.atleast_2d(np.asarray(x_query, dtype=np.float64))
    if x_train.shape[1] != x_query.shape[1]:
        raise SchemaError(
            f"train width {x_train.shape[1]} != query width {x_query.shape[1]}")
    d_train = _pairwise_distances(x_train, x_train)
    d_max = float(d_train.max())
    if d_max == 0.0:
        raise DegenerateDataError("all training points are identical; d_max = 0")
    same = x_query.shape == x_train.shape and np.array_equal(x_query, x_train)
    d = d_train if same else _pairwise_distances(x_query, x_train)
    vals = np.clip(1.0 - d / d_max, 0.0, 1.0)
    return ProximityMatrix(values=vals, metric="euclidean",
                           row_role="train" if same else query_role, col_role="train")
