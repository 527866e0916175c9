"""Experimental protocol: splits, cross-validation over the Hilbert
dimension, KNN regression under any proximity, regression metrics, and
repeated-split aggregation with standard errors.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, forest as forest_mod, qcml
from .data import AffineScaler, Dataset, fit_scaling
from .errors import NumericError, SchemaError, UsageError

MAPE_ZERO_TOL = 1e-12

WEIGHTINGS = ("unweighted", "proximity")


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def split(dataset: Dataset, test_fraction: float, seed: int):
    """Seeded disjoint, exhaustive train/test partition of a dataset."""
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = dataset.n
    n_test = min(n - 1, max(1, int(round(n * test_fraction))))
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def _kfold_indices(n: int, folds: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    mape: float
    mae: float
    rmse: float
    r2: float
    mape_divergent: bool = False
    r2_degenerate: bool = False


def compute_metrics(predictions, targets) -> Metrics:
    """MAPE, MAE, RMSE, and R^2 of predictions against targets.

    MAPE is flagged divergent (and reported as inf) when any |target|
    is below 1e-12; R^2 of a constant target is defined as 0, flagged.
    """
    yhat = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if yhat.shape != y.shape or y.ndim != 1 or y.size == 0:
        raise SchemaError(f"predictions {yhat.shape} and targets {y.shape} must be equal nonempty vectors")
    resid = yhat - y
    mae = float(np.mean(np.abs(resid)))
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    divergent = bool(np.any(np.abs(y) < MAPE_ZERO_TOL))
    mape = math.inf if divergent else float(np.mean(np.abs(resid / y)))
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    degenerate = ss_tot == 0.0
    r2 = 0.0 if degenerate else 1.0 - ss_res / ss_tot
    return Metrics(mape=mape, mae=mae, rmse=rmse, r2=r2,
                   mape_divergent=divergent, r2_degenerate=degenerate)


# ---------------------------------------------------------------------------
# KNN regression under a proximity
# ---------------------------------------------------------------------------

def knn_predict(prox_row, y_train, k: int, weighting: str = "unweighted") -> float:
    """KNN regression from one row of proximities to the training set.

    The k largest proximities win, ties resolving to the lower train
    index. Proximity weighting averages sum(p*y)/sum(p) over the selected
    neighbors, falling back to their unweighted mean when all selected
    proximities are zero.
    """
    p = np.asarray(prox_row, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise SchemaError(f"proximity row {p.shape} and targets {y.shape} must match")
    if not 1 <= k <= p.size:
        raise UsageError(f"k must be in [1, {p.size}], got {k}")
    if weighting not in WEIGHTINGS:
        raise UsageError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    order = np.lexsort((np.arange(p.size), -p))
    sel = order[:k]
    if weighting == "proximity":
        wsum = p[sel].sum()
        if wsum > 0.0:
            return float(np.dot(p[sel], y[sel]) / wsum)
    return float(y[sel].mean())


def knn_predict_rows(prox_rows: np.ndarray, y_train, k: int, weighting: str) -> np.ndarray:
    return np.array([knn_predict(row, y_train, k, weighting) for row in prox_rows])


def _knn_predictions_per_k(prox_rows: np.ndarray, y_train: np.ndarray, ks,
                           weighting: str) -> np.ndarray:
    """Predictions for every row and every k at once via neighbor-order
    prefix sums; same neighbor ordering and fallback rule as knn_predict."""
    y = np.asarray(y_train, dtype=np.float64)
    n = y.size
    out = np.empty((len(prox_rows), len(ks)))
    kidx = np.asarray(ks, dtype=np.intp) - 1
    for i, row in enumerate(np.asarray(prox_rows, dtype=np.float64)):
        order = np.lexsort((np.arange(n), -row))
        y_sorted = y[order]
        y_csum = np.cumsum(y_sorted)
        counts = np.arange(1, n + 1)
        unweighted = y_csum / counts
        if weighting == "proximity":
            p_sorted = row[order]
            p_csum = np.cumsum(p_sorted)
            py_csum = np.cumsum(p_sorted * y_sorted)
            weighted = np.where(p_csum > 0.0, py_csum / np.where(p_csum > 0.0, p_csum, 1.0),
                                unweighted)
            out[i] = weighted[kidx]
        else:
            out[i] = unweighted[kidx]
    return out


# ---------------------------------------------------------------------------
# Cross-validation over the Hilbert dimension
# ---------------------------------------------------------------------------

def cv_hilbert_dim_detailed(train: Dataset, candidate_dims, folds: int,
                            config: qcml.TrainConfig):
    """Per-candidate mean validation MSE over seeded folds.

    A fold failure aborts that candidate with a diagnostic instead of the
    whole search. Returns (best_dim, report rows).
    """
    if folds < 2:
        raise UsageError(f"folds must be >= 2, got {folds}")
    candidate_dims = list(candidate_dims)
    if not candidate_dims:
        raise UsageError("candidate_dims must be nonempty")
    fold_idx = _kfold_indices(train.n, folds, config.seed)
    all_idx = np.arange(train.n)

    report = []
    for dim in candidate_dims:
        fold_mses = []
        error = None
        for f, val_idx in enumerate(fold_idx):
            tr_idx = np.setdiff1d(all_idx, val_idx)
            tr, val = train.subset(tr_idx), train.subset(val_idx)
            try:
                tset, scaler = make_train_set(tr)
                model = qcml.train(config, tset, dim)
                preds = qcml.forecast_many(model, _kept_inputs(val, scaler))
            except NumericError as exc:
                error = f"fold {f}: {exc}"
                break
            fold_mses.append(float(np.mean((preds - val.target) ** 2)))
        if error is None:
            report.append({"dim": dim, "fold_mses": fold_mses,
                           "mean_mse": float(np.mean(fold_mses)), "error": None})
        else:
            report.append({"dim": dim, "fold_mses": fold_mses,
                           "mean_mse": math.inf, "error": error})
    usable = [r for r in report if r["error"] is None]
    if not usable:
        raise NumericError("every candidate dimension failed cross-validation: "
                           + "; ".join(str(r["error"]) for r in report))
    best = min(usable, key=lambda r: (r["mean_mse"], r["dim"]))
    return best["dim"], report


def cv_hilbert_dim(train: Dataset, candidate_dims, folds: int,
                   config: qcml.TrainConfig) -> int:
    """Candidate Hilbert dimension with the lowest mean validation MSE;
    ties go to the smallest dimension."""
    best, _ = cv_hilbert_dim_detailed(train, candidate_dims, folds, config)
    return best


# ---------------------------------------------------------------------------
# Model-fitting plumbing shared by the harness and the CLI
# ---------------------------------------------------------------------------

def make_train_set(train: Dataset):
    """Scale a dataset the model way: fit the column scaler on train,
    standardize the target, and keep the scaler for later raw-unit use."""
    scaler = fit_scaling(train)
    x_scaled = scaler.transform_matrix(train.encoded)
    y = train.target
    tmean, tstd = float(y.mean()), float(y.std())
    if tstd <= 0.0:
        tstd = 1.0
    tsc = AffineScaler(mean=np.float64(tmean), std=np.float64(tstd))
    tset = qcml.ScaledTrainSet(x=x_scaled, y=tsc.transform(y),
                               feature_scaler=scaler.affine, target_scaler=tsc)
    return tset, scaler


def fit_qcml(train: Dataset, hilbert_dim: int, config: qcml.TrainConfig):
    tset, _ = make_train_set(train)
    return qcml.train(config, tset, hilbert_dim)


def _kept_inputs(dataset: Dataset, scaler) -> np.ndarray:
    return dataset.encoded[:, scaler.kept]


# ---------------------------------------------------------------------------
# KNN curve experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnnCurve:
    """Mean and standard error of a KNN error metric per k, across splits."""

    ks: tuple
    mean: np.ndarray
    stderr: np.ndarray
    split_values: np.ndarray  # (n_splits, n_ks)
    weighting: str
    metric_kind: str
    error_metric: str

    def __post_init__(self):
        ks = tuple(int(k) for k in self.ks)
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise SchemaError("ks must be strictly increasing")
        object.__setattr__(self, "ks", ks)


def _check_ks(ks, n_train: int):
    ks = [int(k) for k in ks]
    if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
        raise UsageError("ks must be a nonempty strictly increasing list")
    if ks[0] < 1 or ks[-1] > n_train:
        raise UsageError(f"ks must stay within [1, {n_train}]")
    return ks


def split_proximities(train: Dataset, test: Dataset, metric_kinds,
                      qcml_config: qcml.TrainConfig, forest_config,
                      hilbert_dim: int, ensemble_size: int = 3):
    """Test-by-train proximity matrices per requested metric kind for one
    train/test split, under the shared scaling pipeline."""
    tset, scaler = make_train_set(train)
    x_train = _kept_inputs(train, scaler)
    x_test = _kept_inputs(test, scaler)
    xs_train = scaler.affine.transform(x_train)
    xs_test = scaler.affine.transform(x_test)

    out = {}
    rf_kinds = [m for m in metric_kinds if m in ("rf-gap", "rf-breiman")]
    if rf_kinds:
        rf = forest_mod.fit_forest(forest_config, (xs_train, train.target))
        if "rf-gap" in rf_kinds:
            out["rf-gap"] = forest_mod.prox_gap(rf, x_rows=xs_test, row_role="test")
        if "rf-breiman" in rf_kinds:
            out["rf-breiman"] = forest_mod.prox_breiman(rf, x_rows=xs_test, row_role="test")
    if "qcml" in metric_kinds:
        models = qcml.train_ensemble(qcml_config, tset, hilbert_dim, ensemble_size)
        out["qcml"] = qcml.qcml_proximity_matrix(models, x_test, x_train)
    if "euclidean" in metric_kinds:
        out["euclidean"] = baselines.euclidean_proximity(xs_train, xs_test)
    unknown = set(metric_kinds) - set(out)
    if unknown:
        raise UsageError(f"unsupported KNN metric kinds: {sorted(unknown)}")
    return out


def knn_curve_experiment(dataset: Dataset, metric_kinds, ks, n_splits: int,
                         weighting: str, *, qcml_config=None, forest_config=None,
                         hilbert_dim: int = 8, ensemble_size: int = 3,
                         test_fraction: float = 0.2, base_seed: int = 0):
    """Repeated-split KNN evaluation of the requested proximity metrics.

    Per split: fit on train, build test-by-train proximities, score the
    KNN regressor per k with MAPE (or MAE when MAPE diverges on the
    dataset's targets). Aggregates mean and standard error over splits.
    """
    if n_splits < 2:
        raise UsageError(f"n_splits must be >= 2, got {n_splits}")
    if weighting not in WEIGHTINGS:
        raise UsageError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    qcml_config = qcml_config or qcml.TrainConfig()
    forest_config = forest_config or forest_mod.ForestConfig()
    error_metric = "mae" if np.any(np.abs(dataset.target) < MAPE_ZERO_TOL) else "mape"

    values = {m: [] for m in metric_kinds}
    ks_checked = None
    for s in range(n_splits):
        train, test = split(dataset, test_fraction, seed=base_seed + s)
        if ks_checked is None:
            ks_checked = _check_ks(ks, train.n)
        prox = split_proximities(train, test, metric_kinds, qcml_config,
                                 forest_config, hilbert_dim, ensemble_size)
        for m in metric_kinds:
            rows = prox[m].values
            preds_per_k = _knn_predictions_per_k(rows, train.target, ks_checked, weighting)
            per_k = []
            for j in range(len(ks_checked)):
                met = compute_metrics(preds_per_k[:, j], test.target)
                per_k.append(met.mae if error_metric == "mae" else met.mape)
            values[m].append(per_k)

    curves = {}
    for m in metric_kinds:
        arr = np.array(values[m])
        mean = arr.mean(axis=0)
        stderr = arr.std(axis=0, ddof=1) / math.sqrt(n_splits)
        curves[m] = KnnCurve(ks=tuple(ks_checked), mean=mean, stderr=stderr,
                             split_values=arr, weighting=weighting,
                             metric_kind=m, error_metric=error_metric)
    return curves


def knn_curves_to_csv(curves: dict, path) -> None:
    """Long-format dump: one row per metric-kind, k, and split."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["format", "metric_kind", "weighting", "error_metric",
                         "k", "split", "value"])
        for kind in sorted(curves):
            c = curves[kind]
            for s in range(c.split_values.shape[0]):
                for j, k in enumerate(c.ks):
                    writer.writerow(["knncurve-v1", kind, c.weighting, c.error_metric,
                                     k, s, repr(float(c.split_values[s, j]))])


def knn_curves_summary(curves: dict) -> dict:
    out = {"format": "knncurve-summary-v1", "curves": {}}
    for kind in sorted(curves):
        c = curves[kind]
        out["curves"][kind] = {
            "weighting": c.weighting,
            "error_metric": c.error_metric,
            "ks": list(c.ks),
            "mean": [float(v) for v in c.mean],
            "stderr": [float(v) for v in c.stderr],
        }
    return out


# ---------------------------------------------------------------------------
# Regression metrics table (repeated splits)
# ---------------------------------------------------------------------------

def regression_table(dataset: Dataset, n_splits: int, *, qcml_config=None,
                     forest_config=None, hilbert_dim: int = 8,
                     cv_dims=None, cv_folds: int = 3,
                     models=("linear", "forest", "qcml"),
                     test_fraction: float = 0.2, base_seed: int = 0):
    """Out-of-sample MAPE/MAE/RMSE/R^2 per model, aggregated over seeded
    splits as mean and standard deviation. With cv_dims, the Hilbert
    dimension is re-selected on each split's train set."""
    qcml_config = qcml_config or qcml.TrainConfig()
    forest_config = forest_config or forest_mod.ForestConfig()
    per_model = {m: [] for m in models}
    chosen_dims = []
    for s in range(n_splits):
        train, test = split(dataset, test_fraction, seed=base_seed + s)
        tset, scaler = make_train_set(train)
        xs_train = scaler.affine.transform(_kept_inputs(train, scaler))
        xs_test = scaler.affine.transform(_kept_inputs(test, scaler))
        if "linear" in models:
            lm = baselines.fit_linear((xs_train, train.target))
            per_model["linear"].append(compute_metrics(lm.predict(xs_test), test.target))
        if "forest" in models:
            rf = forest_mod.fit_forest(forest_config, (xs_train, train.target))
            per_model["forest"].append(
                compute_metrics(forest_mod.predict(rf, xs_test), test.target))
        if "qcml" in models:
            dim = hilbert_dim
            if cv_dims:
                dim = cv_hilbert_dim(train, cv_dims, cv_folds, qcml_config)
            chosen_dims.append(dim)
            model = qcml.train(qcml_config, tset, dim)
            preds = qcml.forecast_many(model, _kept_inputs(test, scaler))
            per_model["qcml"].append(compute_metrics(preds, test.target))

    table = {}
    for m, mets in per_model.items():
        if not mets:
            continue
        table[m] = {
            name: (float(np.mean([getattr(x, name) for x in mets])),
                   float(np.std([getattr(x, name) for x in mets])))
            for name in ("mape", "mae", "rmse", "r2")
        }
    return {"table": table, "n_splits": n_splits, "hilbert_dims": chosen_dims}
