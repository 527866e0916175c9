"""Dataset ingestion, one-hot encoding, scaling, and synthetic generators.

The synthetic bond-like generator reproduces the qualitative contrast
between a heavy-tailed, outlier-rich high-yield cohort and a compact
investment-grade cohort: seven numeric columns, three categorical
columns whose level counts bring the one-hot encoded width to 99, and a
smooth target driven by coupon, duration, and credit-rating level.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError, UsageError

COLUMN_KINDS = ("numeric", "categorical")
COLUMN_ROLES = ("feature", "target", "ignore")


@dataclass(frozen=True)
class AffineScaler:
    """Per-column affine map x -> (x - mean) / std with positive std."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, y):
        return np.asarray(y, dtype=np.float64) * self.std + self.mean

    @classmethod
    def identity(cls, width: int) -> "AffineScaler":
        return cls(mean=np.zeros(width), std=np.ones(width))


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    role: str

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in COLUMN_ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        targets = [c for c in self.columns if c.role == "target"]
        if len(targets) != 1:
            raise SchemaError(f"schema must have exactly one target column, got {len(targets)}")
        if targets[0].kind != "numeric":
            raise SchemaError("target column must be numeric")
        if not any(c.role == "feature" for c in self.columns):
            raise SchemaError("schema must have at least one feature column")

    @property
    def feature_columns(self):
        return [c for c in self.columns if c.role == "feature"]

    @property
    def target_column(self):
        return next(c for c in self.columns if c.role == "target")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def to_dict(self) -> dict:
        return {
            "format": "schema-v1",
            "columns": [{"name": c.name, "kind": c.kind, "role": c.role}
                        for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            cols = tuple(Column(c["name"], c["kind"], c["role"]) for c in d["columns"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(cols)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            import tomli
            doc = tomli.loads(text)
        else:
            doc = json.loads(text)
        return cls.from_dict(doc)


@dataclass(frozen=True)
class Dataset:
    """Typed rows plus their one-hot encoded matrix.

    Encoded layout: numeric feature columns in schema order, then one
    dummy block per categorical column (schema order), each block's
    columns in sorted-category order. The encoding map sends
    (column name, category) to the encoded column index.
    """

    schema: FeatureSchema
    rows: tuple
    encoded: np.ndarray
    target: np.ndarray
    encoding: dict
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return self.encoded.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(
            schema=self.schema,
            rows=tuple(self.rows[i] for i in indices),
            encoded=self.encoded[indices],
            target=self.target[indices],
            encoding=self.encoding,
            meta=dict(self.meta),
        )

    def decode_category(self, row_index: int, column_name: str) -> str:
        """Recover a row's category from its one-hot block."""
        block = [(cat, idx) for (name, cat), idx in self.encoding.items()
                 if name == column_name]
        if not block:
            raise SchemaError(f"{column_name!r} is not an encoded categorical column")
        row = self.encoded[row_index]
        hot = [cat for cat, idx in block if row[idx] == 1.0]
        if len(hot) != 1:
            raise DataError(f"row {row_index} has no unique category in {column_name!r}")
        return hot[0]


def _encode(schema: FeatureSchema, rows, encoding=None):
    """Encode typed rows. With a preexisting encoding, categories unseen at
    fit time become all-zero blocks and are returned as flags."""
    numeric_cols = [c.name for c in schema.feature_columns if c.kind == "numeric"]
    cat_cols = [c.name for c in schema.feature_columns if c.kind == "categorical"]
    if encoding is None:
        encoding = {}
        idx = len(numeric_cols)
        for name in cat_cols:
            for cat in sorted({str(r[name]) for r in rows}):
                encoding[(name, cat)] = idx
                idx += 1
    width = len(numeric_cols) + len([k for k in encoding])
    mat = np.zeros((len(rows), width))
    flags = []
    for i, r in enumerate(rows):
        for j, name in enumerate(numeric_cols):
            mat[i, j] = float(r[name])
        for name in cat_cols:
            key = (name, str(r[name]))
            if key in encoding:
                mat[i, encoding[key]] = 1.0
            else:
                flags.append({"row": i, "column": name, "category": str(r[name])})
    return mat, encoding, flags


def dataset_from_rows(schema: FeatureSchema, rows, meta=None) -> Dataset:
    rows = tuple(dict(r) for r in rows)
    if not rows:
        raise DataError("no data rows")
    mat, encoding, _ = _encode(schema, rows)
    target = np.array([float(r[schema.target_column.name]) for r in rows])
    return Dataset(schema=schema, rows=rows, encoded=mat, target=target,
                   encoding=encoding, meta=dict(meta or {}))


def encode_like(dataset: Dataset, rows):
    """Encode new typed rows with a fitted dataset's encoding map.

    Returns (matrix, flags); flags list the (row, column, category)
    triples that were unseen at fit time and encoded as all-zeros.
    """
    mat, _, flags = _encode(dataset.schema, list(rows), encoding=dataset.encoding)
    return mat, flags


def load_csv(path, schema: FeatureSchema) -> Dataset:
    """Parse a headered CSV against a schema.

    Rows with missing or unparseable numeric cells (including the target)
    are rejected; the diagnostics land in meta["rejected"].
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        schema_names = {c.name for c in schema.columns}
        for name in header:
            if name not in schema_names:
                raise SchemaError(f"{path}: unknown column {name!r}")
        for name in schema_names:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
        col_of = {name: header.index(name) for name in header}

        typed_cols = [(c.name, c.kind) for c in schema.columns if c.role != "ignore"]
        rows = []
        rejected = []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                rejected.append({"line": lineno, "reason": f"expected {len(header)} cells, got {len(cells)}"})
                continue
            row = {}
            problem = None
            for name, kind in typed_cols:
                cell = cells[col_of[name]]
                if kind == "numeric":
                    try:
                        row[name] = float(cell)
                    except ValueError:
                        problem = f"column {name!r}: cannot parse {cell!r} as numeric"
                        break
                else:
                    if cell == "":
                        problem = f"column {name!r}: empty categorical cell"
                        break
                    row[name] = cell
            if problem:
                rejected.append({"line": lineno, "reason": problem})
            else:
                rows.append(row)

    if not rows:
        raise DataError(f"{path}: no usable data rows ({len(rejected)} rejected)")
    ds = dataset_from_rows(schema, rows, meta={"source": str(path), "rejected": rejected})
    return ds


def write_csv(dataset: Dataset, path) -> None:
    """Persist typed rows back to CSV in schema column order."""
    names = [c.name for c in dataset.schema.columns]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in dataset.rows:
            writer.writerow([_format_cell(row[n]) for n in names])


def _format_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetScaler:
    """Train-fitted column transform: z-scores numeric feature columns,
    passes one-hot columns through, and drops zero-variance numerics."""

    kept: np.ndarray           # encoded column indices that survive
    affine: AffineScaler       # over the kept columns
    dropped_columns: tuple     # names of dropped numeric columns
    warnings: tuple

    def transform_matrix(self, encoded: np.ndarray) -> np.ndarray:
        return self.affine.transform(np.asarray(encoded, dtype=np.float64)[:, self.kept])


def fit_scaling(train: Dataset) -> DatasetScaler:
    numeric_names = [c.name for c in train.schema.feature_columns if c.kind == "numeric"]
    n_numeric = len(numeric_names)
    enc = train.encoded
    width = enc.shape[1]

    kept, means, stds, dropped, warns = [], [], [], [], []
    for j in range(width):
        if j < n_numeric:
            col = enc[:, j]
            std = float(col.std())
            if std == 0.0:
                dropped.append(numeric_names[j])
                warns.append(f"dropped zero-variance numeric column {numeric_names[j]!r}")
                continue
            kept.append(j)
            means.append(float(col.mean()))
            stds.append(std)
        else:
            kept.append(j)
            means.append(0.0)
            stds.append(1.0)
    if not kept:
        raise DataError("all feature columns are zero-variance")
    return DatasetScaler(
        kept=np.array(kept, dtype=np.intp),
        affine=AffineScaler(mean=np.array(means), std=np.array(stds)),
        dropped_columns=tuple(dropped),
        warnings=tuple(warns),
    )


def apply_scaling(scaler: DatasetScaler, dataset: Dataset) -> Dataset:
    """Transform a dataset with train statistics only. The returned encoded
    matrix covers the scaler's kept columns."""
    scaled = scaler.transform_matrix(dataset.encoded)
    meta = dict(dataset.meta)
    meta["scaled"] = True
    meta["dropped_columns"] = list(scaler.dropped_columns)
    return Dataset(schema=dataset.schema, rows=dataset.rows, encoded=scaled,
                   target=dataset.target, encoding=dataset.encoding, meta=meta)


# ---------------------------------------------------------------------------
# Synthetic bond-like generator
# ---------------------------------------------------------------------------

RATING_LEVELS = [f"R{i:02d}" for i in range(1, 21)]
COUNTRY_LEVELS = [f"C{i:02d}" for i in range(1, 31)]
INDUSTRY_LEVELS = [f"I{i:02d}" for i in range(1, 43)]

SYNTH_REGIMES = ("high-yield-like", "investment-grade-like")


def bond_schema(target_name: str) -> FeatureSchema:
    return FeatureSchema(tuple(
        [Column(n, "numeric", "feature") for n in
         ("coupon", "coupon_frequency", "days_to_maturity", "duration",
          "age", "amount_issued", "amount_outstanding")]
        + [Column("rating", "categorical", "feature"),
           Column("country", "categorical", "feature"),
           Column("industry", "categorical", "feature"),
           Column(target_name, "numeric", "target")]
    ))


def _categorical_assignment(rng, levels, n):
    # One row per level first (guarantees full coverage, hence a stable
    # encoded width), the rest skewed toward the low indices; shuffled.
    m = len(levels)
    probs = 0.93 ** np.arange(m)
    probs /= probs.sum()
    extra = rng.choice(m, size=n - m, p=probs)
    order = rng.permutation(np.concatenate([np.arange(m), extra]))
    return [levels[i] for i in order]


def synth_bonds(seed: int, n: int, regime: str) -> Dataset:
    """Deterministic bond-like dataset with the Table-1-style column set.

    Both regimes share the base numeric distributions; the high-yield-like
    regime adds heavy-tailed target noise and a small near-default cluster
    with extreme targets and distorted numerics.
    """
    if regime not in SYNTH_REGIMES:
        raise UsageError(f"regime must be one of {SYNTH_REGIMES}, got {regime!r}")
    if n < 50:
        raise UsageError(f"need n >= 50, got {n}")
    rng = np.random.default_rng(seed)

    coupon = np.clip(rng.normal(5.0, 1.5, n), 0.1, None)
    coupon_frequency = rng.choice([1.0, 2.0, 4.0, 12.0], size=n, p=[0.1, 0.7, 0.15, 0.05])
    days_to_maturity = rng.uniform(90.0, 5400.0, n)
    duration = days_to_maturity / 365.25 * rng.uniform(0.6, 0.95, n)
    age = rng.uniform(0.0, 10.0, n)
    amount_issued = np.exp(rng.normal(20.0, 0.8, n))
    amount_outstanding = amount_issued * rng.uniform(0.5, 1.0, n)

    rating = _categorical_assignment(rng, RATING_LEVELS, n)
    country = _categorical_assignment(rng, COUNTRY_LEVELS, n)
    industry = _categorical_assignment(rng, INDUSTRY_LEVELS, n)
    rating_level = np.array([RATING_LEVELS.index(r) for r in rating], dtype=np.float64)

    target = 1.0 + 0.55 * coupon + 0.18 * duration + 0.14 * rating_level

    outlier = np.zeros(n, dtype=bool)
    if regime == "high-yield-like":
        target += rng.standard_t(3, n) * 0.6
        n_out = max(3, int(round(0.03 * n)))
        out_idx = rng.choice(n, size=n_out, replace=False)
        outlier[out_idx] = True
        # Near-default cluster: extreme yields, short distorted durations,
        # collapsed outstanding amounts, bottom-tier ratings.
        target[out_idx] += rng.uniform(15.0, 40.0, n_out)
        duration[out_idx] *= 0.3
        amount_outstanding[out_idx] *= rng.uniform(0.2, 0.6, n_out)
        for i in out_idx:
            rating[i] = RATING_LEVELS[-1 - int(rng.integers(0, 3))]
        target_name = "yield"
    else:
        target += rng.normal(0.0, 0.25, n)
        target_name = "spread"

    schema = bond_schema(target_name)
    rows = []
    for i in range(n):
        rows.append({
            "coupon": float(coupon[i]),
            "coupon_frequency": float(coupon_frequency[i]),
            "days_to_maturity": float(days_to_maturity[i]),
            "duration": float(duration[i]),
            "age": float(age[i]),
            "amount_issued": float(amount_issued[i]),
            "amount_outstanding": float(amount_outstanding[i]),
            "rating": rating[i],
            "country": country[i],
            "industry": industry[i],
            target_name: float(target[i]),
        })
    ds = dataset_from_rows(schema, rows, meta={"regime": regime, "seed": seed,
                                               "outlier_mask": outlier})
    return ds


# ---------------------------------------------------------------------------
# Public reference dataset
# ---------------------------------------------------------------------------

def diabetes_schema() -> FeatureSchema:
    names = ["age", "sex", "bmi", "bp", "s1", "s2", "s3", "s4", "s5", "s6"]
    return FeatureSchema(tuple(
        [Column(n, "numeric", "feature") for n in names]
        + [Column("progression", "numeric", "target")]
    ))


def diabetes_dataset() -> Dataset:
    """The 442-instance diabetes regression benchmark (via scikit-learn)."""
    try:
        from sklearn.datasets import load_diabetes
    except ImportError as exc:
        raise DataError("the diabetes preset needs scikit-learn installed") from exc
    bunch = load_diabetes()
    schema = diabetes_schema()
    names = [c.name for c in schema.feature_columns]
    rows = []
    for i in range(bunch.data.shape[0]):
        row = {name: float(bunch.data[i, j]) for j, name in enumerate(names)}
        row["progression"] = float(bunch.target[i])
        rows.append(row)
    return dataset_from_rows(schema, rows, meta={"source": "sklearn:diabetes"})
