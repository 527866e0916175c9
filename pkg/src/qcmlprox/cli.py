"""Command-line entry point for reproducible experiments.

Subcommands: train, proximity, evaluate, synth, mds. Every command is a
pure function of (config, input files): outputs carry no timestamps, run
directories are keyed by the config hash, and reruns with an identical
config reproduce every artifact byte for byte.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, baselines, data, evaluation, forest as forest_mod, mds, qcml
from .proximity import ProximityMatrix
from .errors import (
    ConfigError,
    DataError,
    NoOobCoverError,
    NumericError,
    QcmlproxError,
    SchemaError,
    UsageError,
)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic",
                                                   "regime": "investment-grade-like",
                                                   "n": 200, "seed": 0})
    models: list = field(default_factory=lambda: ["linear", "forest", "qcml"])
    train: dict = field(default_factory=dict)        # TrainConfig overrides
    forest: dict = field(default_factory=dict)       # ForestConfig overrides
    cv_dims: list = field(default_factory=list)      # empty = skip CV
    cv_folds: int = 3
    hilbert_dim: int = 8
    ensemble_size: int = 3
    ks: list = field(default_factory=lambda: list(range(1, 101)))
    n_splits: int = 10
    weightings: list = field(default_factory=lambda: ["unweighted", "proximity"])
    test_fraction: float = 0.2
    metric_kinds: list = field(default_factory=lambda: ["qcml", "rf-gap", "euclidean"])
    reference_index: int = -1                        # -1 = point with largest target
    n_neighbors: int = 10
    histogram_bins: int = 20
    output_dir: str = "runs"
    seed: int = None

    def validate(self):
        if self.seed is None:
            raise ConfigError("seed: a master seed is mandatory (no wall-clock seeding)")
        if self.dataset.get("kind") not in ("synthetic", "csv", "diabetes"):
            raise ConfigError(f"dataset.kind: unknown kind {self.dataset.get('kind')!r}")
        if self.dataset["kind"] == "csv":
            for key in ("path", "schema"):
                if key not in self.dataset:
                    raise ConfigError(f"dataset.{key}: required for csv datasets")
        for m in self.models:
            if m not in ("linear", "forest", "qcml"):
                raise ConfigError(f"models: unknown model {m!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction: must be in (0, 1), got {self.test_fraction}")
        return self

    def train_config(self, seed_offset: int = 0) -> qcml.TrainConfig:
        kwargs = dict(self.train)
        kwargs.setdefault("seed", self.seed + seed_offset)
        try:
            return qcml.TrainConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from exc

    def forest_config(self) -> forest_mod.ForestConfig:
        kwargs = dict(self.forest)
        kwargs.setdefault("seed", self.seed)
        try:
            return forest_mod.ForestConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"forest: {exc}") from exc


PRESETS = {
    # Diabetes benchmark protocol: 10 seeded 80/20 splits, fixed
    # cross-validated Hilbert dimension, modest forest.
    "diabetes": {
        "dataset": {"kind": "diabetes"},
        "train": {"epochs": 120, "learning_rate": 0.01, "batch_size": 32,
                  "optimizer": "adaptive-moment", "loss": "mae"},
        "forest": {"n_trees": 200, "max_depth": 50, "min_samples_leaf": 1,
                   "max_features": "sqrt", "criterion": "mse"},
        "cv_dims": [4, 8],
        "hilbert_dim": 8,
        "n_splits": 10,
        "seed": 0,
    },
    # Qualitative stand-ins for the proprietary bond cohorts.
    "synthetic-hy": {
        "dataset": {"kind": "synthetic", "regime": "high-yield-like", "n": 400, "seed": 0},
        "train": {"epochs": 60, "batch_size": 32},
        "forest": {"n_trees": 100, "max_depth": 50},
        "hilbert_dim": 7,
        "n_splits": 5,
        "ks": list(range(1, 51)),
        "seed": 0,
    },
    "synthetic-ig": {
        "dataset": {"kind": "synthetic", "regime": "investment-grade-like", "n": 400, "seed": 0},
        "train": {"epochs": 60, "batch_size": 32},
        "forest": {"n_trees": 100, "max_depth": 50},
        "hilbert_dim": 12,
        "n_splits": 5,
        "ks": list(range(1, 51)),
        "seed": 0,
    },
    # Tuned hyperparameter grids for the two bond cohorts, applied to the
    # synthetic stand-in regimes.
    "hyg-paper": {
        "dataset": {"kind": "synthetic", "regime": "high-yield-like", "n": 400, "seed": 0},
        "train": {"epochs": 120, "batch_size": 32},
        "forest": {"n_trees": 1000, "max_depth": 50, "min_samples_leaf": 1,
                   "max_features": "sqrt", "criterion": "mae"},
        "hilbert_dim": 7,
        "seed": 0,
    },
    "igsb-paper": {
        "dataset": {"kind": "synthetic", "regime": "investment-grade-like", "n": 400, "seed": 0},
        "train": {"epochs": 120, "batch_size": 32},
        "forest": {"n_trees": 200, "max_depth": 50, "min_samples_leaf": 1,
                   "max_features": "sqrt", "criterion": "mse"},
        "hilbert_dim": 12,
        "seed": 0,
    },
}


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(cfg_dict: dict, spec: str):
    if "=" not in spec:
        raise ConfigError(f"--set expects key.path=value, got {spec!r}")
    path, _, value = spec.partition("=")
    keys = path.split(".")
    node = cfg_dict
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {path}: {k} is not a section")
    node[keys[-1]] = _parse_scalar(value)


def load_config(args) -> ExperimentConfig:
    cfg_dict = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        cfg_dict.update(json.loads(json.dumps(PRESETS[args.preset])))
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ImportError:
                import tomli as tomllib
            doc = tomllib.loads(text)
        else:
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        cfg_dict.update(doc)
    for spec in args.set or []:
        _apply_override(cfg_dict, spec)
    if getattr(args, "out", None):
        cfg_dict["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg_dict["seed"] = args.seed
    try:
        cfg = ExperimentConfig(**cfg_dict)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(_canonical_json(asdict(cfg)).encode()).hexdigest()


def make_run_dir(cfg: ExperimentConfig, command: str) -> Path:
    run_dir = Path(cfg.output_dir) / f"{command}-{_config_hash(cfg)[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "manifest-v1",
        "command": command,
        "config_sha256": _config_hash(cfg),
        "master_seed": cfg.seed,
        "package_version": __version__,
        "file_formats": {"model": "QCML1", "forest": "FRST1", "proximity": "PROX1"},
    }
    (run_dir / "manifest.json").write_text(_canonical_json(manifest))
    (run_dir / "config.json").write_text(_canonical_json(asdict(cfg)))
    return run_dir


def load_dataset(cfg: ExperimentConfig) -> data.Dataset:
    src = cfg.dataset
    if src["kind"] == "synthetic":
        return data.synth_bonds(seed=src.get("seed", cfg.seed), n=src.get("n", 200),
                                regime=src["regime"])
    if src["kind"] == "diabetes":
        return data.diabetes_dataset()
    schema = data.FeatureSchema.load(src["schema"])
    return data.load_csv(src["path"], schema)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig) -> Path:
    run_dir = make_run_dir(cfg, "synth")
    src = cfg.dataset
    if src["kind"] != "synthetic":
        raise ConfigError("dataset.kind: synth requires a synthetic dataset config")
    ds = data.synth_bonds(seed=src.get("seed", cfg.seed), n=src.get("n", 200),
                          regime=src["regime"])
    data.write_csv(ds, run_dir / "data.csv")
    ds.schema.save(run_dir / "schema.json")
    print(f"wrote {ds.n} rows (encoded width {ds.width}) to {run_dir}")
    return run_dir


def cmd_train(cfg: ExperimentConfig) -> Path:
    """Optional CV over the Hilbert dimension, then final models on the
    master split's train data, persisted with a CV report."""
    run_dir = make_run_dir(cfg, "train")
    dataset = load_dataset(cfg)
    train_ds, _ = evaluation.split(dataset, cfg.test_fraction, cfg.seed)

    chosen_dim = cfg.hilbert_dim
    cv_report = None
    if "qcml" in cfg.models and cfg.cv_dims:
        chosen_dim, rows = evaluation.cv_hilbert_dim_detailed(
            train_ds, cfg.cv_dims, cfg.cv_folds, cfg.train_config())
        cv_report = {"format": "cvreport-v1", "chosen_dim": chosen_dim, "rows": rows}
        (run_dir / "cv_report.json").write_text(_canonical_json(cv_report))

    tset, scaler = evaluation.make_train_set(train_ds)
    if "qcml" in cfg.models:
        models = qcml.train_ensemble(cfg.train_config(), tset, chosen_dim,
                                     cfg.ensemble_size)
        for i, m in enumerate(models):
            qcml.save_model(m, run_dir / f"qcml-{i}.model")
    if "forest" in cfg.models:
        xs = scaler.affine.transform(train_ds.encoded[:, scaler.kept])
        rf = forest_mod.fit_forest(cfg.forest_config(), (xs, train_ds.target))
        forest_mod.save_forest(rf, run_dir / "forest.bin")
    if "linear" in cfg.models:
        xs = scaler.affine.transform(train_ds.encoded[:, scaler.kept])
        lm = baselines.fit_linear((xs, train_ds.target))
        (run_dir / "linear.json").write_text(_canonical_json({
            "format": "linear-v1",
            "coefficients": [repr(float(c)) for c in lm.coefficients],
            "intercept": repr(lm.intercept),
        }))

    echo = {"effective_config": asdict(cfg), "chosen_hilbert_dim": chosen_dim}
    print(_canonical_json(echo), end="")
    return run_dir


def cmd_proximity(cfg: ExperimentConfig) -> Path:
    """Proximity matrices (test rows by train columns) for the configured
    metric kinds on the master split, written in the shared file format."""
    run_dir = make_run_dir(cfg, "proximity")
    dataset = load_dataset(cfg)
    train_ds, test_ds = evaluation.split(dataset, cfg.test_fraction, cfg.seed)
    prox = evaluation.split_proximities(
        train_ds, test_ds, cfg.metric_kinds, cfg.train_config(),
        cfg.forest_config(), cfg.hilbert_dim, cfg.ensemble_size)
    for kind, matrix in sorted(prox.items()):
        matrix.save(run_dir / f"prox-{kind}.bin")
        if kind == "rf-gap":
            sums = matrix.values.sum(axis=1)
            print(f"rf-gap row sums in [{sums.min():.12f}, {sums.max():.12f}]")
        print(f"{kind}: {matrix.rows}x{matrix.cols} matrix written")
    return run_dir


def _train_square_proximities(cfg: ExperimentConfig, train_ds):
    """Train-by-train proximities per metric kind (for histograms and MDS)."""
    tset, scaler = evaluation.make_train_set(train_ds)
    x_kept = train_ds.encoded[:, scaler.kept]
    xs = scaler.affine.transform(x_kept)
    out = {}
    if any(m in cfg.metric_kinds for m in ("rf-gap", "rf-breiman")):
        rf = forest_mod.fit_forest(cfg.forest_config(), (xs, train_ds.target))
        if "rf-gap" in cfg.metric_kinds:
            out["rf-gap"] = forest_mod.prox_gap(rf)
        if "rf-breiman" in cfg.metric_kinds:
            out["rf-breiman"] = forest_mod.prox_breiman(rf)
    if "qcml" in cfg.metric_kinds:
        models = qcml.train_ensemble(cfg.train_config(), tset, cfg.hilbert_dim,
                                     cfg.ensemble_size)
        out["qcml"] = qcml.qcml_proximity_matrix(models, x_kept, x_kept,
                                                 row_role="train", col_role="train")
    if "euclidean" in cfg.metric_kinds:
        out["euclidean"] = baselines.euclidean_proximity(xs, xs)
    return out


def _symmetrized_distance(matrix) -> np.ndarray:
    d = 1.0 - matrix.values
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, None)


def cmd_evaluate(cfg: ExperimentConfig) -> Path:
    run_dir = make_run_dir(cfg, "evaluate")
    dataset = load_dataset(cfg)

    chosen_dim = cfg.hilbert_dim
    if "qcml" in cfg.models and cfg.cv_dims:
        train_ds, _ = evaluation.split(dataset, cfg.test_fraction, cfg.seed)
        chosen_dim, rows = evaluation.cv_hilbert_dim_detailed(
            train_ds, cfg.cv_dims, cfg.cv_folds, cfg.train_config())
        (run_dir / "cv_report.json").write_text(_canonical_json(
            {"format": "cvreport-v1", "chosen_dim": chosen_dim, "rows": rows}))

    # Regression metrics table over repeated splits.
    table = evaluation.regression_table(
        dataset, cfg.n_splits, qcml_config=cfg.train_config(),
        forest_config=cfg.forest_config(), hilbert_dim=chosen_dim,
        models=tuple(cfg.models), test_fraction=cfg.test_fraction,
        base_seed=cfg.seed)
    _write_regression_csv(table, run_dir / "regression_metrics.csv")
    (run_dir / "regression_metrics.json").write_text(_canonical_json(_table_json(table)))

    # KNN curves per weighting mode.
    ks = [k for k in cfg.ks]
    for weighting in cfg.weightings:
        curves = evaluation.knn_curve_experiment(
            dataset, cfg.metric_kinds, ks, cfg.n_splits, weighting,
            qcml_config=cfg.train_config(), forest_config=cfg.forest_config(),
            hilbert_dim=chosen_dim, ensemble_size=cfg.ensemble_size,
            test_fraction=cfg.test_fraction, base_seed=cfg.seed)
        evaluation.knn_curves_to_csv(curves, run_dir / f"knn_{weighting}.csv")
        (run_dir / f"knn_{weighting}.json").write_text(
            _canonical_json(evaluation.knn_curves_summary(curves)))
        (run_dir / f"knn_{weighting}.svg").write_text(
            mds.render_curves(curves, title=f"KNN ({weighting})"))

    # Square train proximities on the master split: histograms, MDS, and
    # the reference-point neighbor report.
    train_ds, _ = evaluation.split(dataset, cfg.test_fraction, cfg.seed)
    square = _train_square_proximities(cfg, train_ds)
    ref = cfg.reference_index
    if ref < 0:
        ref = int(np.argmax(train_ds.target))
    report = {"format": "refpoint-v1", "reference_index": ref,
              "reference_target": float(train_ds.target[ref]), "metrics": {}}
    for kind, matrix in sorted(square.items()):
        hist = mds.distance_histogram(matrix, bins=cfg.histogram_bins)
        log_scale = kind.startswith("rf-")
        (run_dir / f"hist_{kind}.svg").write_text(
            mds.render_histogram(hist, log_scale=log_scale, title=f"avg distance: {kind}"))
        _write_histogram_csv(hist, run_dir / f"hist_{kind}.csv")

        emb = mds.mds_embed(_symmetrized_distance(matrix), seed=cfg.seed)
        row = matrix.values[ref].copy()
        row[ref] = -np.inf  # the reference is not its own neighbor
        order = np.lexsort((np.arange(row.size), -row))
        neighbors = [int(i) for i in order[:cfg.n_neighbors]]
        (run_dir / f"mds_{kind}.svg").write_text(
            mds.render_scatter(emb, train_ds.target, highlight=(ref, neighbors)))
        mds.embedding_to_csv(emb, train_ds.target, run_dir / f"mds_{kind}.csv")

        neigh_targets = [float(train_ds.target[i]) for i in neighbors]
        weights = np.clip(matrix.values[ref][neighbors], 0.0, None)
        wsum = float(weights.sum())
        report["metrics"][kind] = {
            "neighbors": neighbors,
            "neighbor_targets": neigh_targets,
            "knn_estimate_unweighted": float(np.mean(neigh_targets)),
            "knn_estimate_weighted": (
                float(np.dot(weights, neigh_targets) / wsum) if wsum > 0
                else float(np.mean(neigh_targets))),
            "mds_stress": emb.stress,
            "median_avg_distance": float(np.median(hist.values)),
        }
    (run_dir / "reference_report.json").write_text(_canonical_json(report))
    print(f"evaluation artifacts written to {run_dir}")
    return run_dir


def cmd_mds(cfg: ExperimentConfig, prox_path: str) -> Path:
    run_dir = make_run_dir(cfg, "mds")
    matrix = ProximityMatrix.load(prox_path)
    if matrix.rows != matrix.cols:
        raise DataError("mds needs a square proximity matrix")
    emb = mds.mds_embed(_symmetrized_distance(matrix), seed=cfg.seed)
    colors = np.zeros(matrix.rows)
    (run_dir / "embedding.svg").write_text(mds.render_scatter(emb, colors))
    mds.embedding_to_csv(emb, colors, run_dir / "embedding.csv")
    print(f"stress {emb.stress:.6g} after {emb.iterations} iterations "
          f"({'converged' if emb.converged else 'max_iter'})")
    return run_dir


def _write_regression_csv(table: dict, path: Path) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["format", "model", "mape_mean", "mape_std", "mae_mean",
                         "mae_std", "rmse_mean", "rmse_std", "r2_mean", "r2_std"])
        for model in sorted(table["table"]):
            row = table["table"][model]
            writer.writerow(["regression-v1", model]
                            + [repr(v) for name in ("mape", "mae", "rmse", "r2")
                               for v in row[name]])


def _table_json(table: dict) -> dict:
    out = {"format": "regression-v1", "n_splits": table["n_splits"],
           "hilbert_dims": table["hilbert_dims"], "models": {}}
    for model, row in table["table"].items():
        out["models"][model] = {name: {"mean": row[name][0], "std": row[name][1]}
                                for name in row}
    return out


def _write_histogram_csv(hist, path: Path) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["format", "bin_left", "bin_right", "count"])
        for b in range(hist.counts.size):
            writer.writerow(["disthist-v1", repr(float(hist.edges[b])),
                             repr(float(hist.edges[b + 1])), int(hist.counts[b])])


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcmlprox",
        description="Supervised similarity experiments: quantum-state and "
                    "random-forest proximities under a KNN evaluation harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("train", "cross-validate and train models, persisting model files"),
        ("proximity", "compute and persist proximity matrices"),
        ("evaluate", "run the full evaluation protocol with reports and figures"),
        ("synth", "generate a synthetic bond-like CSV dataset"),
        ("mds", "embed a stored proximity matrix into 2-D"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON or TOML experiment config file")
        p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                       help="override a config entry (JSON-parsed value)")
        p.add_argument("--out", help="output directory (default: runs)")
        p.add_argument("--seed", type=int, help="master seed override")
        if name == "mds":
            p.add_argument("proximity_file", help="path to a stored proximity matrix")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "proximity":
            cmd_proximity(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "mds":
            cmd_mds(cfg, args.proximity_file)
        return 0
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, NoOobCoverError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QcmlproxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
