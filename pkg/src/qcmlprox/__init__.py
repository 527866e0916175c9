"""Supervised distance metric learning with quantum-state embeddings,
random forest proximities, and a KNN regression evaluation harness."""

__version__ = "0.1.0"

from . import baselines, data, evaluation, forest, hermitian, mds, qcml
from .errors import (
    ConfigError,
    DataError,
    DegenerateDataError,
    NoOobCoverError,
    NumericError,
    QcmlproxError,
    SchemaError,
    UsageError,
)
from .proximity import ProximityMatrix

__all__ = [
    "__version__",
    "baselines",
    "data",
    "evaluation",
    "forest",
    "hermitian",
    "mds",
    "qcml",
    "ProximityMatrix",
    "QcmlproxError",
    "ConfigError",
    "DataError",
    "DegenerateDataError",
    "NoOobCoverError",
    "NumericError",
    "SchemaError",
    "UsageError",
]
