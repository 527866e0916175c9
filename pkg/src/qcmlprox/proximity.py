"""Dense proximity matrices with provenance, plus their binary file format.

Every supervised or unsupervised metric in the package produces one of
these: entries live in [0, 1], rows and columns are tagged with the role
(train/test) of the points they index, and the metric kind records which
formula produced the values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, SchemaError

METRIC_KINDS = ("qcml", "rf-breiman", "rf-oob", "rf-gap", "euclidean")
ROLES = ("train", "test")

RANGE_TOL = 1e-12
_MAGIC = b"PROX1"


@dataclass(frozen=True)
class ProximityMatrix:
    values: np.ndarray
    metric: str
    row_role: str
    col_role: str

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise SchemaError(f"proximity values must be 2-D, got shape {vals.shape}")
        if self.metric not in METRIC_KINDS:
            raise SchemaError(f"unknown metric kind {self.metric!r}")
        if self.row_role not in ROLES or self.col_role not in ROLES:
            raise SchemaError(f"roles must be train/test, got {self.row_role!r}/{self.col_role!r}")
        if vals.size and (vals.min() < -RANGE_TOL or vals.max() > 1.0 + RANGE_TOL):
            raise SchemaError(
                f"proximities must lie in [0, 1]: range [{vals.min()}, {vals.max()}]"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def save(self, path) -> None:
        path = Path(path)
        header = struct.pack(
            "<5sBBBII",
            _MAGIC,
            METRIC_KINDS.index(self.metric),
            ROLES.index(self.row_role),
            ROLES.index(self.col_role),
            self.rows,
            self.cols,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ProximityMatrix":
        raw = Path(path).read_bytes()
        head_size = struct.calcsize("<5sBBBII")
        if len(raw) < head_size:
            raise DataError(f"{path}: truncated proximity file")
        magic, metric_i, row_i, col_i, rows, cols = struct.unpack("<5sBBBII", raw[:head_size])
        if magic != _MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        body = np.frombuffer(raw[head_size:], dtype="<f8")
        if body.size != rows * cols:
            raise DataError(f"{path}: expected {rows * cols} values, found {body.size}")
        return cls(
            values=body.reshape(rows, cols).astype(np.float64),
            metric=METRIC_KINDS[metric_i],
            row_role=ROLES[row_i],
            col_role=ROLES[col_i],
        )
