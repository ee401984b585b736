"""Dataset ingestion, validation, and per-tree subsampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class DataMatrix:
    """n x m numeric dataset with optional binary ground-truth labels.

    Values are float64 and guaranteed finite; labels, when present, are
    one per row with 1 marking an anomaly.  Arrays are frozen read-only so
    a loaded matrix can be shared across concurrent tree builders.
    """

    values: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"expected a 2-d matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(
                f"non-finite value at row {bad[0]}, column {bad[1]}"
            )
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise DataError(
                    f"label count {labels.shape} does not match {values.shape[0]} rows"
                )
            if not np.isin(labels, (0, 1)).all():
                raise DataError("labels must be 0 (normal) or 1 (anomaly)")
            labels = labels.astype(np.int64)
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Subsample:
    """Distinct row indices selecting one tree's training sample."""

    indices: np.ndarray

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size == 0:
            raise DataError("subsample must be a non-empty 1-d index list")
        if np.unique(indices).size != indices.size:
            raise DataError("subsample indices must be distinct")
        indices = indices.copy()
        indices.flags.writeable = False
        object.__setattr__(self, "indices", indices)

    @property
    def size(self) -> int:
        return int(self.indices.size)


def load_csv(
    path: Union[str, Path], label_column: Optional[str] = None
) -> DataMatrix:
    """Load a comma-delimited UTF-8 file with a header row into a DataMatrix.

    Every non-label cell must parse as a finite real number; parse errors
    name the offending cell by 1-based file line and column header.  The
    label column, when requested, is removed from the features and stored
    as binary labels.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        header = [name.strip() for name in header]
        label_idx: Optional[int] = None
        if label_column is not None:
            if label_column not in header:
                raise DataError(
                    f"label column {label_column!r} not found in header {header}"
                )
            label_idx = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != label_idx]
        if not feature_names:
            raise DataError("no feature columns after removing the label column")

        rows: list[list[float]] = []
        labels: list[int] = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue  # tolerate blank lines
            if len(record) != len(header):
                raise DataError(
                    f"line {line_no}: expected {len(header)} cells, got {len(record)}"
                )
            row = []
            for col, cell in enumerate(record):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"line {line_no}, column {header[col]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(
                        f"line {line_no}, column {header[col]!r}: "
                        f"non-finite value {cell!r}"
                    )
                if col == label_idx:
                    if value not in (0.0, 1.0):
                        raise DataError(
                            f"line {line_no}, column {header[col]!r}: "
                            f"label must be 0 or 1, got {cell!r}"
                        )
                    labels.append(int(value))
                else:
                    row.append(value)
            rows.append(row)
    if not rows:
        raise DataError(f"no data rows in {path}")
    values = np.array(rows, dtype=np.float64)
    return DataMatrix(
        values=values,
        labels=np.array(labels) if label_idx is not None else None,
        feature_names=tuple(feature_names),
    )


def subsample(data: DataMatrix, psi: int, rng: np.random.Generator) -> Subsample:
    """Uniform sample without replacement of min(psi, n) distinct row indices."""
    if psi < 2:
        raise DataError(f"sample size must be >= 2, got {psi}")
    n = data.n_rows
    if n < 2:
        raise DataError(f"need at least 2 rows to subsample, got {n}")
    size = min(psi, n)
    indices = rng.choice(n, size=size, replace=False)
    return Subsample(indices=indices)


def minmax_scaled(data: DataMatrix) -> DataMatrix:
    """Rescale every feature to [0, 1]; constant features map to 0."""
    lo = data.values.min(axis=0)
    span = data.values.max(axis=0) - lo
    span[span == 0.0] = 1.0
    return DataMatrix(
        values=(data.values - lo) / span,
        labels=data.labels,
        feature_names=data.feature_names,
    )
