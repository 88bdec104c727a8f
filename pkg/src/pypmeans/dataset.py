"""Dataset container, CSV ingestion and min-max normalization."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed or invalid input data."""


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[list[str]] = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DatasetError(f"points must be a non-empty n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DatasetError("points contain NaN or Inf")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim != 1 or lab.shape[0] != pts.shape[0]:
                raise DatasetError(f"labels must have length {pts.shape[0]}")
            if lab.dtype.kind == "f":
                if not np.all(lab == np.round(lab)):
                    raise DatasetError("labels must be integers")
            lab = lab.astype(np.int64)
            if lab.min() < 1:
                raise DatasetError(f"labels must be >= 1, found {lab.min()}")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

        if self.feature_names is not None:
            names = list(self.feature_names)
            if len(names) != pts.shape[1]:
                raise DatasetError(f"expected {pts.shape[1]} feature names, got {len(names)}")
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_points(self, points: np.ndarray) -> "Dataset":
        return Dataset(points, self.labels, self.feature_names)

    def fingerprint(self) -> str:
        """sha256 over the point matrix and labels (stable across runs)."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.points).tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def contiguous_labels(labels: Sequence[int]) -> np.ndarray:
    """Map arbitrary integer labels onto 1..K, preserving sorted order."""
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.astype(np.int64) + 1


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: Optional[str] = None) -> Dataset:
    """Read a comma-delimited file into a :class:`Dataset`.

    The first row is treated as a header when any of its cells is not
    numeric. ``label_column`` names the column holding ground-truth labels;
    ``"last"`` selects the final column. Labels must be integers >= 1 and
    are remapped to the contiguous range 1..K.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: empty file")

    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    width = len(header) if header is not None else len(rows[0])
    first_line = 2 if header is not None else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DatasetError(
                f"{path}: ragged row {i + 1} (line {i + first_line}): "
                f"expected {width} fields, got {len(row)}"
            )

    label_idx = None
    if label_column is not None:
        if label_column == "last":
            label_idx = width - 1
        elif header is not None and label_column in header:
            label_idx = header.index(label_column)
        else:
            raise DatasetError(f"{path}: unknown label column {label_column!r}")
    if label_idx is not None and width < 2:
        raise DatasetError(f"{path}: label column leaves no feature columns")

    values = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DatasetError(
                    f"{path}: cannot parse {cell!r} at row {i + 1}, column {j + 1} "
                    f"(line {i + first_line})"
                ) from None
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DatasetError(f"{path}: non-finite value at row {bad[0] + 1}, column {bad[1] + 1}")

    labels = None
    feat_cols = list(range(width))
    if label_idx is not None:
        raw = values[:, label_idx]
        if not np.all(raw == np.round(raw)):
            raise DatasetError(f"{path}: label column holds non-integer values")
        if raw.min() < 1:
            raise DatasetError(f"{path}: labels must be >= 1, found {raw.min():g}")
        labels = contiguous_labels(raw.astype(np.int64))
        feat_cols.remove(label_idx)

    names = [header[j] for j in feat_cols] if header is not None else None
    return Dataset(values[:, feat_cols], labels, names)


def save_csv(ds: Dataset, path, label_name: str = "label") -> None:
    """Write ``ds`` in the dialect read by :func:`load_csv`.

    A header is always written; labels, when present, go in a trailing column.
    Floats use ``repr`` so the round trip is exact.
    """
    names = ds.feature_names or [f"x{j + 1}" for j in range(ds.d)]
    header = list(names)
    if ds.labels is not None:
        header.append(label_name)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.points[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


def normalize(ds: Dataset) -> Dataset:
    """Rescale every column onto [0, 1]; constant columns become 0."""
    x = ds.points
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return ds.with_points(out)
