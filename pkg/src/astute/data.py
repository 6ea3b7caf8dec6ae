"""Synthetic benchmark generators and CSV ingestion for tabular binary tasks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, atomic_write, make_rng, sigmoid

KINDS = ("orange_skin", "nonlinear_additive", "switch")
MIN_DIM = {"orange_skin": 4, "nonlinear_additive": 4, "switch": 10}


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    dim: int = 10
    seed: int = 0
    switch_center: float = 3.0
    switch_std: float = 1.0
    switch_weight: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; choose from {KINDS}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.dim < MIN_DIM[self.kind]:
            raise ValueError(f"{self.kind} requires dim >= {MIN_DIM[self.kind]}, got {self.dim}")
        if not 0 < self.switch_weight < 1 or self.switch_std <= 0:
            raise ValueError("switch mixture needs weight in (0,1) and std > 0")


def orange_skin_score(X: np.ndarray) -> np.ndarray:
    return np.sum(X[:, :4] ** 2, axis=1) - 4.0


def nonlinear_additive_score(X: np.ndarray) -> np.ndarray:
    return (
        -100.0 * np.sin(2.0 * X[:, 0])
        + 2.0 * np.abs(X[:, 1])
        + X[:, 2]
        + np.exp(-X[:, 3])
    )


def score(kind: str, X, upper=None) -> np.ndarray:
    """Log-odds of ``Y = 1`` under generator ``kind``.

    For ``switch``, ``upper`` marks rows whose first feature came from the ``+center``
    component; when omitted it is inferred from the sign of the first feature.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kind == "orange_skin":
        return orange_skin_score(X)
    if kind == "nonlinear_additive":
        return nonlinear_additive_score(X)
    if kind == "switch":
        if X.shape[1] < 9:
            raise ValueError("switch needs at least 9 features")
        upper = X[:, 0] > 0 if upper is None else np.broadcast_to(np.asarray(upper, bool), X.shape[:1])
        return np.where(upper, orange_skin_score(X[:, 1:5]), nonlinear_additive_score(X[:, 5:9]))
    raise ValueError(f"unknown generator kind {kind!r}")


def label_probability(kind: str, X, upper=None) -> np.ndarray:
    return sigmoid(score(kind, X, upper))


def generate(spec: GeneratorSpec) -> Dataset:
    rng = make_rng(spec.seed, "generate", spec.kind)
    X = rng.standard_normal((spec.n, spec.dim))
    upper = None
    if spec.kind == "switch":
        upper = rng.random(spec.n) < spec.switch_weight
        X[:, 0] = np.where(upper, spec.switch_center, -spec.switch_center) + spec.switch_std * X[:, 0]
    prob = label_probability(spec.kind, X, upper)
    y = (rng.random(spec.n) < prob).astype(np.int64)
    return Dataset(X, y)


# CSV


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        std = X.std(axis=0, ddof=1) if len(X) > 1 else np.ones(X.shape[1])
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ValueError(f"non-numeric value {cell!r} at row {row}, column {col!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {cell!r} at row {row}, column {col!r}")
    return v


def load_csv(path, label_column="label", standardize: bool = False, stats: Standardizer | None = None):
    """Read a header-first CSV of numeric features plus one binary label column.

    ``label_column`` is a header name or a 0-based column index. With
    ``standardize`` the features are z-scored using ``stats`` if given (e.g. the
    training split's), otherwise using this file's own column statistics.
    Returns ``(dataset, standardizer_or_None)``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    if isinstance(label_column, int):
        li = label_column if label_column >= 0 else len(header) + label_column
        if not 0 <= li < len(header):
            raise ValueError(f"label column index {label_column} out of range")
    else:
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in header {header}")
        li = header.index(label_column)
    feat_cols = [k for k in range(len(header)) if k != li]
    X = np.empty((len(body), len(feat_cols)))
    y = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"row {r} has {len(row)} cells, expected {len(header)}")
        for c, k in enumerate(feat_cols):
            X[r - 2, c] = _parse_float(row[k], r, header[k])
        lab = _parse_float(row[li], r, header[li])
        if lab not in (0.0, 1.0):
            raise ValueError(f"non-binary label {row[li]!r} at row {r}")
        y[r - 2] = int(lab)
    scaler = None
    if standardize:
        scaler = stats or Standardizer.fit(X)
        X = scaler.transform(X)
    return Dataset(X, y, tuple(header[k] for k in feat_cols)), scaler


def save_csv(data: Dataset, path, label_column: str = "label", spec: GeneratorSpec | None = None):
    """Write the dataset as CSV; with ``spec``, also a ``<path>.json`` sidecar."""
    path = Path(path)
    lines = [",".join([*data.feature_names, label_column])]
    for xrow, lab in zip(data.X.tolist(), data.y.tolist()):
        lines.append(",".join([*(repr(v) for v in xrow), str(lab)]))
    atomic_write(path, "\n".join(lines) + "\n")
    if spec is not None:
        atomic_write(path.with_suffix(path.suffix + ".json"), json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")

