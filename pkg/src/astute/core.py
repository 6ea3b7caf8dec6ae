"""Shared primitives: datasets, p-norm distances, masks, RNG streams and pair sampling."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

DEFAULT_MAX_PAIRS = 200_000


class RadiusTooSmallError(ValueError):
    """No pair of samples lies within the requested radius."""


def check_ord(p: float) -> float:
    p = float(p)
    if not p >= 1:
        raise ValueError(f"norm order must be >= 1, got {p}")
    return p


def make_rng(seed: int, *names: str) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and an optional stream name.

    Different names give statistically independent streams for the same seed, so
    e.g. the pair sampler and the mask sampler never share draws.
    """
    spawn_key = tuple(zlib.crc32(n.encode()) for n in names)
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Dataset:
    """``n`` samples of dimension ``dim`` with binary labels."""

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ValueError(f"X must be a nonempty (n, d) matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels length {y.shape} does not match {X.shape[0]} samples")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or Inf")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        names = tuple(self.feature_names) or tuple(f"x{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match dim")
        X.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.feature_names)


def train_test_split(data: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < n_test < data.n:
        raise ValueError(f"n_test must be in (0, {data.n}), got {n_test}")
    perm = make_rng(seed, "split").permutation(data.n)
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def sigmoid(v):
    """Numerically stable logistic function; scalars in, float out."""
    v = np.asarray(v, dtype=float)
    # split by sign so neither branch overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def _pnorm(diff: np.ndarray, p: float) -> np.ndarray:
    a = np.abs(diff)
    if p == 1:
        return a.sum(axis=-1)
    if p == 2:
        return np.sqrt(np.einsum("...i,...i->...", a, a))
    if math.isinf(p):
        return a.max(axis=-1)
    return (a**p).sum(axis=-1) ** (1.0 / p)


def distance(a, b, p: float = 2.0) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(_pnorm(a - b, check_ord(p)))


def row_distances(A: np.ndarray, B: np.ndarray, p: float = 2.0) -> np.ndarray:
    """Row-wise ``d_p(A[k], B[k])``."""
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return _pnorm(A - B, check_ord(p))


def apply_mask(x, z) -> np.ndarray:
    """Zero-baseline removal: keep ``x_i`` where ``z_i == 1``, else 0.

    Broadcasts, so a stack of masks ``(m, d)`` against one sample ``(d,)`` works.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z)
    if x.shape[-1] != z.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("mask entries must be 0 or 1")
    return x * z


def all_masks(d: int) -> np.ndarray:
    """All ``2**d`` masks; row ``m`` has bit ``i`` equal to ``(m >> i) & 1``."""
    m = np.arange(2**d, dtype=np.int64)
    return ((m[:, None] >> np.arange(d)) & 1).astype(float)


# pair enumeration


def _n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def _unrank_pairs(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # rank k enumerates (i, j), i < j, row-major: rows of length n-1, n-2, ...
    k = np.asarray(k, dtype=np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2).astype(np.int64)
    start = i * (2 * n - i - 1) // 2
    # guard against float rounding at row boundaries
    low = k < start
    i[low] -= 1
    start = i * (2 * n - i - 1) // 2
    nxt = (i + 1) * (2 * n - i - 2) // 2
    high = k >= nxt
    i[high] += 1
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


def enumerate_pairs(n: int, max_pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Index pairs ``i < j``: all of them if there are at most ``max_pairs``,
    else ``max_pairs`` distinct pairs drawn uniformly. Sorted by ``(i, j)``.

    Returns ``(i, j, exhaustive)``.
    """
    if n < 2:
        raise ValueError("need at least 2 samples to form pairs")
    if max_pairs < 1:
        raise ValueError("max_pairs must be >= 1")
    total = _n_pairs(n)
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
        return i.astype(np.int64), j.astype(np.int64), True
    ranks = np.sort(make_rng(seed, "pairs").choice(total, size=max_pairs, replace=False))
    i, j = _unrank_pairs(ranks, n)
    return i, j, False


def _chunked_distances(X: np.ndarray, i: np.ndarray, j: np.ndarray, p: float, chunk=1 << 18):
    out = np.empty(len(i))
    for s in range(0, len(i), chunk):
        out[s : s + chunk] = _pnorm(X[i[s : s + chunk]] - X[j[s : s + chunk]], p)
    return out


def median_pairwise_distance(
    data: Dataset, p: float = 2.0, max_pairs: int = DEFAULT_MAX_PAIRS, seed: int = 0
) -> float:
    p = check_ord(p)
    i, j, _ = enumerate_pairs(data.n, max_pairs, seed)
    return float(np.median(_chunked_distances(data.X, i, j, p)))


@dataclass(frozen=True)
class PairSamplePlan:
    radius: float
    max_pairs: int = DEFAULT_MAX_PAIRS
    seed: int = 0

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if self.max_pairs < 1:
            raise ValueError("max_pairs must be >= 1")


@dataclass(frozen=True)
class PairSet:
    """Qualifying pairs (``d_p <= radius``) as parallel arrays sorted by ``(i, j)``."""

    i: np.ndarray
    j: np.ndarray
    dist: np.ndarray
    radius: float
    p: float
    exhaustive: bool
    n_candidates: int

    def __len__(self) -> int:
        return len(self.i)

    def __iter__(self) -> Iterator[tuple[int, int, float]]:
        for a, b, c in zip(self.i.tolist(), self.j.tolist(), self.dist.tolist()):
            yield a, b, c


def sample_pairs(data: Dataset, plan: PairSamplePlan, p: float = 2.0) -> PairSet:
    p = check_ord(p)
    i, j, exhaustive = enumerate_pairs(data.n, plan.max_pairs, plan.seed)
    dist = _chunked_distances(data.X, i, j, p)
    keep = dist <= plan.radius
    if not keep.any():
        raise RadiusTooSmallError(
            f"radius too small for this dataset: no pair within r={plan.radius:g}"
        )
    return PairSet(i[keep], j[keep], dist[keep], float(plan.radius), p, exhaustive, len(i))


def atomic_write(path, text: str) -> None:
    """Write via a temp file and rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
