"""Removal-based explainers: exact/sampled Shapley values, RISE and remove-individual.

All explainers remove features by zeroing them (``x * z``) and explain the
scalar output of a predictor ``f`` that maps an ``(m, d)`` batch to ``(m,)``.

The exact explainers are linear in the vector of predictor values over all
``2**d`` masks, so both are implemented as ``F @ coef`` where ``F[s, m] =
f(x_s * z_m)`` and ``coef`` is a fixed ``(2**d, d)`` weight matrix.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import all_masks, atomic_write, make_rng

EXPLAINERS = ("shap", "rise", "remove_individual")
EXACT_CUTOFF = 20
# rows per predictor call when evaluating masked batches
_CHUNK_ROWS = 1 << 16


@dataclass(frozen=True)
class Attribution:
    scores: np.ndarray
    explainer_id: str
    sample_index: int = 0
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AttributionBatch:
    """Attributions for many samples; row ``k`` explains sample ``sample_index[k]``."""

    scores: np.ndarray
    explainer_id: str
    sample_index: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        idx = np.arange(len(scores)) if self.sample_index is None else self.sample_index
        idx = np.asarray(idx, dtype=np.int64)
        if scores.ndim != 2 or idx.shape != (scores.shape[0],):
            raise ValueError("scores must be (n, d) with one sample index per row")
        if not np.all(np.isfinite(scores)):
            raise ValueError("attributions contain NaN or Inf")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "sample_index", idx)

    def __len__(self):
        return len(self.sample_index)

    def __getitem__(self, k: int) -> Attribution:
        return Attribution(self.scores[k], self.explainer_id, int(self.sample_index[k]), self.meta)

    def rows_for(self, indices) -> np.ndarray:
        """Score rows for the given sample indices; raises naming the first missing one."""
        lookup = {int(s): r for r, s in enumerate(self.sample_index)}
        rows = []
        for s in np.asarray(indices).tolist():
            if s not in lookup:
                raise KeyError(f"no {self.explainer_id} attribution for sample index {s}")
            rows.append(lookup[s])
        return self.scores[np.asarray(rows, dtype=np.int64)]


@dataclass(frozen=True)
class RiseConfig:
    inclusion_prob: float = 0.5
    n_masks: int = 4000
    exact: bool = True
    seed: int = 0
    exact_cutoff: int = EXACT_CUTOFF

    def __post_init__(self):
        if not 0 < self.inclusion_prob < 1:
            raise ValueError("inclusion_prob must be in (0, 1)")
        if self.n_masks < 1:
            raise ValueError("n_masks must be positive")


def _evaluate(f, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    for s in range(0, len(X), _CHUNK_ROWS):
        v = np.asarray(f(X[s : s + _CHUNK_ROWS]), dtype=float).reshape(-1)
        if v.shape[0] != min(_CHUNK_ROWS, len(X) - s):
            raise ValueError("predictor must return one value per input row")
        out[s : s + _CHUNK_ROWS] = v
    return out


def _as_rows(x) -> np.ndarray:
    X = np.asarray(x, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def _check_exact(d: int, cutoff: int, alternative: str) -> None:
    if d > cutoff:
        raise ValueError(
            f"exact enumeration needs 2**{d} evaluations per sample (cutoff d <= {cutoff}); "
            f"use {alternative} instead"
        )


def mask_values(f, X: np.ndarray) -> np.ndarray:
    """``F[s, m] = f(X[s] * z_m)`` over all ``2**d`` masks (each mask evaluated once)."""
    X = _as_rows(X)
    Z = all_masks(X.shape[1])
    F = np.empty((len(X), len(Z)))
    per = max(1, _CHUNK_ROWS // len(Z))
    for s in range(0, len(X), per):
        blk = X[s : s + per]
        F[s : s + per] = _evaluate(f, (blk[:, None, :] * Z[None]).reshape(-1, X.shape[1])).reshape(len(blk), -1)
    return F


# Shapley


def shapley_weight(k: int, d: int) -> float:
    """``k! (d - k - 1)! / d!``, the weight of a size-``k`` coalition not containing ``i``."""
    if not 0 <= k <= d - 1:
        raise ValueError(f"coalition size k={k} out of range for d={d}")
    return math.exp(math.lgamma(k + 1) + math.lgamma(d - k) - math.lgamma(d + 1))


@lru_cache(maxsize=8)
def _shap_coef(d: int) -> np.ndarray:
    Z = all_masks(d)
    pop = Z.sum(axis=1).astype(int)
    w = np.array([shapley_weight(k, d) for k in range(d)])
    # with feature i: +w(|z| - 1); without: -w(|z|)
    coef = np.where(Z == 1, w[np.clip(pop - 1, 0, d - 1)][:, None], -w[np.minimum(pop, d - 1)][:, None])
    coef.setflags(write=False)
    return coef


def shap_exact_batch(f, X, exact_cutoff: int = EXACT_CUTOFF) -> np.ndarray:
    X = _as_rows(X)
    _check_exact(X.shape[1], exact_cutoff, "shap_sampled")
    return mask_values(f, X) @ _shap_coef(X.shape[1])


def shap_exact(f, x, exact_cutoff: int = EXACT_CUTOFF, sample_index: int = 0) -> Attribution:
    scores = shap_exact_batch(f, x, exact_cutoff)[0]
    return Attribution(scores, "shap", sample_index, {"exact": True, "n_masks": 2 ** len(scores)})


def _permutation_contributions(f, x: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Marginal contribution of each feature under each ordering, shape ``(n_perm, d)``."""
    n_perm, d = perms.shape
    # prefix masks: row (t, k) holds the first k+1 features of ordering t
    prefix = np.zeros((n_perm, d, d))
    rank = np.empty_like(perms)
    rank[np.arange(n_perm)[:, None], perms] = np.arange(d)
    prefix[:] = (rank[:, None, :] <= np.arange(d)[None, :, None])
    vals = _evaluate(f, (prefix * x).reshape(-1, d)).reshape(n_perm, d)
    base = _evaluate(f, np.zeros((1, d)))[0]
    steps = np.diff(np.concatenate([np.full((n_perm, 1), base), vals], axis=1), axis=1)
    contrib = np.empty_like(steps)
    contrib[np.arange(n_perm)[:, None], perms] = steps
    return contrib


def shap_sampled_batch(f, X, n_permutations: int, seed: int = 0):
    """Monte-Carlo permutation estimate; returns ``(scores, standard_errors)``.

    The same orderings are reused for every sample, so each estimate is a fixed
    average of marginal contributions (common random numbers across samples).
    """
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    X = _as_rows(X)
    d = X.shape[1]
    rng = make_rng(seed, "shap_permutations")
    perms = np.argsort(rng.random((n_permutations, d)), axis=1)
    scores = np.empty_like(X)
    se = np.empty_like(X)
    per = max(1, _CHUNK_ROWS // d)
    for s, x in enumerate(X):
        total = np.zeros(d)
        total_sq = np.zeros(d)
        for t in range(0, n_permutations, per):
            c = _permutation_contributions(f, x, perms[t : t + per])
            total += c.sum(axis=0)
            total_sq += (c * c).sum(axis=0)
        mean = total / n_permutations
        if n_permutations > 1:
            var = np.maximum(total_sq - n_permutations * mean * mean, 0.0) / (n_permutations - 1)
            se[s] = np.sqrt(var / n_permutations)
        else:
            se[s] = np.nan
        scores[s] = mean
    return scores, se


def shap_sampled(f, x, n_permutations: int, seed: int = 0, sample_index: int = 0) -> Attribution:
    scores, se = shap_sampled_batch(f, x, n_permutations, seed)
    meta = {"exact": False, "n_permutations": n_permutations, "seed": seed, "std_error": se[0].tolist()}
    return Attribution(scores[0], "shap", sample_index, meta)


# remove individual


def remove_individual_batch(f, X) -> np.ndarray:
    X = _as_rows(X)
    n, d = X.shape
    drop = 1.0 - np.eye(d)
    # per sample: the full input followed by d single-feature removals
    rows = np.concatenate([X[:, None, :], X[:, None, :] * drop[None]], axis=1)
    vals = _evaluate(f, rows.reshape(-1, d)).reshape(n, d + 1)
    return vals[:, :1] - vals[:, 1:]


def remove_individual(f, x, sample_index: int = 0) -> Attribution:
    scores = remove_individual_batch(f, x)[0]
    return Attribution(scores, "remove_individual", sample_index, {"exact": True, "n_masks": len(scores) + 1})


# RISE


@lru_cache(maxsize=8)
def _rise_coef(d: int, prob: float) -> np.ndarray:
    Z = all_masks(d)
    k = Z.sum(axis=1)
    pz = prob**k * (1.0 - prob) ** (d - k)
    # p(z | z_i = 1) = p(z) / prob on masks with bit i set
    coef = Z * (pz / prob)[:, None]
    coef.setflags(write=False)
    return coef


def _rise_base_masks(d: int, cfg: RiseConfig) -> np.ndarray:
    return (make_rng(cfg.seed, "rise_masks").random((cfg.n_masks, d)) < cfg.inclusion_prob).astype(float)


def rise_batch(f, X, cfg: RiseConfig = RiseConfig()):
    """RISE scores ``E[f(x * z) | z_i = 1]``; returns ``(scores, standard_errors)``.

    Exact mode enumerates every mask (standard errors are zero). Sampled mode
    draws one set of Bernoulli masks, shared across samples as in RISE, and
    forces bit ``i`` on for feature ``i``'s estimate.
    """
    X = _as_rows(X)
    n, d = X.shape
    if cfg.exact:
        _check_exact(d, cfg.exact_cutoff, "sampled RISE (exact=False)")
        return mask_values(f, X) @ _rise_coef(d, cfg.inclusion_prob), np.zeros((n, d))
    B = _rise_base_masks(d, cfg)
    scores = np.empty((n, d))
    se = np.empty((n, d))
    for s, x in enumerate(X):
        for i in range(d):
            M = B.copy()
            M[:, i] = 1.0
            v = _evaluate(f, M * x)
            scores[s, i] = v.mean()
            se[s, i] = v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else np.nan
    return scores, se


def rise(f, x, cfg: RiseConfig = RiseConfig(), sample_index: int = 0) -> Attribution:
    scores, se = rise_batch(f, x, cfg)
    meta = {"exact": cfg.exact, "seed": cfg.seed, "inclusion_prob": cfg.inclusion_prob,
            "n_masks": 2 ** (len(scores[0]) - 1) if cfg.exact else cfg.n_masks,
            "std_error": se[0].tolist()}
    return Attribution(scores[0], "rise", sample_index, meta)


# batch driver


def explain_batch(
    f,
    X,
    explainer: str,
    *,
    exact: bool = True,
    n_permutations: int = 2000,
    rise_cfg: RiseConfig | None = None,
    sample_index=None,
    jobs: int = 1,
) -> AttributionBatch:
    """Explain every row of ``X``; work is split into contiguous chunks across ``jobs`` threads."""
    if explainer not in EXPLAINERS:
        raise ValueError(f"unknown explainer {explainer!r}; choose from {EXPLAINERS}")
    X = _as_rows(X)
    idx = np.arange(len(X)) if sample_index is None else np.asarray(sample_index)
    rise_cfg = rise_cfg or RiseConfig(exact=exact)
    if explainer == "shap" and exact:
        fn, meta = (lambda B: shap_exact_batch(f, B)), {"exact": True, "n_masks": 2 ** X.shape[1]}
    elif explainer == "shap":
        fn = lambda B: shap_sampled_batch(f, B, n_permutations, rise_cfg.seed)[0]  # noqa: E731
        meta = {"exact": False, "n_permutations": n_permutations, "seed": rise_cfg.seed}
    elif explainer == "rise":
        fn = lambda B: rise_batch(f, B, rise_cfg)[0]  # noqa: E731
        meta = {"exact": rise_cfg.exact, "seed": rise_cfg.seed, "inclusion_prob": rise_cfg.inclusion_prob,
                "n_masks": 2 ** (X.shape[1] - 1) if rise_cfg.exact else rise_cfg.n_masks}
    else:
        fn, meta = (lambda B: remove_individual_batch(f, B)), {"exact": True, "n_masks": X.shape[1] + 1}
    jobs = max(1, int(jobs))
    if jobs == 1 or len(X) < 2 * jobs:
        scores = fn(X)
    else:
        parts = np.array_split(np.arange(len(X)), jobs)
        with ThreadPoolExecutor(jobs) as pool:
            scores = np.concatenate(list(pool.map(lambda p: fn(X[p]), parts)))
    return AttributionBatch(scores, explainer, idx, meta)


# persistence


def save_attributions(batch: AttributionBatch, path) -> None:
    path = Path(path)
    d = batch.scores.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_index", "explainer", *(f"phi_{i + 1}" for i in range(d))])
    for s, row in zip(batch.sample_index.tolist(), batch.scores.tolist()):
        w.writerow([s, batch.explainer_id, *(repr(v) for v in row)])
    atomic_write(path, buf.getvalue())
    atomic_write(path.with_suffix(path.suffix + ".json"), json.dumps(batch.meta, indent=2, sort_keys=True) + "\n")


def load_attributions(path) -> AttributionBatch:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["sample_index", "explainer"] or not body:
        raise ValueError(f"{path}: not an attribution CSV")
    explainers = {r[1] for r in body}
    if len(explainers) != 1:
        raise ValueError(f"{path}: mixed explainers {sorted(explainers)}")
    meta_path = path.with_suffix(path.suffix + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return AttributionBatch(
        np.array([[float(v) for v in r[2:]] for r in body]),
        explainers.pop(),
        np.array([int(r[0]) for r in body]),
        meta,
    )
