"""Probabilistic Lipschitzness and explainer astuteness estimates, predicted
lower bounds, normalized AUCs, the masked-point worst case (beta*) and an
exhaustive theorem checker for deterministically Lipschitz predictors."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset, PairSamplePlan, PairSet, atomic_write, check_ord, row_distances, sample_pairs
from .explain import AttributionBatch, RiseConfig, explain_batch

EXPLAINER_CONSTANT = {"shap": 2, "remove_individual": 2, "rise": 1}


def default_grid(start=0.1, stop=1.0, step=0.1) -> np.ndarray:
    """Inclusive grid, rounded so that e.g. 0.3 is exactly the float literal 0.3."""
    n = int(round((stop - start) / step))
    return np.round(start + step * np.arange(n + 1), 10)


L_GRID = default_grid(0.1, 1.0)
LAMBDA_GRID = default_grid(0.1, 1.1)


@dataclass(frozen=True)
class RobustnessCurve:
    kind: str
    grid: np.ndarray
    values: np.ndarray
    radius: float = float("nan")
    norm_order: float = 2.0
    n_pairs: int = 0
    subject_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("lipschitzness", "astuteness", "predicted_bound"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) == 0:
            raise ValueError("grid and values must be equal-length, nonempty vectors")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly ascending")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("curve values must lie in [0, 1]")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or len(g) == 0 or np.any(np.diff(g) <= 0) or np.any(g < 0):
        raise ValueError("grid must be a nonempty, strictly ascending vector of nonnegative values")
    return g


def _satisfaction(num: np.ndarray, den: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fraction of pairs with ``num <= c * den`` for each ``c`` in ``grid``.

    Zero-distance pairs have ``num == 0`` and always count as satisfied.
    """
    counts = np.array([np.count_nonzero(num <= c * den) for c in grid])
    return counts / len(num)


def _pairs(data: Dataset, plan: PairSamplePlan, p: float, pairs: PairSet | None) -> PairSet:
    if pairs is None:
        return sample_pairs(data, plan, p)
    if pairs.p != p:
        raise ValueError(f"pair set was built with p={pairs.p}, not {p}")
    return pairs


def estimate_plipschitz(f, data: Dataset, plan: PairSamplePlan, p: float = 2.0, L_grid=L_GRID,
                        pairs: PairSet | None = None, subject_id: str = "") -> RobustnessCurve:
    """Fraction of within-radius pairs with ``|f(x) - f(x')| <= L d_p(x, x')``, per ``L``."""
    p = check_ord(p)
    grid = _check_grid(L_grid)
    pairs = _pairs(data, plan, p, pairs)
    fx = np.asarray(f(data.X), dtype=float).reshape(-1)
    diff = np.abs(fx[pairs.i] - fx[pairs.j])
    return RobustnessCurve("lipschitzness", grid, _satisfaction(diff, pairs.dist, grid), pairs.radius, p,
                           len(pairs), subject_id, {"exhaustive": pairs.exhaustive, "seed": plan.seed})


def estimate_astuteness(attrs: AttributionBatch, data: Dataset, plan: PairSamplePlan, p: float = 2.0,
                        lambda_grid=LAMBDA_GRID, pairs: PairSet | None = None,
                        subject_id: str = "") -> RobustnessCurve:
    """Fraction of within-radius pairs with ``d_p(phi(x), phi(x')) <= lambda d_p(x, x')``."""
    p = check_ord(p)
    grid = _check_grid(lambda_grid)
    pairs = _pairs(data, plan, p, pairs)
    needed = np.unique(np.concatenate([pairs.i, pairs.j]))
    phi = np.zeros((data.n, attrs.scores.shape[1]))
    phi[needed] = attrs.rows_for(needed)
    dphi = row_distances(phi[pairs.i], phi[pairs.j], p)
    return RobustnessCurve("astuteness", grid, _satisfaction(dphi, pairs.dist, grid), pairs.radius, p,
                           len(pairs), subject_id or attrs.explainer_id,
                           {"exhaustive": pairs.exhaustive, "seed": plan.seed, "explainer": attrs.explainer_id})


@dataclass(frozen=True)
class BoundSpec:
    C: int
    dim: int
    norm_order: float = 2.0

    def __post_init__(self):
        if self.C not in (1, 2):
            raise ValueError("explainer constant C must be 1 or 2")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        check_ord(self.norm_order)

    @classmethod
    def for_explainer(cls, explainer: str, dim: int, p: float = 2.0) -> "BoundSpec":
        return cls(EXPLAINER_CONSTANT[explainer], dim, p)

    @property
    def scale(self) -> float:
        """``lambda = scale * L``."""
        return self.C * self.dim ** (1.0 / self.norm_order)


def predict_bound(profile: RobustnessCurve, spec: BoundSpec, lambda_grid=LAMBDA_GRID) -> RobustnessCurve:
    """Step lower envelope: ``bound(lam) = max{profile(L) : C L d^(1/p) <= lam}``, 0 if empty."""
    grid = _check_grid(lambda_grid)
    activation = spec.scale * profile.grid
    out = np.zeros(len(grid))
    for k, lam in enumerate(grid):
        # relative slack absorbs rounding in C * L * d^(1/p) at exact grid coincidences
        ok = activation <= lam * (1 + 1e-12)
        if ok.any():
            out[k] = profile.values[ok].max()
    return RobustnessCurve("predicted_bound", grid, out, profile.radius, spec.norm_order, profile.n_pairs,
                           profile.subject_id, {"C": spec.C, "dim": spec.dim, "L_grid": profile.grid.tolist()})


def auc(curve: RobustnessCurve, lambda_min: float, lambda_max: float) -> float:
    """Trapezoidal area over ``[lambda_min, lambda_max]`` divided by the interval width.

    Values between grid points are linearly interpolated and held constant
    beyond the grid ends.
    """
    if not lambda_max > lambda_min:
        raise ValueError(f"degenerate interval [{lambda_min}, {lambda_max}]")
    g = curve.grid
    inner = g[(g > lambda_min) & (g < lambda_max)]
    xs = np.concatenate([[lambda_min], inner, [lambda_max]])
    ys = np.interp(xs, g, curve.values)
    area = float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))
    return area / (lambda_max - lambda_min)


def auc_gap(emp: RobustnessCurve, pred: RobustnessCurve, interval: tuple[float, float]) -> float:
    return auc(emp, *interval) - auc(pred, *interval)


# beta*


@dataclass(frozen=True)
class BetaStarProblem:
    """``p[k-1]`` is the mass of points with exactly ``k`` nonzero coordinates
    (including coordinate ``i``); ``alpha`` the Lipschitz-violation budget."""

    p: tuple
    alpha: float

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if not p or any(v < 0 for v in p):
            raise ValueError("p must be a nonempty vector of nonnegative masses")
        if sum(p) > 1 + 1e-12:
            raise ValueError(f"masses sum to {sum(p)} > 1")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        object.__setattr__(self, "p", p)

    @property
    def feasible(self) -> bool:
        return self.alpha <= sum(self.p) + 1e-12

    def objective(self, gamma) -> float:
        p = np.asarray(self.p)
        w = 2.0 ** -np.arange(1, len(p) + 1)
        den = float(np.sum(w * p))
        return float(np.sum(w * p * np.asarray(gamma))) / den if den > 0 else 0.0


def beta_star(prob: BetaStarProblem) -> tuple[float, np.ndarray]:
    """Maximize the masked-point violation share subject to the unmasked budget.

    Fractional knapsack: budget ``alpha`` is spent on ``p_k`` with value density
    ``2**-k`` per unit, so levels are filled in ascending ``k`` (ties by index).
    """
    if not prob.feasible:
        raise ValueError(f"infeasible: alpha={prob.alpha} exceeds total mass {sum(prob.p)}")
    p = np.asarray(prob.p)
    gamma = np.zeros(len(p))
    budget = float(prob.alpha)
    for k in range(len(p)):
        if budget <= 0:
            break
        if p[k] == 0:
            continue
        gamma[k] = min(1.0, budget / p[k])
        budget -= gamma[k] * p[k]
    return min(1.0, prob.objective(gamma)), gamma


def beta_star_oracle(prob: BetaStarProblem, resolution: float = 1e-3) -> float:
    """Brute-force grid search over ``gamma in [0, 1]^d``.

    Keeps grid points with ``|sum p gamma - alpha| <= resolution * max(p)``. The
    objective is increasing in the last coordinate, so for each grid point of the
    first ``d - 1`` coordinates only the largest feasible last grid value is
    scored; this visits the same optimum as scanning the full grid.
    """
    p = np.asarray(prob.p)
    d = len(p)
    if d > 4:
        raise ValueError("grid oracle is limited to d <= 4")
    steps = int(round(1 / resolution))
    axis = np.linspace(0.0, 1.0, steps + 1)
    tol = resolution * p.max() if p.max() > 0 else resolution
    w = 2.0 ** -np.arange(1, d + 1)
    den = float(np.sum(w * p))
    head = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1) if d > 1 else np.zeros((1, 0))
    best = -np.inf
    for s in range(0, len(head), 1 << 20):
        H = head[s : s + (1 << 20)]
        used = H @ p[:-1]
        rest = prob.alpha - used
        if p[-1] > 0:
            # largest grid g with p_last * g <= rest + tol, and p_last * g >= rest - tol
            g = np.clip(np.floor((rest + tol) / p[-1] / resolution + 1e-9) * resolution, 0.0, 1.0)
            ok = np.abs(used + p[-1] * g - prob.alpha) <= tol
        else:
            g = np.zeros(len(H))
            ok = np.abs(rest) <= tol
        if ok.any():
            num = H[ok] @ (w[:-1] * p[:-1]) + w[-1] * p[-1] * g[ok]
            best = max(best, float(num.max()))
    if best == -np.inf:
        raise ValueError("no feasible grid point; refine the resolution")
    return best / den if den > 0 else 0.0


# theorem check


@dataclass(frozen=True)
class TheoremReport:
    explainer: str
    violations: int
    n_pairs: int
    max_ratio: float
    bound: float
    lipschitz: float
    C: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_theorem(explainer: str, f, data: Dataset, plan: PairSamplePlan, p: float = 2.0,
                   pairs: PairSet | None = None, attrs: AttributionBatch | None = None) -> TheoremReport:
    """Check ``d_p(phi(x), phi(x')) <= C L d^(1/p) d_p(x, x')`` on every qualifying pair.

    ``L`` is the predictor's certified global Lipschitz constant; explainers run exactly.
    """
    from .predict import known_lipschitz_upper

    p = check_ord(p)
    L = known_lipschitz_upper(f, p)
    if L is None:
        raise ValueError(f"{type(f).__name__} has no known Lipschitz bound; theorem check needs one")
    spec = BoundSpec.for_explainer(explainer, data.dim, p)
    bound = spec.scale * L
    pairs = _pairs(data, plan, p, pairs)
    if attrs is None:
        attrs = explain_batch(f, data.X, explainer, exact=True, rise_cfg=RiseConfig(exact=True))
    elif not attrs.meta.get("exact", False):
        raise ValueError("theorem check needs attributions computed in exact mode")
    phi = attrs.rows_for(np.arange(data.n))
    dphi = row_distances(phi[pairs.i], phi[pairs.j], p)
    violations = int(np.count_nonzero(dphi > bound * pairs.dist))
    pos = pairs.dist > 0
    max_ratio = float(np.max(dphi[pos] / pairs.dist[pos])) if pos.any() else 0.0
    return TheoremReport(explainer, violations, len(pairs), max_ratio, bound, L, spec.C)


# persistence


def save_curve(curve: RobustnessCurve, path) -> None:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid_value", "probability"])
    for g, v in zip(curve.grid.tolist(), curve.values.tolist()):
        w.writerow([repr(g), repr(v)])
    atomic_write(path, buf.getvalue())
    meta = {"kind": curve.kind, "radius": curve.radius, "p": curve.norm_order, "n_pairs": curve.n_pairs,
            "subject_id": curve.subject_id, **curve.meta}
    atomic_write(path.with_suffix(path.suffix + ".json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_curve(path) -> RobustnessCurve:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["grid_value", "probability"]:
        raise ValueError(f"{path}: not a curve CSV")
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    kind = meta.pop("kind")
    radius = meta.pop("radius", math.nan)
    p = meta.pop("p", 2.0)
    n_pairs = meta.pop("n_pairs", 0)
    subject = meta.pop("subject_id", "")
    grid = [float(r[0]) for r in rows[1:]]
    vals = [float(r[1]) for r in rows[1:]]
    return RobustnessCurve(kind, grid, vals, radius, p, n_pairs, subject, meta)
