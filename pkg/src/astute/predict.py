"""Black-box predictors: ReLU MLPs, a logistic linear model and an RBF kernel machine.

Every model maps a ``(d,)`` sample or an ``(n, d)`` batch to ``P(Y = 1)``.
MLPs are trained with mini-batch SGD + momentum on binary cross-entropy and
can have each weight matrix projected back onto an operator-norm ball after
every update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, atomic_write, check_ord, make_rng, sigmoid

ARCHS = ("mlp2", "mlp4", "linear", "kernel")


class TrainingDivergedError(RuntimeError):
    pass


def _as_batch(model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model expects {model.dim} features, got shape {x.shape}")
    return X, single


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class _Predictor:
    def logit(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        X, single = _as_batch(self, x)
        out = sigmoid(self.logit(X))
        return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class LinearModel(_Predictor):
    weights: np.ndarray
    bias: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or not math.isfinite(self.bias):
            raise ValueError("linear model needs a finite weight vector and bias")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    arch = "linear"

    @property
    def dim(self) -> int:
        return len(self.weights)

    def logit(self, X):
        return X @ self.weights + self.bias


@dataclass(frozen=True, eq=False)
class MlpModel(_Predictor):
    """ReLU network; ``weights[k]`` has shape ``(fan_out, fan_in)``, last layer has one row."""

    weights: tuple
    biases: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        W = tuple(_frozen(w) for w in self.weights)
        b = tuple(_frozen(v) for v in self.biases)
        if not W or len(W) != len(b):
            raise ValueError("need matching, nonempty weight and bias lists")
        for k, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or v.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: bad shapes {w.shape}, {v.shape}")
            if k and w.shape[1] != W[k - 1].shape[0]:
                raise ValueError(f"layer {k} input {w.shape[1]} != previous output {W[k - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
                raise ValueError(f"layer {k} has non-finite parameters")
        if W[-1].shape[0] != 1:
            raise ValueError("final layer must have a single output")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)

    @property
    def arch(self) -> str:
        return f"mlp{len(self.weights) - 1}"

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    def logit(self, X):
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W.T + b, 0.0)
        return (h @ self.weights[-1].T + self.biases[-1])[:, 0]


@dataclass(frozen=True, eq=False)
class KernelModel(_Predictor):
    centers: np.ndarray
    coefficients: np.ndarray
    bandwidth: float
    bias: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        C = _frozen(self.centers)
        c = _frozen(self.coefficients)
        if C.ndim != 2 or c.shape != (C.shape[0],):
            raise ValueError("coefficients length must equal number of centers")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "centers", C)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "bias", float(self.bias))

    arch = "kernel"

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def gram(self, X):
        sq = (
            np.einsum("ij,ij->i", X, X)[:, None]
            - 2.0 * X @ self.centers.T
            + np.einsum("ij,ij->i", self.centers, self.centers)[None, :]
        )
        return np.exp(-self.bandwidth * np.maximum(sq, 0.0))

    def logit(self, X):
        out = np.empty(len(X))
        for s in range(0, len(X), 4096):
            out[s : s + 4096] = self.gram(X[s : s + 4096]) @ self.coefficients + self.bias
        return out


def predict(model, x) -> float:
    """``P(Y = 1 | x)`` for a single sample."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict takes one sample; call the model directly for batches")
    return model(x)


# spectral norm and projection


def spectral_norm(W, tol: float = 1e-9, min_iter: int = 50, max_iter: int = 2000) -> float:
    """Largest singular value by power iteration from the normalized all-ones vector."""
    W = np.asarray(W, dtype=float)
    if not W.any():
        return 0.0
    v = np.full(W.shape[1], 1.0 / math.sqrt(W.shape[1]))
    u = W @ v
    if np.linalg.norm(u) <= 1e-12 * np.linalg.norm(W):
        # start vector (numerically) in the null space; restart from the heaviest row
        r = W[np.argmax(np.einsum("ij,ij->i", W, W))]
        v = r / np.linalg.norm(r)
    sigma_prev = 0.0
    sigma = 0.0
    for it in range(max_iter):
        u = W @ v
        u /= np.linalg.norm(u)
        v = W.T @ u
        sigma = float(np.linalg.norm(v))
        v /= sigma
        if it + 1 >= min_iter and abs(sigma - sigma_prev) <= tol * sigma:
            break
        sigma_prev = sigma
    return sigma


def operator_norm(W, p: float = 2.0) -> float:
    """Upper bound on the ``p -> p`` operator norm (exact for p in {1, 2, inf})."""
    W = np.asarray(W, dtype=float)
    p = check_ord(p)
    if W.shape[0] == 1:
        return _dual_norm(W[0], p)
    if p == 2:
        return float(np.linalg.norm(W, 2))
    n1 = float(np.abs(W).sum(axis=0).max())
    ninf = float(np.abs(W).sum(axis=1).max())
    if p == 1:
        return n1
    if math.isinf(p):
        return ninf
    # Riesz-Thorin interpolation between the 1- and inf-norms
    return n1 ** (1 / p) * ninf ** (1 - 1 / p)


def _dual_norm(w: np.ndarray, p: float) -> float:
    if p == 1:
        return float(np.abs(w).max())
    if math.isinf(p):
        return float(np.abs(w).sum())
    q = p / (p - 1)
    return float(np.linalg.norm(w, q))


def project_lipschitz(W, cap: float, p: float = 2.0) -> np.ndarray:
    """Rescale ``W`` so that its operator norm is at most ``cap``; no-op if already feasible."""
    if not cap > 0:
        raise ValueError(f"cap must be positive, got {cap}")
    W = np.asarray(W, dtype=float)
    p = check_ord(p)
    sigma = spectral_norm(W) if p == 2 else operator_norm(W, p)
    if sigma <= cap:
        return W.copy()
    return W * (cap / sigma)


def known_lipschitz_upper(model, p: float = 2.0) -> Optional[float]:
    """Global Lipschitz constant bound of ``x -> P(Y=1|x)`` w.r.t. ``d_p``; None for kernels."""
    if isinstance(model, LinearModel):
        return _dual_norm(model.weights, check_ord(p)) / 4.0
    if isinstance(model, MlpModel):
        prod = 1.0
        for W in model.weights:
            prod *= operator_norm(W, p)
        return prod / 4.0
    return None


# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    learning_rate: float = 0.05
    momentum: float = 0.9
    lipschitz_cap: Optional[float] = None
    seed: int = 0
    hidden: int = 200
    kernel_centers: int = 1000
    kernel_ridge: float = 1.0
    kernel_bandwidth: Optional[float] = None
    norm_order: float = 2.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and hidden >= 1 required")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.lipschitz_cap is not None and not self.lipschitz_cap > 0:
            raise ValueError("lipschitz_cap must be positive")
        if self.kernel_centers < 1 or not self.kernel_ridge > 0:
            raise ValueError("kernel_centers >= 1 and kernel_ridge > 0 required")


def init_mlp(dim: int, hidden: int, n_hidden: int, seed: int) -> MlpModel:
    rng = make_rng(seed, "init")
    sizes = [dim] + [hidden] * n_hidden + [1]
    Ws, bs = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 2.0 if k < n_hidden else 1.0
        Ws.append(rng.standard_normal((fan_out, fan_in)) * math.sqrt(gain / fan_in))
        bs.append(np.zeros(fan_out))
    return MlpModel(tuple(Ws), tuple(bs))


def loss_and_grads(weights, biases, X, y):
    """Mean binary cross-entropy on logits and its gradients w.r.t. every layer."""
    acts = [X]
    h = X
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ W.T + b, 0.0)
        acts.append(h)
    z = (h @ weights[-1].T + biases[-1])[:, 0]
    # log(1 + e^z) - y z, stable for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = ((sigmoid(z) - y) / len(X))[:, None]
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        gW[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ weights[k]) * (acts[k] > 0)
    return loss, gW, gb


def accuracy(model, data: Dataset) -> float:
    return float(np.mean((model(data.X) >= 0.5) == data.y))


def _train_sgd(model: MlpModel, data: Dataset, cfg: TrainConfig) -> tuple[MlpModel, list]:
    Ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    vW = [np.zeros_like(w) for w in Ws]
    vb = [np.zeros_like(b) for b in bs]
    rng = make_rng(cfg.seed, "shuffle")
    X, y = data.X, data.y.astype(float)
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            history.append(_epoch(Ws, bs, vW, vb, X, y, rng, cfg, epoch))
    return MlpModel(tuple(Ws), tuple(bs)), history


def _epoch(Ws, bs, vW, vb, X, y, rng, cfg: TrainConfig, epoch: int) -> float:
    order = rng.permutation(len(X))
    total = 0.0
    for s in range(0, len(X), cfg.batch_size):
        idx = order[s : s + cfg.batch_size]
        loss, gW, gb = loss_and_grads(Ws, bs, X[idx], y[idx])
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} in epoch {epoch}; lower the learning rate "
                f"(currently {cfg.learning_rate})"
            )
        total += loss * len(idx)
        for k in range(len(Ws)):
            vW[k] = cfg.momentum * vW[k] - cfg.learning_rate * gW[k]
            vb[k] = cfg.momentum * vb[k] - cfg.learning_rate * gb[k]
            Ws[k] += vW[k]
            bs[k] += vb[k]
            if cfg.lipschitz_cap is not None:
                Ws[k] = project_lipschitz(Ws[k], cfg.lipschitz_cap, cfg.norm_order)
    if not all(np.all(np.isfinite(w)) for w in Ws):
        raise TrainingDivergedError(f"parameters diverged in epoch {epoch}; lower the learning rate")
    return total / len(X)


def _fit_kernel(data: Dataset, cfg: TrainConfig) -> KernelModel:
    rng = make_rng(cfg.seed, "kernel")
    m = min(cfg.kernel_centers, data.n)
    idx = np.sort(rng.choice(data.n, size=m, replace=False))
    C = data.X[idx]
    t = 2.0 * data.y[idx] - 1.0
    # sklearn's gamma="scale"
    gamma = cfg.kernel_bandwidth or 1.0 / (data.dim * float(data.X.var()) or 1.0)
    probe = KernelModel(C, np.zeros(m), gamma)
    K = probe.gram(C)
    b = float(t.mean())
    coef = np.linalg.solve(K + cfg.kernel_ridge * np.eye(m), t - b)
    return KernelModel(C, coef, gamma, b)


def train(data: Dataset, arch: str, cfg: TrainConfig = TrainConfig(), test: Optional[Dataset] = None):
    """Fit a predictor of type ``arch`` and attach accuracy metadata to ``model.meta``."""
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}; choose from {ARCHS}")
    history: list = []
    if arch == "kernel":
        model = _fit_kernel(data, cfg)
    else:
        n_hidden = {"mlp2": 2, "mlp4": 4, "linear": 0}[arch]
        model = init_mlp(data.dim, cfg.hidden, n_hidden, cfg.seed)
        model, history = _train_sgd(model, data, cfg)
        if arch == "linear":
            model = LinearModel(model.weights[0][0], float(model.biases[0][0]))
    model.meta.update(
        arch=arch,
        train_accuracy=accuracy(model, data),
        test_accuracy=accuracy(model, test) if test is not None else None,
        loss_history=history,
        config=cfg.__dict__.copy(),
    )
    return model


# serialization


def model_to_dict(model) -> dict:
    if isinstance(model, LinearModel):
        params = {"weights": model.weights.tolist(), "bias": model.bias}
        shapes = [[1, model.dim]]
    elif isinstance(model, MlpModel):
        params = {
            "weights": [w.ravel().tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
        }
        shapes = [list(w.shape) for w in model.weights]
    elif isinstance(model, KernelModel):
        params = {
            "centers": model.centers.ravel().tolist(),
            "coefficients": model.coefficients.tolist(),
            "bandwidth": model.bandwidth,
            "bias": model.bias,
        }
        shapes = [list(model.centers.shape)]
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return {"arch": model.meta.get("arch", model.arch), "kind": type(model).__name__,
            "shapes": shapes, "params": params, "meta": model.meta}


def model_from_dict(doc: dict):
    kind, P, shapes = doc["kind"], doc["params"], doc["shapes"]
    meta = dict(doc.get("meta", {}))
    if kind == "LinearModel":
        return LinearModel(np.array(P["weights"]), P["bias"], meta)
    if kind == "MlpModel":
        Ws = tuple(np.array(w).reshape(s) for w, s in zip(P["weights"], shapes))
        return MlpModel(Ws, tuple(np.array(b) for b in P["biases"]), meta)
    if kind == "KernelModel":
        C = np.array(P["centers"]).reshape(shapes[0])
        return KernelModel(C, np.array(P["coefficients"]), P["bandwidth"], P["bias"], meta)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips bit-exactly
    atomic_write(path, json.dumps(model_to_dict(model), sort_keys=True) + "\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
