"""Linear models trained on the SHAP-regularized objective by exact gradient descent.

For ``f(x) = bias + w . x`` the SHAP values are closed form,
``phi_ij = w_j (x_ij - mean_j)``, so both penalties are explicit functions of
``w``. ``|phi|`` is replaced by ``sqrt(phi^2 + eps^2)`` to make them smooth,
and the analytic gradient can be checked against finite differences.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Task
from .errors import DivergedLoss, MalformedDocument, SchemaMismatch
from .gbdt import TrainTrace, TraceRow, objective_for
from .shap_reg import RegConfig
from .treeshap import ShapMatrix
from .trees import sigmoid

SMOOTHING_EPS = 1e-6
MAX_STABILITY_ROWS = 1500


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    task: Task = Task.REGRESSION
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.feature_means, dtype=np.float64)
        if w.ndim != 1 or mu.shape != w.shape:
            raise ValueError("weights and feature_means must be vectors of equal length")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "feature_means", mu)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "task", Task.parse(self.task))
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(w.size))
        object.__setattr__(self, "feature_names", names)

    @property
    def n_features(self) -> int:
        return self.weights.size

    def _matrix(self, data) -> np.ndarray:
        X = data.matrix_for(self.feature_names) if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_raw(self, data) -> np.ndarray:
        return self.bias + self._matrix(data) @ self.weights

    def predict(self, data) -> np.ndarray:
        raw = self.predict_raw(data)
        return sigmoid(raw) if self.task is Task.BINARY else raw

    def to_json(self) -> str:
        doc = {
            "format": "shapguide.linear",
            "version": 1,
            "task": self.task.value,
            "feature_names": list(self.feature_names),
            "weights": [float(v) for v in self.weights],
            "bias": self.bias,
            "feature_means": [float(v) for v in self.feature_means],
        }
        return json.dumps(doc, indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        try:
            doc = json.loads(text)
            if doc.get("format") != "shapguide.linear":
                raise MalformedDocument("$.format: expected 'shapguide.linear'")
            return cls(doc["weights"], doc["bias"], doc["feature_means"], doc["task"], doc["feature_names"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedDocument):
                raise
            raise MalformedDocument(f"$: invalid linear model document ({exc})") from None


def linear_shap(m: LinearModel, data) -> ShapMatrix:
    X = m._matrix(data)
    phi = (X - m.feature_means) * m.weights
    return ShapMatrix(phi, m.bias + float(m.weights @ m.feature_means), m.feature_names)


# ------------------------------------------------------------- smoothed penalties

def smoothed_entropy(phi: np.ndarray, eps: float = SMOOTHING_EPS) -> float:
    a = np.sqrt(phi**2 + eps**2)
    p = a / a.sum(axis=1, keepdims=True)
    return float(np.mean(-(p * np.log(p)).sum(axis=1)))


def smoothed_stability(phi: np.ndarray, eps: float = SMOOTHING_EPS) -> float:
    n, m = phi.shape
    i, j = np.triu_indices(n, k=1)
    return float(4.0 / (n * (n - 1) * m) * np.sqrt((phi[i] - phi[j]) ** 2 + eps**2).sum())


class RegularizedObjective:
    """``L_total(w, b)`` for a linear model on a fixed dataset, with gradient.

    Parameters are packed as ``theta = [w_0, ..., w_{M-1}, b]``.
    """

    def __init__(self, d: Dataset, cfg: RegConfig, eps: float = SMOOTHING_EPS):
        self.d, self.cfg, self.eps = d, cfg, eps
        self.X = np.ascontiguousarray(d.features)
        self.y = d.target
        self.mu = self.X.mean(axis=0)
        self.C = self.X - self.mu
        n, m = self.X.shape
        self.n, self.m = n, m
        # the pairwise term is O(n^2 M) in memory; large sets use a fixed row subsample
        rows = np.arange(n)
        if n > MAX_STABILITY_ROWS:
            rows = np.sort(np.random.default_rng(cfg.seed).choice(n, MAX_STABILITY_ROWS, replace=False))
        self.n_pairs_rows = rows.size
        i, j = np.triu_indices(rows.size, k=1)
        self.D2 = (self.C[rows[i]] - self.C[rows[j]]) ** 2

    def _task(self, w, b):
        raw = self.X @ w + b
        if self.d.task is Task.BINARY:
            loss = float(np.mean(np.logaddexp(0.0, raw) - self.y * raw))
            r = sigmoid(raw) - self.y
            return loss, self.X.T @ r / self.n, float(np.mean(r))
        r = raw - self.y
        loss = float(np.mean(r**2))
        return loss, 2.0 * (self.X.T @ r) / self.n, 2.0 * float(np.mean(r))

    def _entropy(self, w):
        phi = self.C * w
        a = np.sqrt(phi**2 + self.eps**2)
        r = a.sum(axis=1, keepdims=True)
        p = a / r
        logp = np.log(p)
        h = -(p * logp).sum(axis=1, keepdims=True)
        dda = -(logp + h) / r
        grad = (dda * (phi / a) * self.C).sum(axis=0) / self.n
        return float(np.mean(h)), grad

    def _stability(self, w):
        k = self.n_pairs_rows
        coef = 4.0 / (k * (k - 1) * self.m)
        t = np.sqrt(w**2 * self.D2 + self.eps**2)
        value = coef * float(t.sum())
        grad = coef * w * (self.D2 / t).sum(axis=0)
        return value, grad

    def evaluate(self, theta: np.ndarray, with_penalties: bool = True):
        """Return ``(total, gradient, (task, entropy, stability))``."""
        w, b = theta[:-1], float(theta[-1])
        task, gw, gb = self._task(w, b)
        entropy = stability = math.nan
        if with_penalties:
            entropy, ge = self._entropy(w)
            stability, gs = self._stability(w)
            gw = gw + self.cfg.lambda1 * ge + self.cfg.lambda2 * gs
        total = task if self.cfg.inert else task + self.cfg.lambda1 * entropy + self.cfg.lambda2 * stability
        return total, np.append(gw, gb), (task, entropy, stability)

    def value(self, theta: np.ndarray) -> float:
        return self.evaluate(theta)[0]

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.evaluate(theta)[1]


def train_linear_regularized(
    d: Dataset,
    cfg: RegConfig,
    steps: int = 2000,
    lr: float = 0.05,
    eps: float = SMOOTHING_EPS,
    init: np.ndarray | None = None,
) -> tuple[LinearModel, TrainTrace]:
    """Full-batch gradient descent on the smoothed regularized objective.

    ``d`` should be standardized. The trace row for step ``t`` holds the loss
    components at the parameters before update ``t``. With both lambdas zero
    the penalties are not evaluated and the trace carries NaN for them.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    obj = RegularizedObjective(d, cfg, eps)
    theta = np.zeros(d.n_features + 1) if init is None else np.array(init, dtype=np.float64)
    if d.task is Task.BINARY and init is None:
        theta[-1] = objective_for(d.task).base_score(d.target)
    trace = TrainTrace()
    for t in range(steps):
        total, grad, (task, entropy, stability) = obj.evaluate(theta, with_penalties=not cfg.inert)
        if not (math.isfinite(total) and np.all(np.isfinite(grad))):
            raise DivergedLoss(f"objective became non-finite at step {t}")
        trace.rows.append(TraceRow(t, task, entropy, stability, total))
        theta = theta - lr * grad
    model = LinearModel(theta[:-1], theta[-1], obj.mu, d.task, d.feature_names)
    return model, trace
