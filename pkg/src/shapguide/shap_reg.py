"""SHAP entropy and stability penalties, the combined objective, and the
gain-weight update that feeds them back into tree growth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import DimensionMismatch, TooFewRows
from .treeshap import ShapMatrix, tree_contributions
from .trees import Tree


@dataclass(frozen=True)
class RegConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    batch_size: int = 256
    pair_cap: int = 4096
    eta: float = 0.5
    w_min: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.pair_cap < 1:
            raise ValueError("pair_cap must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not 0 < self.w_min <= 1:
            raise ValueError("w_min must lie in (0, 1]")

    @property
    def inert(self) -> bool:
        return self.lambda1 == 0 and self.lambda2 == 0


@dataclass(frozen=True)
class PenaltyReport:
    entropy: float
    stability: float
    total: float
    per_feature_mass: np.ndarray
    per_feature_instability: np.ndarray


def _phi(phi) -> np.ndarray:
    return phi.phi if isinstance(phi, ShapMatrix) else np.asarray(phi, dtype=np.float64)


def normalize_abs(phi) -> np.ndarray:
    """Row-normalized absolute attributions; all-zero rows become uniform."""
    a = np.abs(_phi(phi))
    s = a.sum(axis=1, keepdims=True)
    m = a.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(s > 0, a / s, 1.0 / m)
    return p


def _row_entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=1)


def entropy_penalty(phi) -> float:
    """Mean Shannon entropy (nats) of each row's normalized |attribution|."""
    p = normalize_abs(phi)
    if p.shape[0] < 1:
        raise TooFewRows("entropy needs at least one row")
    return float(np.mean(_row_entropy(p)))


def _pairs(n: int, cfg: RegConfig | None, rng: np.random.Generator | None):
    """Unordered row pairs: all of them, or ``pair_cap`` sampled uniformly with replacement."""
    cap = cfg.pair_cap if cfg is not None else None
    if cap is None or n * (n - 1) // 2 <= cap:
        i, j = np.triu_indices(n, k=1)
        return i, j, True
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    i = rng.integers(0, n, cap)
    j = rng.integers(0, n - 1, cap)
    j = j + (j >= i)
    return i, j, False


def per_feature_instability(phi, cfg: RegConfig | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-feature terms ``s_j`` whose mean over features is the stability penalty.

    ``s_j = 2/(N(N-1)) * sum_{i != i'} |phi_ij - phi_i'j|`` (ordered pairs),
    i.e. twice the mean absolute difference over unordered pairs. Beyond
    ``cfg.pair_cap`` unordered pairs the mean is estimated from a uniform
    sample of pairs.
    """
    phi = _phi(phi)
    n = phi.shape[0]
    if n < 2:
        raise TooFewRows("stability needs at least two rows")
    i, j, _ = _pairs(n, cfg, rng)
    diff = np.abs(phi[i] - phi[j])
    return 2.0 * diff.mean(axis=0)


def stability_penalty(phi, cfg: RegConfig | None = None, rng: np.random.Generator | None = None) -> float:
    """``2/(N(N-1)M) * sum_i sum_{i' != i} sum_j |phi_ij - phi_i'j|``.

    Exact when all unordered pairs fit in ``cfg.pair_cap`` (or ``cfg`` is
    None); otherwise an unbiased pair-sampled estimate.
    """
    return float(np.mean(per_feature_instability(phi, cfg, rng)))


def total_loss(task_loss: float, entropy: float, stability: float, cfg: RegConfig) -> float:
    if cfg.inert:
        return float(task_loss)
    return float(task_loss + cfg.lambda1 * entropy + cfg.lambda2 * stability)


def penalty_report(phi, cfg: RegConfig, task_loss: float = 0.0,
                   rng: np.random.Generator | None = None) -> PenaltyReport:
    p = normalize_abs(phi)
    entropy = float(np.mean(_row_entropy(p)))
    s = per_feature_instability(phi, cfg, rng)
    stability = float(np.mean(s))
    return PenaltyReport(entropy, stability, total_loss(task_loss, entropy, stability, cfg), p.mean(axis=0), s)


def update_gain_weights(prev: np.ndarray, report: PenaltyReport, cfg: RegConfig) -> np.ndarray:
    """Multiplicative step toward features with above-uniform attribution mass
    and away from features with unstable attributions, clamped to [w_min, 1]."""
    prev = np.asarray(prev, dtype=np.float64)
    m = prev.shape[0]
    if report.per_feature_mass.shape != (m,) or report.per_feature_instability.shape != (m,):
        raise DimensionMismatch(f"report has {report.per_feature_mass.shape[0]} features, weights have {m}")
    if cfg.inert:
        return prev.copy()
    s = report.per_feature_instability
    s_hat = s / (s.max() + 1e-12)
    step = cfg.eta * (cfg.lambda1 * (report.per_feature_mass - 1.0 / m) - cfg.lambda2 * s_hat)
    return np.clip(prev * np.exp(step), cfg.w_min, 1.0)


class ShapRegularizer:
    """Boosting hook: tracks ensemble SHAP values on the training rows
    incrementally (one tree per round), evaluates the penalties on a fresh
    random batch, and returns next-round gain weights."""

    def __init__(self, d_train: Dataset, cfg: RegConfig, learning_rate: float):
        if d_train.n_rows < 2:
            raise TooFewRows("regularization batch needs at least two rows")
        self.cfg = cfg
        self.X = d_train.features
        self.learning_rate = learning_rate
        self.batch_size = min(cfg.batch_size, d_train.n_rows)
        self.rng = np.random.default_rng(cfg.seed)
        self._acc = np.zeros(self.X.shape)
        self.last_report: PenaltyReport | None = None
        self.weight_history: list[np.ndarray] = []

    @property
    def phi(self) -> np.ndarray:
        """Current ensemble SHAP values (tree part) on all training rows."""
        return self.learning_rate * self._acc

    def __call__(self, round_index: int, tree: Tree, task_loss: float, weights: np.ndarray):
        phi_t, _ = tree_contributions(tree, self.X)
        self._acc += phi_t
        n = self.X.shape[0]
        batch = np.sort(self.rng.choice(n, self.batch_size, replace=False))
        report = penalty_report(self.phi[batch], self.cfg, task_loss, self.rng)
        new_weights = update_gain_weights(weights, report, self.cfg)
        self.last_report = report
        self.weight_history.append(new_weights)
        return report.entropy, report.stability, report.total, new_weights
