"""Task metrics and SHAP-based interpretability metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .dataset import Task
from .errors import BadK, ConstantTarget, LengthMismatch, SingleClass, TooFewRows
from .shap_reg import RegConfig, entropy_penalty, stability_penalty
from .treeshap import ShapMatrix

DEFAULT_TOP_K = 3

# Column order of comparison reports.
REPORT_COLUMNS = ("model", "rmse", "r2", "f1", "auc", "shap_entropy", "topk_concentration", "stability", "k_used")


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 1:
        raise LengthMismatch(f"prediction shape {pred.shape} vs target shape {actual.shape}")
    if pred.size < 1:
        raise LengthMismatch("need at least one value")
    return pred, actual


def rmse(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    return math.sqrt(float(np.mean((pred - actual) ** 2)))


def r2(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    if pred.size < 2:
        raise LengthMismatch("r2 needs at least two values")
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantTarget("r2 is undefined for a constant target")
    return 1.0 - float(np.sum((actual - pred) ** 2)) / ss_tot


def f1(pred_labels, actual) -> float:
    pred, actual = _pair(pred_labels, actual)
    tp = float(np.sum((pred == 1) & (actual == 1)))
    fp = float(np.sum((pred == 1) & (actual == 0)))
    fn = float(np.sum((pred == 0) & (actual == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def auc(pred_scores, actual) -> float:
    """Mann-Whitney estimate of ROC AUC; tied scores count one half."""
    scores, actual = _pair(pred_scores, actual)
    pos = actual == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("auc needs both classes present")
    ranks = rankdata(scores)
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


shap_entropy_metric = entropy_penalty


def _abs_means(phi) -> np.ndarray:
    phi = phi.phi if isinstance(phi, ShapMatrix) else np.asarray(phi, dtype=np.float64)
    return np.abs(phi).mean(axis=0)


def topk_concentration(phi, k: int = DEFAULT_TOP_K) -> float:
    """Share of mean |attribution| held by the ``k`` largest features."""
    m = _abs_means(phi)
    if not 1 <= k <= m.size:
        raise BadK(f"k must lie in [1, {m.size}], got {k}")
    total = float(m.sum())
    if total == 0.0:
        return k / m.size
    top = np.sort(m)[::-1][:k]
    return min(1.0, float(top.sum()) / total)


def stability_metric(phi, cfg: RegConfig | None = None) -> float:
    """Bounded, scale-free stability score ``1 / (1 + s / scale)``.

    ``s`` is the stability penalty and ``scale`` the mean row L1 norm, so 1
    means identical attributions on every row.
    """
    arr = phi.phi if isinstance(phi, ShapMatrix) else np.asarray(phi, dtype=np.float64)
    if arr.shape[0] < 2:
        raise TooFewRows("stability needs at least two rows")
    s_raw = stability_penalty(arr, cfg)
    scale = float(np.mean(np.abs(arr).sum(axis=1))) + 1e-12
    return 1.0 / (1.0 + s_raw / scale)


def shap_variance(phi) -> np.ndarray:
    """Per-feature population variance of attributions across rows."""
    arr = phi.phi if isinstance(phi, ShapMatrix) else np.asarray(phi, dtype=np.float64)
    return arr.var(axis=0)


@dataclass(frozen=True)
class MetricsReport:
    model: str
    task: str
    shap_entropy: float
    topk_concentration: float
    stability: float
    k_used: int
    rmse: float | None = None
    r2: float | None = None
    f1: float | None = None
    auc: float | None = None

    def row(self) -> dict:
        d = asdict(self)
        return {c: d[c] for c in REPORT_COLUMNS}


def evaluate(model_name: str, task: Task, pred: np.ndarray, actual: np.ndarray, shap: ShapMatrix,
             k: int = DEFAULT_TOP_K, cfg: RegConfig | None = None) -> MetricsReport:
    """Metrics for one model on one evaluation split.

    ``pred`` is a regression value or a positive-class probability. The
    stability column uses ``cfg``'s pair cap (default RegConfig) so large
    evaluation sets are pair-sampled.
    """
    k = min(k, shap.phi.shape[1])
    cfg = cfg or RegConfig()
    common = dict(
        model=model_name,
        task=task.value,
        shap_entropy=shap_entropy_metric(shap),
        topk_concentration=topk_concentration(shap, k),
        stability=stability_metric(shap, cfg),
        k_used=k,
    )
    if task is Task.REGRESSION:
        return MetricsReport(rmse=rmse(pred, actual), r2=r2(pred, actual), **common)
    labels = (np.asarray(pred) >= 0.5).astype(np.float64)
    return MetricsReport(f1=f1(labels, actual), auc=auc(pred, actual), **common)
