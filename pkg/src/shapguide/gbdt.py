"""Histogram gradient-boosted trees with a per-round regularization hook.

Split search is the usual second-order one, with one twist: each feature's
candidate gain is multiplied by a positive weight before the argmax. With all
weights equal to one this is a plain histogram GBDT.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol

import numpy as np

from .dataset import Dataset, Task
from .trees import Ensemble, Tree, sigmoid

# Splits whose unweighted gain does not exceed this are ignored.
MIN_SPLIT_GAIN = 1e-12
HESSIAN_FLOOR = 1e-6
PROBABILITY_CLIP = 1e-6


@dataclass(frozen=True)
class BoostConfig:
    num_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 6
    min_leaf_count: int = 20
    num_bins: int = 64
    l2_leaf: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_rounds < 1:
            raise ValueError("num_rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf_count < 1:
            raise ValueError("min_leaf_count must be >= 1")
        if not 2 <= self.num_bins <= 256:
            raise ValueError("num_bins must lie in [2, 256]")
        if self.l2_leaf < 0:
            raise ValueError("l2_leaf must be >= 0")


# ------------------------------------------------------------------ binning

def _between(a: float, b: float) -> float:
    """A threshold t with a <= t < b."""
    mid = a + (b - a) / 2.0
    return mid if a <= mid < b else a


def feature_thresholds(column: np.ndarray, num_bins: int) -> np.ndarray:
    """Equal-frequency candidate thresholds for one feature.

    Every threshold sits strictly between two consecutive distinct training
    values, so binned routing and raw ``x <= threshold`` routing agree on the
    training data.
    """
    uniq = np.unique(column)
    if uniq.size <= 1:
        return np.empty(0)
    if uniq.size <= num_bins:
        return np.array([_between(a, b) for a, b in zip(uniq[:-1], uniq[1:])])
    s = np.sort(column)
    n = s.size
    cuts = []
    for q in range(1, num_bins):
        v = s[max(0, (q * n) // num_bins - 1)]
        k = np.searchsorted(uniq, v, side="right")
        if k < uniq.size:
            cuts.append(_between(v, uniq[k]))
    return np.unique(np.array(cuts))


@dataclass(frozen=True, eq=False)
class BinnedMatrix:
    """Bin codes for a training matrix. ``codes[i, j] <= b`` iff ``X[i, j] <= thresholds[j][b]``."""

    thresholds: tuple[np.ndarray, ...]
    codes: np.ndarray
    width: int

    @classmethod
    def fit(cls, X: np.ndarray, num_bins: int) -> "BinnedMatrix":
        thresholds = tuple(feature_thresholds(X[:, j], num_bins) for j in range(X.shape[1]))
        codes = np.empty(X.shape, dtype=np.intp)
        for j, t in enumerate(thresholds):
            codes[:, j] = np.searchsorted(t, X[:, j], side="left")
        return cls(thresholds, codes, num_bins)

    @property
    def n_thresholds(self) -> np.ndarray:
        return np.array([t.size for t in self.thresholds])


# ------------------------------------------------------------------ tree fit

def _best_split(codes, g, h, binned, cfg, weights, feature_mask):
    """Return (feature, bin) maximizing weighted gain, or None."""
    n, m = codes.shape
    width = binned.width
    flat = (codes + np.arange(m) * width).ravel()
    size = m * width
    gh = np.bincount(flat, weights=np.repeat(g, m), minlength=size).reshape(m, width)
    hh = np.bincount(flat, weights=np.repeat(h, m), minlength=size).reshape(m, width)
    ch = np.bincount(flat, minlength=size).reshape(m, width)
    GL, HL, CL = np.cumsum(gh, axis=1), np.cumsum(hh, axis=1), np.cumsum(ch, axis=1)
    G, H, C = GL[:, -1:], HL[:, -1:], CL[:, -1:]
    GR, HR, CR = G - GL, H - HL, C - CL
    lam = cfg.l2_leaf
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)
    valid = (
        (np.arange(width)[None, :] < binned.n_thresholds[:, None])
        & (CL >= cfg.min_leaf_count)
        & (CR >= cfg.min_leaf_count)
        & (HL + lam > 0)
        & (HR + lam > 0)
        & (gain > MIN_SPLIT_GAIN)
    )
    if feature_mask is not None:
        valid &= feature_mask[:, None]
    if not valid.any():
        return None
    scored = np.where(valid, gain * weights[:, None], -np.inf)
    # argmax returns the first maximum: lowest feature, then lowest threshold
    best = int(np.argmax(scored))
    return divmod(best, width)


def fit_tree(
    grad: np.ndarray,
    hess: np.ndarray,
    d: Dataset,
    cfg: BoostConfig,
    weights: np.ndarray | None = None,
    *,
    binned: BinnedMatrix | None = None,
    rows: np.ndarray | None = None,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow one tree depth-first on gradient statistics.

    Parameters
    ----------
    grad, hess : arrays of length N
        Per-row first and second derivatives of the loss.
    weights : array of length M, optional
        Per-feature gain multipliers; ``None`` means all ones.
    binned : BinnedMatrix, optional
        Precomputed bins for ``d`` (computed from ``d`` when omitted).
    rows : integer array, optional
        Training rows to use, repeats allowed (bootstrap samples).
    max_features, rng
        Random feature subset of this size per node, for forests.

    Leaf value is ``-sum(grad) / (sum(hess) + l2_leaf)``.
    """
    n, m = d.n_rows, d.n_features
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    if grad.shape != (n,) or hess.shape != (n,):
        raise ValueError("grad and hess must have one entry per row")
    if not np.all(hess > 0):
        raise ValueError("hessians must be positive")
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (m,) or not np.all(w > 0):
        raise ValueError("weights must be a positive vector of length M")
    if binned is None:
        binned = BinnedMatrix.fit(d.features, cfg.num_bins)
    if rows is None:
        rows = np.arange(n)
    if max_features is not None and max_features < m and rng is None:
        raise ValueError("feature subsampling needs an rng")

    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def grow(node_rows: np.ndarray, depth: int) -> int:
        nid = len(feature)
        g, h = grad[node_rows], hess[node_rows]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-float(np.sum(g)) / (float(np.sum(h)) + cfg.l2_leaf))
        cover.append(node_rows.size)
        if depth >= cfg.max_depth or node_rows.size < 2 * cfg.min_leaf_count:
            return nid
        mask = None
        if max_features is not None and max_features < m:
            mask = np.zeros(m, dtype=bool)
            mask[rng.choice(m, max_features, replace=False)] = True
        codes = binned.codes[node_rows]
        split = _best_split(codes, g, h, binned, cfg, w, mask)
        if split is None:
            return nid
        j, b = split
        go_left = codes[:, j] <= b
        feature[nid] = j
        threshold[nid] = float(binned.thresholds[j][b])
        left[nid] = grow(node_rows[go_left], depth + 1)
        right[nid] = grow(node_rows[~go_left], depth + 1)
        return nid

    grow(np.asarray(rows, dtype=np.intp), 0)
    return Tree(feature, threshold, left, right, value, cover)


# ------------------------------------------------------------------ boosting

class Objective:
    name = "squared_error"

    def base_score(self, y: np.ndarray) -> float:
        return float(np.mean(y))

    def grad_hess(self, raw: np.ndarray, y: np.ndarray):
        return raw - y, np.ones_like(y)

    def loss(self, raw: np.ndarray, y: np.ndarray) -> float:
        """Mean squared error."""
        return float(np.mean((raw - y) ** 2))


class LogisticObjective(Objective):
    name = "logistic"

    def base_score(self, y):
        p = min(max(float(np.mean(y)), PROBABILITY_CLIP), 1.0 - PROBABILITY_CLIP)
        return math.log(p / (1.0 - p))

    def grad_hess(self, raw, y):
        p = sigmoid(raw)
        return p - y, np.maximum(p * (1.0 - p), HESSIAN_FLOOR)

    def loss(self, raw, y):
        """Mean binary cross-entropy on raw log-odds."""
        return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def objective_for(task: Task) -> Objective:
    return LogisticObjective() if task is Task.BINARY else Objective()


class TraceRow(NamedTuple):
    round: int
    task_loss: float
    entropy: float
    stability: float
    total: float


TRACE_COLUMNS = TraceRow._fields


@dataclass
class TrainTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.rows:
            writer.writerow([r.round, *(repr(float(v)) for v in r[1:])])
        return out.getvalue()


class RegularizationHook(Protocol):
    """Called after every boosting round.

    Returns ``(entropy, stability, total, weights_for_next_round)``.
    """

    def __call__(self, round_index: int, tree: Tree, task_loss: float, weights: np.ndarray): ...


def boost(
    d_train: Dataset,
    cfg: BoostConfig,
    reg=None,
    hook: RegularizationHook | None = None,
    callback: Callable[[int, Ensemble], None] | None = None,
) -> tuple[Ensemble, TrainTrace]:
    """Train a boosted ensemble.

    With ``reg`` (a :class:`shapguide.shap_reg.RegConfig`) and no explicit
    ``hook``, a :class:`shapguide.shap_reg.ShapRegularizer` is attached: it
    evaluates the SHAP penalties after each round and re-weights feature
    gains for the next one. Without either, this is plain GBDT and the trace
    carries NaN penalties.
    """
    if hook is None and reg is not None:
        from .shap_reg import ShapRegularizer

        hook = ShapRegularizer(d_train, reg, cfg.learning_rate)
    obj = objective_for(d_train.task)
    X, y = d_train.features, d_train.target
    binned = BinnedMatrix.fit(X, cfg.num_bins)
    base = obj.base_score(y)
    raw = np.full(d_train.n_rows, base)
    weights = np.ones(d_train.n_features)
    trees: list[Tree] = []
    trace = TrainTrace()
    for t in range(cfg.num_rounds):
        g, h = obj.grad_hess(raw, y)
        tree = fit_tree(g, h, d_train, cfg, weights, binned=binned)
        trees.append(tree)
        raw = raw + cfg.learning_rate * tree.predict(X)
        task_loss = obj.loss(raw, y)
        if hook is None:
            trace.rows.append(TraceRow(t, task_loss, math.nan, math.nan, task_loss))
        else:
            entropy, stability, total, weights = hook(t, tree, task_loss, weights)
            trace.rows.append(TraceRow(t, task_loss, entropy, stability, total))
        if callback is not None:
            callback(t, _ensemble(base, trees, cfg, d_train, obj))
    return _ensemble(base, trees, cfg, d_train, obj), trace


def _ensemble(base, trees, cfg, d, obj) -> Ensemble:
    return Ensemble(base, tuple(trees), cfg.learning_rate, d.task, d.feature_names, obj.name)


# ------------------------------------------------------------------ baselines

def _raw_target_stats(d: Dataset):
    # leaf value -sum(g)/sum(h) with g = -y, h = 1 is the mean target
    return -d.target, np.ones(d.n_rows)


def _tree_config(cfg: BoostConfig) -> BoostConfig:
    return BoostConfig(1, 1.0, cfg.max_depth, cfg.min_leaf_count, cfg.num_bins, 0.0, cfg.seed)


def fit_single_tree(d: Dataset, cfg: BoostConfig) -> Ensemble:
    """One unweighted tree on the raw target; leaves hold mean targets."""
    g, h = _raw_target_stats(d)
    tree = fit_tree(g, h, d, _tree_config(cfg))
    objective = "mean_probability" if d.task is Task.BINARY else "squared_error"
    return Ensemble(0.0, (tree,), 1.0, d.task, d.feature_names, objective)


def fit_random_forest(
    d: Dataset,
    cfg: BoostConfig,
    n_trees: int = 100,
    bootstrap: bool = True,
    max_features: int | str | None = "sqrt",
) -> Ensemble:
    """Bagged trees averaged with equal weight.

    ``max_features="sqrt"`` draws ``floor(sqrt(M))`` candidate features per
    node; ``None`` uses all features.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    m = d.n_features
    if max_features == "sqrt":
        k = max(1, int(math.isqrt(m)))
    elif max_features is None:
        k = m
    else:
        k = int(max_features)
        if not 1 <= k <= m:
            raise ValueError("max_features must lie in [1, M]")
    tcfg = _tree_config(cfg)
    g, h = _raw_target_stats(d)
    binned = BinnedMatrix.fit(d.features, cfg.num_bins)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_trees)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, d.n_rows, d.n_rows) if bootstrap else None
        trees.append(fit_tree(g, h, d, tcfg, binned=binned, rows=rows, max_features=k, rng=rng))
    objective = "mean_probability" if d.task is Task.BINARY else "squared_error"
    return Ensemble(0.0, tuple(trees), 1.0 / n_trees, d.task, d.feature_names, objective)
