"""Exact path-dependent SHAP values for tree ensembles.

The expectation of a tree with only the features in ``S`` known is a sum
over leaves. For one leaf, every distinct feature ``u`` on its root path
contributes a factor: the product of its routing indicators ("one fraction")
when ``u`` is in ``S``, or the product of its cover ratios ("zero fraction")
otherwise. Each leaf therefore defines a product game over at most
``depth`` players, and its Shapley values have a closed form in the
elementary symmetric polynomials of the other players' factors. This is
evaluated for all rows at once, so the cost per tree is
``O(leaves * depth^3)`` vector operations.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset, format_float
from .errors import SchemaMismatch, TooManyFeatures, ZeroCover
from .trees import Ensemble, Tree

MAX_BRUTE_FORCE_FEATURES = 15


@dataclass(frozen=True, eq=False)
class ShapMatrix:
    """Per-row, per-feature attributions plus the shared base value."""

    phi: np.ndarray
    base_value: float
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        if phi.ndim != 2:
            raise ValueError("phi must be a 2-d matrix")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(phi.shape[1]))
        if len(names) != phi.shape[1]:
            raise ValueError("one feature name per column required")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "base_value", float(self.base_value))

    @property
    def shape(self):
        return self.phi.shape

    def reconstruct(self) -> np.ndarray:
        """``base_value + sum_j phi_ij`` per row."""
        return self.base_value + self.phi.sum(axis=1)

    def to_csv(self) -> str:
        lines = [f"# base_value={format_float(self.base_value)}", ",".join(self.feature_names)]
        lines += [",".join(format_float(v) for v in row) for row in self.phi]
        return "\n".join(lines) + "\n"


def _shapley_weights(d: int) -> np.ndarray:
    """``k! (d-k-1)! / d!`` for k = 0..d-1."""
    return np.array([math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d) for k in range(d)])


def _check_covers(tree: Tree):
    reachable_internal = tree.left >= 0
    if np.any(tree.cover[reachable_internal] <= 0):
        raise ZeroCover("an internal node has zero cover; path-dependent expectations are undefined")


def tree_expectation(tree: Tree) -> float:
    """Cover-weighted mean output of ``tree``."""
    _check_covers(tree)
    total = 0.0
    for leaf, path in tree.leaf_paths:
        total += tree.value[leaf] * math.prod(frac for *_, frac in path)
    return total


def tree_contributions(tree: Tree, X: np.ndarray) -> tuple[np.ndarray, float]:
    """Unscaled SHAP values of a single tree for every row of ``X``.

    Returns ``(phi, expected_value)`` with ``expected_value + phi.sum(1)``
    equal to ``tree.predict(X)``.
    """
    _check_covers(tree)
    n, m = X.shape
    phi = np.zeros((n, m))
    expected = 0.0
    for leaf, path in tree.leaf_paths:
        v = float(tree.value[leaf])
        features: list[int] = []
        zero: dict[int, float] = {}
        one: dict[int, np.ndarray] = {}
        for f, thr, goes_left, frac in path:
            ind = X[:, f] <= thr if goes_left else X[:, f] > thr
            if f in zero:
                zero[f] *= frac
                one[f] = one[f] & ind
            else:
                features.append(f)
                zero[f] = frac
                one[f] = ind
        expected += v * math.prod(zero.values())
        d = len(features)
        if d == 0 or v == 0.0:
            continue
        w = _shapley_weights(d)
        o = {f: one[f].astype(np.float64) for f in features}
        for u in features:
            # coefficients of prod_{s != u} (zero_s + one_s * t)
            coef = [np.ones(n)]
            for s in features:
                if s == u:
                    continue
                nxt = [coef[0] * zero[s]]
                for k in range(1, len(coef)):
                    nxt.append(coef[k] * zero[s] + coef[k - 1] * o[s])
                nxt.append(coef[-1] * o[s])
                coef = nxt
            acc = w[0] * coef[0]
            for k in range(1, d):
                acc = acc + w[k] * coef[k]
            phi[:, u] += v * (o[u] - zero[u]) * acc
    return phi, expected


def _features_of(e: Ensemble, data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.matrix_for(e.feature_names)
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != e.n_features:
        raise SchemaMismatch(f"model expects {e.n_features} features, got shape {X.shape}")
    return X


def tree_shap(e: Ensemble, data) -> ShapMatrix:
    """SHAP matrix of ``e`` (raw score space) for a Dataset or a feature matrix."""
    X = _features_of(e, data)
    acc = np.zeros(X.shape)
    expected = 0.0
    for tree in e.trees:
        phi_t, exp_t = tree_contributions(tree, X)
        acc += phi_t
        expected += exp_t
    return ShapMatrix(e.learning_rate * acc, e.base_score + e.learning_rate * expected, e.feature_names)


# ------------------------------------------------------------------ oracle

def conditional_expectation(tree: Tree, x: np.ndarray, known: frozenset[int] | set[int]) -> float:
    """Tree output with features outside ``known`` marginalized by cover-weighted descent."""

    def walk(node: int) -> float:
        if tree.is_leaf(node):
            return float(tree.value[node])
        f = int(tree.feature[node])
        l, r = int(tree.left[node]), int(tree.right[node])
        if f in known:
            return walk(l if x[f] <= tree.threshold[node] else r)
        c = tree.cover[node]
        if c <= 0:
            raise ZeroCover("zero cover on a marginalized node")
        return (tree.cover[l] * walk(l) + tree.cover[r] * walk(r)) / c

    return walk(0)


def exact_shapley(value: Callable[[frozenset[int]], float], m: int) -> np.ndarray:
    """Shapley values of an ``m``-player game by full subset enumeration."""
    if m > MAX_BRUTE_FORCE_FEATURES:
        raise TooManyFeatures(f"enumeration limited to {MAX_BRUTE_FORCE_FEATURES} features, got {m}")
    cache = {}
    for r in range(m + 1):
        for S in itertools.combinations(range(m), r):
            cache[frozenset(S)] = value(frozenset(S))
    w = [math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m) for k in range(m)]
    phi = np.zeros(m)
    for j in range(m):
        for S, v_s in cache.items():
            if j not in S:
                phi[j] += w[len(S)] * (cache[S | {j}] - v_s)
    return phi


def brute_force_shapley(e: Ensemble, x: Sequence[float]) -> np.ndarray:
    """Path-dependent Shapley values of one row via 2^M subset enumeration."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (e.n_features,):
        raise SchemaMismatch(f"expected a row of {e.n_features} features")
    if e.n_features > MAX_BRUTE_FORCE_FEATURES:
        raise TooManyFeatures(f"enumeration limited to {MAX_BRUTE_FORCE_FEATURES} features")

    def value(S):
        return e.base_score + e.learning_rate * sum(conditional_expectation(t, x, S) for t in e.trees)

    return exact_shapley(value, e.n_features)
