"""Binary decision trees, additive ensembles, and the JSON model document.

A tree is stored as flat parallel arrays indexed by node id (preorder).
Leaves carry ``feature == -1`` and ``left == right == -1``. Routing is
``x[feature] <= threshold`` -> left.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from .dataset import Task
from .errors import MalformedDocument, SchemaMismatch

FORMAT_NAME = "shapguide.ensemble"
FORMAT_VERSION = 1

# How raw scores map to predictions.
OBJECTIVES = ("squared_error", "logistic", "mean_probability")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __post_init__(self):
        for name, dtype in (
            ("feature", np.int64),
            ("threshold", np.float64),
            ("left", np.int64),
            ("right", np.int64),
            ("value", np.float64),
            ("cover", np.float64),
        ):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls([-1], [0.0], [-1], [-1], [value], [cover])

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    @cached_property
    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for n in range(self.n_nodes):
            if not self.is_leaf(n):
                depth[self.left[n]] = depth[self.right[n]] = depth[n] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth):
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                break
            r, n = rows[active], node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @cached_property
    def leaf_paths(self) -> list[tuple[int, list[tuple[int, float, bool, float]]]]:
        """For every leaf: ``(leaf_id, [(feature, threshold, goes_left, cover_fraction), ...])``."""
        out = []
        stack: list[tuple[int, list]] = [(0, [])]
        while stack:
            n, path = stack.pop()
            if self.is_leaf(n):
                out.append((n, path))
                continue
            parent = self.cover[n]
            for child, goes_left in ((self.right[n], False), (self.left[n], True)):
                frac = self.cover[child] / parent if parent > 0 else np.nan
                stack.append((child, path + [(int(self.feature[n]), float(self.threshold[n]), goes_left, frac)]))
        out.sort(key=lambda item: item[0])
        return out

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``raw(x) = base_score + learning_rate * sum_t tree_t(x)``."""

    base_score: float
    trees: tuple[Tree, ...]
    learning_rate: float
    task: Task
    feature_names: tuple[str, ...]
    objective: str = "squared_error"

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "task", Task.parse(self.task))
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaMismatch(f"model expects {self.n_features} features, got shape {X.shape}")
        return X

    def tree_sum(self, X) -> np.ndarray:
        X = self._check(X)
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X)
        return acc

    def predict_raw(self, X) -> np.ndarray:
        return self.base_score + self.learning_rate * self.tree_sum(X)

    def predict(self, X) -> np.ndarray:
        """Regression value, or positive-class probability for classification."""
        raw = self.predict_raw(X)
        if self.objective == "logistic":
            return sigmoid(raw)
        if self.objective == "mean_probability":
            return np.clip(raw, 0.0, 1.0)
        return raw

    def predict_one(self, x: Sequence[float]) -> float:
        return float(self.predict(np.asarray(x, dtype=np.float64)[None, :])[0])


# ---------------------------------------------------------------- documents

def ensemble_to_dict(e: Ensemble) -> dict[str, Any]:
    trees = []
    for tree in e.trees:
        nodes = []
        for n in range(tree.n_nodes):
            leaf = tree.is_leaf(n)
            nodes.append(
                {
                    "id": n,
                    "feature": None if leaf else int(tree.feature[n]),
                    "threshold": None if leaf else float(tree.threshold[n]),
                    "left": None if leaf else int(tree.left[n]),
                    "right": None if leaf else int(tree.right[n]),
                    "value": float(tree.value[n]),
                    "cover": _cover_out(tree.cover[n]),
                }
            )
        trees.append({"nodes": nodes})
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "task": e.task.value,
        "objective": e.objective,
        "base_score": float(e.base_score),
        "learning_rate": float(e.learning_rate),
        "feature_names": list(e.feature_names),
        "trees": trees,
    }


def _cover_out(c: float):
    c = float(c)
    return int(c) if c.is_integer() else c


def serialize(e: Ensemble) -> str:
    return json.dumps(ensemble_to_dict(e), indent=1, allow_nan=False) + "\n"


def _require(cond: bool, path: str, msg: str):
    if not cond:
        raise MalformedDocument(f"{path}: {msg}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _tree_from_nodes(nodes, path: str, n_features: int) -> Tree:
    _require(isinstance(nodes, list) and len(nodes) > 0, path, "expected a non-empty node list")
    k = len(nodes)
    feature = np.full(k, -1, dtype=np.int64)
    threshold = np.zeros(k)
    left = np.full(k, -1, dtype=np.int64)
    right = np.full(k, -1, dtype=np.int64)
    value = np.zeros(k)
    cover = np.zeros(k)
    for i, rec in enumerate(nodes):
        p = f"{path}[{i}]"
        _require(isinstance(rec, dict), p, "node record must be an object")
        missing = {"feature", "threshold", "left", "right", "value", "cover"} - rec.keys()
        _require(not missing, p, f"missing fields {sorted(missing)}")
        _require(rec.get("id", i) == i, p, "node ids must equal their list position")
        _require(_is_number(rec["value"]), p + ".value", "must be a finite number")
        _require(_is_number(rec["cover"]) and rec["cover"] >= 0, p + ".cover", "must be a non-negative number")
        value[i], cover[i] = rec["value"], rec["cover"]
        kids = (rec["left"], rec["right"])
        if rec["feature"] is None:
            _require(kids == (None, None), p, "leaf must have null children")
            continue
        f = rec["feature"]
        _require(isinstance(f, int) and not isinstance(f, bool) and 0 <= f < n_features,
                 p + ".feature", f"must be an integer in [0, {n_features})")
        _require(_is_number(rec["threshold"]), p + ".threshold", "must be a finite number")
        for name, c in zip(("left", "right"), kids):
            _require(isinstance(c, int) and not isinstance(c, bool) and i < c < k,
                     f"{p}.{name}", f"must reference a later node id < {k}")
        feature[i], threshold[i] = f, rec["threshold"]
        left[i], right[i] = kids
    seen = np.zeros(k, dtype=np.int64)
    for i in range(k):
        if feature[i] >= 0:
            seen[left[i]] += 1
            seen[right[i]] += 1
    _require(seen[0] == 0 and np.all(seen[1:] == 1), path, "nodes do not form a single tree rooted at id 0")
    for i in range(k):
        if feature[i] >= 0:
            _require(cover[i] == cover[left[i]] + cover[right[i]], f"{path}[{i}].cover",
                     "must equal the sum of the children's covers")
    return Tree(feature, threshold, left, right, value, cover)


def ensemble_from_dict(doc: Any) -> Ensemble:
    _require(isinstance(doc, dict), "$", "document must be a JSON object")
    _require(doc.get("format") == FORMAT_NAME, "$.format", f"expected {FORMAT_NAME!r}")
    _require(doc.get("version") == FORMAT_VERSION, "$.version", f"expected {FORMAT_VERSION}")
    for key in ("task", "objective", "base_score", "learning_rate", "feature_names", "trees"):
        _require(key in doc, f"$.{key}", "missing")
    _require(_is_number(doc["base_score"]), "$.base_score", "must be a finite number")
    _require(_is_number(doc["learning_rate"]) and 0 < doc["learning_rate"] <= 1,
             "$.learning_rate", "must lie in (0, 1]")
    names = doc["feature_names"]
    _require(isinstance(names, list) and names and all(isinstance(n, str) for n in names),
             "$.feature_names", "must be a non-empty list of strings")
    _require(len(set(names)) == len(names), "$.feature_names", "must be unique")
    _require(doc["objective"] in OBJECTIVES, "$.objective", f"must be one of {OBJECTIVES}")
    try:
        task = Task.parse(doc["task"])
    except ValueError:
        raise MalformedDocument("$.task: unknown task kind") from None
    _require(isinstance(doc["trees"], list), "$.trees", "must be a list")
    trees = []
    for t, rec in enumerate(doc["trees"]):
        _require(isinstance(rec, dict) and "nodes" in rec, f"$.trees[{t}]", "expected an object with 'nodes'")
        trees.append(_tree_from_nodes(rec["nodes"], f"$.trees[{t}].nodes", len(names)))
    return Ensemble(float(doc["base_score"]), tuple(trees), float(doc["learning_rate"]), task,
                    tuple(names), doc["objective"])


def deserialize(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"$: not valid JSON ({exc.msg} at char {exc.pos})") from None
    return ensemble_from_dict(doc)
