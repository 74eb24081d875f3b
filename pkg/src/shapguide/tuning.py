"""Grid-search cross-validation over the two penalty weights."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import Dataset, kfold_indices
from .errors import DegenerateFolds
from .gbdt import BoostConfig, boost, objective_for
from .shap_reg import RegConfig, entropy_penalty, stability_penalty, total_loss
from .treeshap import tree_shap

OBJECTIVES = ("task_loss", "total_loss")
DEFAULT_LAMBDAS = (0.0, 0.01, 0.1, 0.5, 1.0)


@dataclass(frozen=True)
class GridSpec:
    lambda1_values: tuple[float, ...] = DEFAULT_LAMBDAS
    lambda2_values: tuple[float, ...] = DEFAULT_LAMBDAS
    folds: int = 5
    objective: str = "task_loss"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lambda1_values", tuple(float(v) for v in self.lambda1_values))
        object.__setattr__(self, "lambda2_values", tuple(float(v) for v in self.lambda2_values))
        if not self.lambda1_values or not self.lambda2_values:
            raise ValueError("lambda grids must be non-empty")
        if any(v < 0 for v in self.lambda1_values + self.lambda2_values):
            raise ValueError("lambda values must be >= 0")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")

    def points(self) -> list[tuple[float, float]]:
        return [(a, b) for a in self.lambda1_values for b in self.lambda2_values]


class CVRow(NamedTuple):
    lambda1: float
    lambda2: float
    fold: int
    task_loss: float
    entropy: float
    stability: float
    total: float


@dataclass
class GridResult:
    best: RegConfig
    rows: list[CVRow]
    mean_objective: dict[tuple[float, float], float]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CVRow._fields)
        for r in self.rows:
            writer.writerow([repr(r.lambda1), repr(r.lambda2), r.fold, *(repr(float(v)) for v in r[3:])])
        return out.getvalue()


def _evaluate_cell(d, folds, boost_cfg, reg, fold):
    val = folds[fold]
    train = np.sort(np.concatenate([f for k, f in enumerate(folds) if k != fold]))
    d_tr, d_va = d.subset(train), d.subset(val)
    model, _ = boost(d_tr, boost_cfg, reg)
    obj = objective_for(d.task)
    task = obj.loss(model.predict_raw(d_va.features), d_va.target)
    shap = tree_shap(model, d_va)
    ent = entropy_penalty(shap)
    stab = stability_penalty(shap, reg) if d_va.n_rows >= 2 else math.nan
    return CVRow(reg.lambda1, reg.lambda2, fold, task, ent, stab, total_loss(task, ent, stab, reg))


def grid_search_cv(
    d: Dataset,
    boost_cfg: BoostConfig,
    reg_base: RegConfig,
    grid: GridSpec,
    workers: int = 1,
) -> GridResult:
    """Mean validation objective per grid point; best = argmin.

    Ties go to the smaller ``lambda1 + lambda2``, then the smaller
    ``lambda1``. Rows are ordered by grid enumeration then fold, whatever the
    worker count.
    """
    if d.n_rows < 2 * grid.folds:
        raise DegenerateFolds(f"{d.n_rows} rows cannot fill {grid.folds} folds of 2")
    folds = kfold_indices(d.n_rows, grid.folds, grid.seed)
    cells = [
        (replace(reg_base, lambda1=l1, lambda2=l2), k)
        for l1, l2 in grid.points()
        for k in range(grid.folds)
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda c: _evaluate_cell(d, folds, boost_cfg, *c), cells))
    else:
        rows = [_evaluate_cell(d, folds, boost_cfg, *c) for c in cells]
    field = "task_loss" if grid.objective == "task_loss" else "total"
    means: dict[tuple[float, float], float] = {}
    for point in grid.points():
        vals = [getattr(r, field) for r in rows if (r.lambda1, r.lambda2) == point]
        means[point] = float(np.mean(vals))
    best = min(means, key=lambda p: (means[p], p[0] + p[1], p[0]))
    return GridResult(replace(reg_base, lambda1=best[0], lambda2=best[1]), rows, means)


def cv_score(d: Dataset, boost_cfg: BoostConfig, reg: RegConfig, folds: int, seed: int) -> Sequence[CVRow]:
    """Per-fold validation rows for a single configuration."""
    parts = kfold_indices(d.n_rows, folds, seed)
    return [_evaluate_cell(d, parts, boost_cfg, reg, k) for k in range(folds)]
