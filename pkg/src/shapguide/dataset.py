"""Tabular datasets: CSV ingestion, splitting, standardization, synthetic data."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConstantColumn,
    DegenerateFolds,
    DegenerateSplit,
    EmptyFile,
    InvalidShape,
    MissingColumn,
    NonBinaryTarget,
    NonNumericCell,
    SchemaMismatch,
)


class Task(str, enum.Enum):
    REGRESSION = "regression"
    BINARY = "binary_classification"

    @classmethod
    def parse(cls, value: "Task | str") -> "Task":
        if isinstance(value, Task):
            return value
        aliases = {
            "regression": cls.REGRESSION,
            "binary_classification": cls.BINARY,
            "classification": cls.BINARY,
            "binary": cls.BINARY,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown task kind {value!r}") from None


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix plus target.

    ``features`` is stored column-major (Fortran order) since split search
    scans one feature at a time.
    """

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    task: Task

    def __post_init__(self):
        X = np.asfortranarray(np.asarray(self.features, dtype=np.float64))
        y = np.asarray(self.target, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidShape(f"features must be a non-empty 2-d matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvalidShape(f"target length {y.shape} does not match {X.shape[0]} rows")
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != X.shape[1]:
            raise InvalidShape(f"{len(names)} feature names for {X.shape[1]} columns")
        if len(set(names)) != len(names):
            raise InvalidShape("feature names must be unique")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidShape("dataset contains NaN or Inf")
        task = Task.parse(self.task)
        if task is Task.BINARY and not np.all((y == 0.0) | (y == 1.0)):
            raise NonBinaryTarget("classification targets must be exactly 0 or 1")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "task", task)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.features[rows], self.target[rows], self.feature_names, self.task)

    def matrix_for(self, feature_names: Sequence[str]) -> np.ndarray:
        """Return the feature matrix ordered to match ``feature_names``."""
        if tuple(feature_names) == self.feature_names:
            return self.features
        index = {n: j for j, n in enumerate(self.feature_names)}
        missing = [n for n in feature_names if n not in index]
        if missing:
            raise SchemaMismatch(f"dataset lacks model features {missing}")
        return np.asfortranarray(self.features[:, [index[n] for n in feature_names]])


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    fold_count: int = 5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.fold_count < 2:
            raise ValueError("fold_count must be >= 2")


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    sd: np.ndarray = field(repr=False)


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(row, col, text) from None
    if not math.isfinite(value):
        raise NonNumericCell(row, col, text)
    return value


def read_csv_columns(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Parse a headered numeric CSV into (header, N x C matrix).

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or all(not h.strip() for h in header):
        raise EmptyFile(f"{path}: no header row")
    header = [h.strip() for h in header]
    rows = []
    for r, raw in enumerate(reader, start=1):
        if not raw or all(not c.strip() for c in raw):
            continue
        if len(raw) != len(header):
            raise InvalidShape(f"{path}: row {r} has {len(raw)} cells, header has {len(header)}")
        rows.append([_parse_cell(c.strip(), r, header[j]) for j, c in enumerate(raw)])
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    return header, np.array(rows, dtype=np.float64)


def load_csv(path: str | Path, target_column: str, task: Task | str) -> Dataset:
    header, table = read_csv_columns(path)
    if target_column not in header:
        raise MissingColumn(f"{path}: no column named {target_column!r}")
    if len(set(header)) != len(header):
        raise InvalidShape(f"{path}: duplicate column names")
    t = header.index(target_column)
    task = Task.parse(task)
    y = table[:, t]
    if task is Task.BINARY:
        bad = np.flatnonzero((y != 0.0) & (y != 1.0))
        if bad.size:
            raise NonBinaryTarget(
                f"{path}: target {target_column!r} has value {y[bad[0]]!r} at row {bad[0] + 1}"
            )
    names = [h for j, h in enumerate(header) if j != t]
    if not names:
        raise InvalidShape(f"{path}: no feature columns besides the target")
    X = np.delete(table, t, axis=1)
    return Dataset(X, y, tuple(names), task)


def format_float(x: float) -> str:
    """Shortest round-trip decimal text; platform independent."""
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x)) if x != 0 or math.copysign(1, x) > 0 else "0"
    return repr(x)


def to_csv(d: Dataset, target_column: str = "target") -> str:
    """Serialize ``d`` back to CSV text with the target as the last column."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([*d.feature_names, target_column])
    for row, y in zip(d.features, d.target):
        writer.writerow([format_float(v) for v in row] + [format_float(y)])
    return out.getvalue()


def integer_encode_csv(src: str | Path, dst: str | Path) -> dict[str, dict[str, int]]:
    """Rewrite a CSV with non-numeric columns mapped to ordinal codes.

    Codes are assigned by order of first appearance. Returns the per-column
    code tables. Empty cells are left empty so the loader still rejects them.
    """
    text = Path(src).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise EmptyFile(f"{src}: empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    codes: dict[str, dict[str, int]] = {}
    for j, name in enumerate(header):
        cells = [r[j].strip() for r in body]
        numeric = True
        for c in cells:
            try:
                if c and not math.isfinite(float(c)):
                    numeric = False
            except ValueError:
                numeric = False
            if not numeric:
                break
        if numeric:
            continue
        table: dict[str, int] = {}
        for r in body:
            c = r[j].strip()
            if c:
                r[j] = str(table.setdefault(c, len(table)))
        codes[name] = table
    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerows([header, *body])
    Path(dst).write_text(out.getvalue(), encoding="utf-8")
    return codes


def train_test_split(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(d.n_rows, spec)
    return d.subset(train_idx), d.subset(test_idx)


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(n * spec.train_fraction))
    if n_train < 1 or n_train > n - 1:
        raise DegenerateSplit(f"{n} rows with train fraction {spec.train_fraction} leaves an empty side")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic partition of ``range(n)`` into ``folds`` validation sets."""
    if folds < 2 or n < 2 * folds:
        raise DegenerateFolds(f"cannot make {folds} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def synth_sparse(
    n: int,
    m_informative: int,
    m_noise: int,
    noise_sd: float = 0.5,
    seed: int = 0,
    task: Task | str = Task.REGRESSION,
) -> Dataset:
    """Planted-sparsity data: the target depends on the first ``m_informative``
    columns only; the remaining ``m_noise`` columns are independent N(0, 1).

    Coefficients are drawn from the seed with magnitudes in [1, 2] and random
    signs. Classification draws labels from a logistic link on the linear
    score plus N(0, noise_sd) noise.
    """
    if n < 10 or m_informative < 1 or m_noise < 0:
        raise InvalidShape("need n >= 10, m_informative >= 1, m_noise >= 0")
    if noise_sd < 0:
        raise InvalidShape("noise_sd must be non-negative")
    task = Task.parse(task)
    rng = np.random.default_rng(seed)
    coef = rng.uniform(1.0, 2.0, m_informative) * rng.choice([-1.0, 1.0], m_informative)
    X = rng.standard_normal((n, m_informative + m_noise))
    score = X[:, :m_informative] @ coef + noise_sd * rng.standard_normal(n)
    if task is Task.REGRESSION:
        y = score
    else:
        p = 1.0 / (1.0 + np.exp(-score))
        y = (rng.uniform(size=n) < p).astype(np.float64)
    names = [f"x{j}" for j in range(m_informative)] + [f"noise{j}" for j in range(m_noise)]
    return Dataset(X, y, tuple(names), task)


def synth_coefficients(m_informative: int, seed: int) -> np.ndarray:
    """The coefficient vector :func:`synth_sparse` plants for ``seed``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(1.0, 2.0, m_informative) * rng.choice([-1.0, 1.0], m_informative)


def standardize(d: Dataset, stats: Standardization | None = None) -> tuple[Dataset, Standardization]:
    """Center and scale each column (population sd).

    Pass ``stats`` to apply training-set statistics to another split.
    """
    X = d.features
    if stats is None:
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        const = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(mean)))
        if const.size:
            raise ConstantColumn(f"column {d.feature_names[const[0]]!r} is constant")
        stats = Standardization(mean, sd)
    Z = (X - stats.mean) / stats.sd
    return Dataset(Z, d.target, d.feature_names, d.task), stats


def unstandardize(d: Dataset, stats: Standardization) -> Dataset:
    return Dataset(d.features * stats.sd + stats.mean, d.target, d.feature_names, d.task)
