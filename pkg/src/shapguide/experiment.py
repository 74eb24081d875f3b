"""Experiment configs and the work behind each CLI command.

One JSON config describes one experiment and one output directory. All
files of a command are rendered in memory first and only then written, so a
failing run leaves nothing behind.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .dataset import (
    Dataset,
    SplitSpec,
    Task,
    format_float,
    read_csv_columns,
    load_csv,
    standardize,
    synth_sparse,
    train_test_split,
)
from .errors import ConfigError, InvariantViolation, SchemaMismatch, ShapGuideError
from .gbdt import BoostConfig, TrainTrace, boost, fit_random_forest, fit_single_tree
from .linear_reference import LinearModel, linear_shap, train_linear_regularized
from .metrics import DEFAULT_TOP_K, MetricsReport, evaluate, shap_variance
from .shap_reg import RegConfig
from .svg import beeswarm_svg, grouped_bar_svg
from .treeshap import ShapMatrix, tree_shap
from .trees import Ensemble, deserialize, serialize
from .tuning import GridResult, GridSpec, grid_search_cv

log = logging.getLogger(__name__)

MODEL_KINDS = ("single_tree", "random_forest", "gbdt_baseline", "gbdt_shap_guided", "linear_reference")
SCHEMA_VERSIONS = {
    "config": 1,
    "results": 1,
    "trace": 1,
    "model": 1,
    "shap_values": 1,
    "tuning": 1,
    "variance": 1,
}
STABILITY_NOTE = (
    "stability_standin = 1 / (1 + S / scale), S = pairwise SHAP discrepancy penalty, "
    "scale = mean row L1 norm of SHAP values; a bounded summary defined by this package, not a standard metric"
)
LOCAL_ACCURACY_TOL = 1e-8


@contextmanager
def stage(name: str):
    """Prefix errors raised inside the block with the pipeline stage name."""
    try:
        yield
    except (ShapGuideError, InvariantViolation) as exc:
        if not str(exc).startswith("["):
            exc.args = (f"[{name}] {exc}",)
        raise


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class DatasetSource:
    task: Task
    path: str | None = None
    target: str | None = None
    synthetic: dict | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    boost: BoostConfig = field(default_factory=BoostConfig)
    reg: RegConfig = field(default_factory=RegConfig)
    grid: GridSpec | None = None
    models: tuple[str, ...] = ("gbdt_baseline", "gbdt_shap_guided")
    output_dir: str = "results"
    top_k: int = DEFAULT_TOP_K
    forest_trees: int = 100
    linear_steps: int = 2000
    linear_lr: float = 0.05
    workers: int = 1
    base_dir: str = "."

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return _seeded(replace(self, seed=seed))

    def to_dict(self) -> dict[str, Any]:
        """The config as it would be written to a file (seeds folded into ``seed``)."""
        ds: dict[str, Any] = {"task": self.dataset.task.value}
        if self.dataset.path is not None:
            ds.update(path=self.dataset.path, target=self.dataset.target)
        else:
            ds["synthetic"] = dict(self.dataset.synthetic)
        out: dict[str, Any] = {
            "dataset": ds,
            "seed": self.seed,
            "split": {"train_fraction": self.split.train_fraction, "fold_count": self.split.fold_count},
            "boost": _without_seed(self.boost),
            "reg": _without_seed(self.reg),
            "models": list(self.models),
            "output_dir": self.output_dir,
            "top_k": self.top_k,
            "forest": {"n_trees": self.forest_trees},
            "linear": {"steps": self.linear_steps, "lr": self.linear_lr},
            "workers": self.workers,
        }
        if self.grid is not None:
            g = _without_seed(self.grid)
            g["lambda1_values"] = list(g["lambda1_values"])
            g["lambda2_values"] = list(g["lambda2_values"])
            out["grid"] = g
        return out

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("workers")
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _without_seed(obj) -> dict:
    d = dataclasses.asdict(obj)
    d.pop("seed", None)
    return d


def _seeded(cfg: ExperimentConfig) -> ExperimentConfig:
    s = cfg.seed
    return replace(
        cfg,
        split=replace(cfg.split, seed=s),
        boost=replace(cfg.boost, seed=s),
        reg=replace(cfg.reg, seed=s),
        grid=None if cfg.grid is None else replace(cfg.grid, seed=s),
    )


def _section(raw: Any, name: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(raw)
    if missing:
        raise ConfigError(f"{name}: missing keys {sorted(missing)}")
    return raw


def _build(cls, raw: dict, name: str, **extra):
    allowed = {f.name for f in dataclasses.fields(cls)} - {"seed"}
    _section(raw, name, allowed)
    try:
        return cls(**raw, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(raw: Any, base_dir: str | Path = ".") -> ExperimentConfig:
    top = _section(
        raw,
        "config",
        {"dataset", "seed", "split", "boost", "reg", "grid", "models", "output_dir", "top_k", "forest", "linear",
         "workers"},
        {"dataset", "models"},
    )
    ds_raw = _section(top["dataset"], "dataset", {"path", "target", "task", "synthetic"}, {"task"})
    try:
        task = Task.parse(ds_raw["task"])
    except ValueError as exc:
        raise ConfigError(f"dataset.task: {exc}") from None
    if ("path" in ds_raw) == ("synthetic" in ds_raw):
        raise ConfigError("dataset: give exactly one of 'path' or 'synthetic'")
    if "path" in ds_raw:
        if "target" not in ds_raw:
            raise ConfigError("dataset: 'target' is required with 'path'")
        source = DatasetSource(task, str(ds_raw["path"]), str(ds_raw["target"]))
    else:
        syn = _section(ds_raw["synthetic"], "dataset.synthetic",
                       {"n", "m_informative", "m_noise", "noise_sd"}, {"n", "m_informative", "m_noise"})
        source = DatasetSource(task, synthetic=dict(syn))
    seed = top.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    models = top["models"]
    if not isinstance(models, list) or not models:
        raise ConfigError("models: expected a non-empty list")
    bad = [m for m in models if m not in MODEL_KINDS]
    if bad:
        raise ConfigError(f"models: unknown kinds {bad}; choose from {list(MODEL_KINDS)}")
    if len(set(models)) != len(models):
        raise ConfigError("models: duplicates")
    forest = _section(top.get("forest", {}), "forest", {"n_trees"})
    linear = _section(top.get("linear", {}), "linear", {"steps", "lr"})
    grid = None
    if top.get("grid") is not None:
        grid = _build(GridSpec, top["grid"], "grid")
    top_k = top.get("top_k", DEFAULT_TOP_K)
    workers = top.get("workers", 1)
    for key, value in (("top_k", top_k), ("workers", workers), ("forest.n_trees", forest.get("n_trees", 1)),
                       ("linear.steps", linear.get("steps", 1))):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{key} must be a positive integer")
    cfg = ExperimentConfig(
        dataset=source,
        seed=seed,
        split=_build(SplitSpec, top.get("split", {}), "split"),
        boost=_build(BoostConfig, top.get("boost", {}), "boost"),
        reg=_build(RegConfig, top.get("reg", {}), "reg"),
        grid=grid,
        models=tuple(models),
        output_dir=str(top.get("output_dir", "results")),
        top_k=top_k,
        forest_trees=forest.get("n_trees", 100),
        linear_steps=linear.get("steps", 2000),
        linear_lr=float(linear.get("lr", 0.05)),
        workers=workers,
        base_dir=str(base_dir),
    )
    return _seeded(cfg)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    return config_from_dict(raw, path.parent)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    src = cfg.dataset
    if src.path is not None:
        p = Path(src.path)
        if not p.is_absolute():
            p = Path(cfg.base_dir) / p
        if not p.exists():
            raise ConfigError(f"dataset file {p} not found")
        return load_csv(p, src.target, src.task)
    s = src.synthetic
    try:
        return synth_sparse(int(s["n"]), int(s["m_informative"]), int(s["m_noise"]),
                            float(s.get("noise_sd", 0.5)), cfg.seed, src.task)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dataset.synthetic: {exc}") from None


# ------------------------------------------------------------------ outputs

class OutputSet:
    """In-memory bundle of files, committed in one step."""

    def __init__(self):
        self.files: dict[str, bytes] = {}

    def add(self, rel: str, content: str | bytes):
        self.files[rel] = content.encode("utf-8") if isinstance(content, str) else content

    def commit(self, out_dir: str | Path):
        out_dir = Path(out_dir)
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
        try:
            for rel, data in sorted(self.files.items()):
                p = tmp / rel
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_bytes(data)
            out_dir.mkdir(exist_ok=True)
            for rel in sorted(self.files):
                dst = out_dir / rel
                dst.parent.mkdir(parents=True, exist_ok=True)
                os.replace(tmp / rel, dst)
        finally:
            shutil.rmtree(tmp, ignore_errors=True)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def results_columns(task: Task) -> list[str]:
    metrics = ["rmse", "r2"] if task is Task.REGRESSION else ["f1", "auc"]
    return ["model", *metrics, "shap_entropy", "topk_concentration", "stability_standin", "k_used"]


def results_csv(reports: list[MetricsReport], task: Task) -> str:
    cols = results_columns(task)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        row = r.row()
        row["stability_standin"] = row.pop("stability")
        w.writerow([_fmt(row[c]) for c in cols])
    return out.getvalue()


def results_json(reports: list[MetricsReport], task: Task) -> str:
    cols = results_columns(task)
    rows = []
    for r in reports:
        row = r.row()
        row["stability_standin"] = row.pop("stability")
        rows.append({c: row[c] for c in cols})
    doc = {"schema_version": SCHEMA_VERSIONS["results"], "task": task.value, "columns": cols,
           "stability_note": STABILITY_NOTE, "rows": rows}
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def variance_csv(names, var_a, var_b) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["feature", "variance_a", "variance_b"])
    for n, a, b in zip(names, var_a, var_b):
        w.writerow([n, format_float(a), format_float(b)])
    return out.getvalue()


def check_local_accuracy(shap: ShapMatrix, raw: np.ndarray, what: str):
    err = np.abs(shap.reconstruct() - raw)
    tol = LOCAL_ACCURACY_TOL * max(1.0, float(np.max(np.abs(raw), initial=0.0)))
    if err.size and float(err.max()) > tol:
        raise InvariantViolation(f"{what}: SHAP local accuracy violated by {float(err.max()):.3g}")


# ------------------------------------------------------------------ run

@dataclass
class TrainedModel:
    name: str
    model: Ensemble | LinearModel
    trace: TrainTrace | None
    shap: ShapMatrix
    test_raw: np.ndarray
    test_pred: np.ndarray
    test_features: np.ndarray


def _train_one(name: str, cfg: ExperimentConfig, reg: RegConfig, train: Dataset, test: Dataset) -> TrainedModel:
    log.info("training %s", name)
    with stage(f"train {name}"):
        return _fit_and_explain(name, cfg, reg, train, test)


def _fit_and_explain(name, cfg, reg, train, test) -> TrainedModel:
    trace = None
    if name == "linear_reference":
        std_train, stats = standardize(train)
        fitted, trace = train_linear_regularized(std_train, reg, cfg.linear_steps, cfg.linear_lr)
        # fold the scaling into the weights so the saved model reads raw features
        w = fitted.weights / stats.sd
        model = LinearModel(w, fitted.bias - float(w @ stats.mean), stats.mean, train.task, train.feature_names)
        shap = linear_shap(model, test)
        return TrainedModel(name, model, trace, shap, model.predict_raw(test), model.predict(test), test.features)
    if name == "single_tree":
        model = fit_single_tree(train, cfg.boost)
    elif name == "random_forest":
        model = fit_random_forest(train, cfg.boost, n_trees=cfg.forest_trees)
    elif name == "gbdt_baseline":
        model, trace = boost(train, cfg.boost, replace(reg, lambda1=0.0, lambda2=0.0))
    elif name == "gbdt_shap_guided":
        model, trace = boost(train, cfg.boost, reg)
    else:
        raise ConfigError(f"unknown model kind {name!r}")
    shap = tree_shap(model, test)
    return TrainedModel(name, model, trace, shap, model.predict_raw(test.features), model.predict(test.features),
                        test.features)


def _model_doc(m: TrainedModel) -> str:
    return m.model.to_json() if isinstance(m.model, LinearModel) else serialize(m.model)


def train_models(cfg: ExperimentConfig, reg: RegConfig, train: Dataset, test: Dataset) -> list[TrainedModel]:
    if cfg.workers > 1 and len(cfg.models) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(lambda n: _train_one(n, cfg, reg, train, test), cfg.models))
    return [_train_one(n, cfg, reg, train, test) for n in cfg.models]


def run_experiment(cfg: ExperimentConfig) -> tuple[OutputSet, list[MetricsReport]]:
    """Everything ``run`` produces, rendered but not yet written."""
    out = OutputSet()
    with stage("load dataset"):
        d = load_dataset(cfg)
        train, test = train_test_split(d, cfg.split)
    reg = cfg.reg
    if cfg.grid is not None and "gbdt_shap_guided" in cfg.models:
        log.info("grid search over %d points x %d folds", len(cfg.grid.points()), cfg.grid.folds)
        with stage("tuning"):
            grid_result = grid_search_cv(train, cfg.boost, cfg.reg, cfg.grid, workers=cfg.workers)
        reg = grid_result.best
        out.add("tuning.csv", grid_result.to_csv())
    with stage("training"):
        trained = train_models(cfg, reg, train, test)
    reports = []
    for m in trained:
        with stage(f"evaluate {m.name}"):
            check_local_accuracy(m.shap, m.test_raw, m.name)
            reports.append(evaluate(m.name, d.task, m.test_pred, test.target, m.shap, cfg.top_k, reg))
        out.add(f"models/{m.name}.json", _model_doc(m))
        if m.trace is not None:
            out.add(f"traces/{m.name}.csv", m.trace.to_csv())
        out.add(f"plots/{m.name}_summary.svg",
                beeswarm_svg(m.shap.phi, m.shap.feature_names, m.test_features, f"SHAP summary: {m.name}"))
    by_name = {m.name: m for m in trained}
    if "gbdt_baseline" in by_name and "gbdt_shap_guided" in by_name:
        va = shap_variance(by_name["gbdt_baseline"].shap)
        vb = shap_variance(by_name["gbdt_shap_guided"].shap)
        out.add("variance.csv", variance_csv(d.feature_names, va, vb))
        out.add("plots/variance.svg", grouped_bar_svg(va, vb, d.feature_names, ("baseline", "SHAP-guided")))
    out.add("results.csv", results_csv(reports, d.task))
    out.add("results.json", results_json(reports, d.task))
    manifest = {
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "selected_reg": {"lambda1": reg.lambda1, "lambda2": reg.lambda2},
        "package_version": __version__,
        "schema_versions": SCHEMA_VERSIONS,
        "files": {rel: hashlib.sha256(data).hexdigest() for rel, data in sorted(out.files.items())},
    }
    out.add("manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out, reports


def output_dir_for(cfg: ExperimentConfig, override: str | None) -> Path:
    if override is not None:
        return Path(override)
    p = Path(cfg.output_dir)
    return p if p.is_absolute() else Path(os.path.normpath(Path(cfg.base_dir) / p))


def run_tuning(cfg: ExperimentConfig) -> tuple[OutputSet, GridResult]:
    if cfg.grid is None:
        raise ConfigError("tune needs a 'grid' section in the config")
    d = load_dataset(cfg)
    train, _ = train_test_split(d, cfg.split)
    result = grid_search_cv(train, cfg.boost, cfg.reg, cfg.grid, workers=cfg.workers)
    best_cfg = replace(cfg, reg=result.best)
    out = OutputSet()
    out.add("tuning.csv", result.to_csv())
    out.add("best_config.json", json.dumps(best_cfg.to_dict(), indent=1) + "\n")
    return out, result


# ------------------------------------------------------------------ explain

def load_model(path: str | Path) -> Ensemble | LinearModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such model file") from None
    try:
        fmt = json.loads(text).get("format")
    except (json.JSONDecodeError, AttributeError):
        fmt = None
    if fmt == "shapguide.linear":
        return LinearModel.from_json(text)
    return deserialize(text)


def model_shap(model, X: np.ndarray) -> tuple[ShapMatrix, np.ndarray]:
    if isinstance(model, LinearModel):
        return linear_shap(model, X), model.predict_raw(X)
    return tree_shap(model, X), model.predict_raw(X)


def features_for_model(data_path: str | Path, feature_names) -> np.ndarray:
    """Model feature columns from a CSV; extra columns (e.g. the target) are ignored."""
    try:
        header, table = read_csv_columns(data_path)
    except FileNotFoundError:
        raise ConfigError(f"{data_path}: no such data file") from None
    missing = [n for n in feature_names if n not in header]
    if missing:
        raise SchemaMismatch(f"{data_path} lacks model features {missing}")
    return np.asfortranarray(table[:, [header.index(n) for n in feature_names]])


def explain(model_path, data_path) -> OutputSet:
    model = load_model(model_path)
    X = features_for_model(data_path, model.feature_names)
    shap, raw = model_shap(model, X)
    check_local_accuracy(shap, raw, "explain")
    out = OutputSet()
    out.add("shap_values.csv", shap.to_csv())
    out.add("summary.svg", beeswarm_svg(shap.phi, shap.feature_names, X))
    return out


def variance_compare(model_a, model_b, data_path) -> OutputSet:
    a, b = load_model(model_a), load_model(model_b)
    if tuple(a.feature_names) != tuple(b.feature_names):
        raise SchemaMismatch("models were trained on different feature schemas")
    X = features_for_model(data_path, a.feature_names)
    sa, ra = model_shap(a, X)
    sb, rb = model_shap(b, X)
    check_local_accuracy(sa, ra, "model A")
    check_local_accuracy(sb, rb, "model B")
    va, vb = shap_variance(sa), shap_variance(sb)
    out = OutputSet()
    out.add("variance.csv", variance_csv(a.feature_names, va, vb))
    out.add("variance.svg", grouped_bar_svg(va, vb, a.feature_names, (Path(model_a).stem, Path(model_b).stem)))
    return out

