"""Run several experiment configs and collect table-style comparisons.

Usage: python3 scripts/run_comparison.py [CONFIG ...] [--out DIR] [--workers N]

With no configs, runs every ``configs/*.json`` except ``quick.json``. Writes
one CSV per task kind to DIR (default ``results/``): a row per (dataset,
model) and, per model, an unweighted mean row over datasets labelled
``mean (unweighted)``.
"""
import argparse
import csv
import io
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from shapguide.experiment import load_config, output_dir_for, results_columns, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*")
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    paths = args.configs or sorted(p for p in (ROOT / "configs").glob("*.json") if p.name != "quick.json")
    tables: dict = defaultdict(list)
    for path in paths:
        cfg = replace(load_config(path), workers=args.workers)
        out, _ = run_experiment(cfg)
        dest = output_dir_for(cfg, None)
        out.commit(dest)
        rows = list(csv.DictReader(io.StringIO(out.files["results.csv"].decode())))
        tables[cfg.dataset.task].append((Path(path).stem, rows))
        print(f"{Path(path).stem}: wrote {dest}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for task, entries in tables.items():
        cols = results_columns(task)
        metric_cols = cols[1:]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", *cols])
        per_model = defaultdict(list)
        for name, rows in entries:
            for r in rows:
                w.writerow([name, *(r[c] for c in cols)])
                per_model[r["model"]].append([float(r[c]) for c in metric_cols])
        for model, vals in per_model.items():
            mean = np.mean(np.array(vals), axis=0)
            w.writerow(["mean (unweighted)", model, *(repr(float(v)) for v in mean)])
        target = out_dir / f"comparison_{task.value}.csv"
        target.write_text(buf.getvalue())
        print(f"wrote {target}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
