"""Write the Diabetes and Breast Cancer tables bundled with scikit-learn as CSVs.

Usage: python3 scripts/export_real_datasets.py [OUT_DIR]   (default tests/data)

Only this script needs scikit-learn; the package and tests read the CSVs.
"""
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_breast_cancer, load_diabetes

from shapguide.dataset import Dataset, Task, to_csv


def _clean(names):
    return [n.strip().replace(" ", "_") for n in names]


def main(out_dir: str = "tests/data") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # scaled=False keeps the raw clinical units
    db = load_diabetes(scaled=False)
    d = Dataset(db.data, db.target, _clean(db.feature_names), Task.REGRESSION)
    (out / "diabetes.csv").write_text(to_csv(d, "progression"))
    bc = load_breast_cancer()
    # 1 = malignant, the positive class of interest
    y = (bc.target == 0).astype(np.float64)
    d = Dataset(bc.data, y, _clean(bc.feature_names), Task.BINARY)
    (out / "breast_cancer.csv").write_text(to_csv(d, "malignant"))
    print(f"wrote {out / 'diabetes.csv'} and {out / 'breast_cancer.csv'}")


if __name__ == "__main__":
    main(*sys.argv[1:])
