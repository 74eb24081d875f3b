"""Rewrite the expected outputs under tests/golden/expected from the checked-in inputs.

Usage: python3 scripts/regenerate_golden.py

Run only after an intentional output-format change, then review the diff.
The acceptance tests re-derive the SHAP CSV from an independent oracle, so
a wrong regeneration of the numbers still fails there.
"""
from pathlib import Path

from shapguide import cli

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden"


def main() -> int:
    data, a, b = GOLDEN / "data20.csv", GOLDEN / "model_a.json", GOLDEN / "model_b.json"
    expected = GOLDEN / "expected"
    rc = cli.main(["explain", str(a), str(data), "--out", str(expected / "explain")])
    rc |= cli.main(["variance-compare", str(a), str(b), str(data), "--out", str(expected / "variance")])
    if rc == 0:
        print(f"wrote {expected}")
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
