#!/usr/bin/env python3
"""Regenerate the plotting package's test fixtures.

Runs the deterministic synthetic evaluation and copies the CSVs the figure
renderers consume (plus the shared class-color config) into
plotkit/tests/fixtures/.
"""

import argparse
import shutil
import tempfile
from pathlib import Path

from lidartrust.demo import synthetic_evaluation
from lidartrust.synthetic import feature_table
from lidartrust.taxonomy import save_class_table

FIXTURES = [
    "tsd_alpha.csv",
    "tsd_beta.csv",
    "class_metrics.csv",
    "summary.csv",
    "confusion_ratios.csv",
    "loss_curves.csv",
    "auroc.csv",
]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--dest", default=str(Path(__file__).resolve().parent.parent / "plotkit/tests/fixtures")
    )
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        out = synthetic_evaluation(tmp, seed=args.seed)
        for name in FIXTURES:
            shutil.copy(out / name, dest / name)
    save_class_table(feature_table(3), dest / "class_table.yaml")
    print(f"wrote {len(FIXTURES) + 1} fixtures to {dest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
