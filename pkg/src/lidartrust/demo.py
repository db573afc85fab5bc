"""Deterministic synthetic end-to-end evaluation.

Builds a Gaussian-feature population with an analytic classifier, scores it,
and writes the full CSV bundle (confusion, class metrics, detection report,
loss curves).  Used by the demo scripts and as the fixture generator for the
plotting package's tests.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .detect_eval import build_records, build_report, write_report
from .lidar_io import PredictionSet
from .seg_metrics import class_metrics, confusion_matrix, per_class_nll
from .synthetic import feature_table, gaussian_population
from .taxonomy import ClassTable
from .trust_scores import (
    fit_mahalanobis,
    mahalanobis_distance,
    normalize_trust,
    softmax,
    softmax_confidence,
)

ID_MEANS = np.array([[0.0, 0.0], [12.0, 0.0], [6.0, 6.0 * np.sqrt(3.0)]])
OOD_BETWEEN = np.array([6.0, 0.0])


def _fmt(v) -> str:
    return "" if v is None else (f"{v:.12g}" if isinstance(v, float) else str(v))


def write_confusion_csvs(cm, table: ClassTable, out_dir: Path) -> None:
    names = [table.name_of(c) for c in cm.pd_class_ids]
    with open(out_dir / "confusion_counts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gt_class"] + names + ["gt_total"])
        for r, rid in enumerate(cm.gt_class_ids):
            w.writerow([table.name_of(rid)] + cm.counts[r].tolist() + [int(cm.gt_totals[r])])
    ratios = cm.ratios
    with open(out_dir / "confusion_ratios.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gt_class"] + names)
        for r, rid in enumerate(cm.gt_class_ids):
            row = ["" if not cm.defined_rows[r] else f"{v:.12g}" for v in ratios[r]]
            w.writerow([table.name_of(rid)] + row)


def write_class_metrics_csv(rows, table: ClassTable, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["class_id", "class", "scale_group", "present",
             "iou", "pre", "rec", "wpre", "not_pre", "not_wpre", "eta"]
        )
        for m in rows:
            w.writerow(
                [m.class_id, table.name_of(m.class_id), table.scale_group_of(m.class_id),
                 int(m.present), _fmt(m.iou), _fmt(m.pre), _fmt(m.rec), _fmt(m.wpre),
                 _fmt(m.not_pre), _fmt(m.not_wpre), _fmt(m.eta)]
            )


def write_loss_curves_csv(preds_by_epoch, table: ClassTable, path: Path) -> None:
    """Long-format per-class loss trajectory: epoch, class, loss."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "class", "loss"])
        for epoch, preds in enumerate(preds_by_epoch):
            for cid, loss in per_class_nll(preds, table).items():
                if loss is not None:
                    w.writerow([epoch, table.name_of(cid), f"{loss:.12g}"])


def sharpened_checkpoints(preds: PredictionSet, scales=(0.01, 0.02, 0.05, 0.1, 0.25, 1.0)):
    """Fake training checkpoints by sharpening the classifier's logits."""
    out = []
    for s in scales:
        probs = softmax(preds.logits.astype(np.float64) * s)
        out.append(PredictionSet(gt=preds.gt, probs=probs.astype(np.float32)))
    return out


def synthetic_evaluation(out_dir, *, seed: int = 0, method: str = "md") -> Path:
    """Run the full synthetic pipeline and write every CSV product to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = feature_table(3)

    train = gaussian_population(ID_MEANS, OOD_BETWEEN, n_per_class=2000, n_ood=1,
                                seed=seed + 1000)
    keep = np.isin(train.gt, table.id_class_ids)
    model = fit_mahalanobis(train.features[keep], train.gt[keep], table)

    test = gaussian_population(ID_MEANS, OOD_BETWEEN, n_per_class=1500, n_ood=1500,
                               seed=seed)
    if method == "md":
        raw = mahalanobis_distance(model, test.features)
        g = normalize_trust(raw, "md", md_tau=model.md_tau)
    else:
        g = softmax_confidence(test.probs)
    records = build_records(test, g, table)
    report = build_report(records, table, method=method)
    write_report(report, out_dir, table)

    pd_class = np.asarray(table.id_class_ids)[test.pred_columns()]
    cm = confusion_matrix(test.gt, pd_class, table)
    write_confusion_csvs(cm, table, out_dir)
    write_class_metrics_csv(class_metrics(cm), table, out_dir / "class_metrics.csv")
    write_loss_curves_csv(sharpened_checkpoints(test), table, out_dir / "loss_curves.csv")
    return out_dir
