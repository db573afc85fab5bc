"""Command-line entry points.

Subcommands: augment, fit-mahalanobis, score, confusion, metrics, evaluate.
Run ``lidartrust <subcommand> --help`` for the flags of each.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import detect_eval as de
from . import seg_metrics as sm
from . import trust_scores as ts
from .lidar_io import read_manifest, read_prediction_set
from .taxonomy import load_class_table


def _table(args):
    return load_class_table(args.class_table)


def _iter_predictions(entries):
    for entry in entries:
        if entry.predictions is None:
            raise SystemExit(f"manifest entry {entry.frame_id} has no prediction file")
        yield entry, read_prediction_set(entry.predictions)


def cmd_augment(args) -> int:
    table = _table(args)
    aux_table = load_class_table(args.aux_class_table) if args.aux_class_table else table
    wanted = [aux_table.id_of(name) for name in args.classes.split(",") if name]
    entries = read_manifest(args.source_manifest)
    bank = aug.build_instance_bank(
        read_manifest(args.aux_manifest), aux_table, wanted, min_points=args.min_points
    )
    config = aug.AugmentConfig(cell_size=args.cell_size, min_points=args.min_points)
    per_class = {cid: args.per_frame for cid in wanted}
    manifest = aug.augment_dataset(
        entries, bank, per_class, table, args.seed, args.out_dir, config
    )
    print(f"wrote {manifest}")
    return 0


def cmd_fit_mahalanobis(args) -> int:
    table = _table(args)
    feats, gts = [], []
    for _entry, preds in _iter_predictions(read_manifest(args.manifest)):
        if preds.features is None:
            raise SystemExit("prediction files carry no feature vectors")
        feats.append(preds.features)
        gts.append(preds.gt)
    model = ts.fit_mahalanobis(np.vstack(feats), np.concatenate(gts), table)
    ts.save_mahalanobis(model, args.out)
    print(f"wrote {args.out} (classes={model.class_ids}, D={model.dim}, tau={model.md_tau:.4g})")
    return 0


def cmd_score(args) -> int:
    table = _table(args)
    methods = [m for m in args.methods.split(",") if m]
    for m in methods:
        if m not in ts.METHODS:
            raise SystemExit(f"unknown method {m!r}; choose from {ts.METHODS}")
    model = ts.load_mahalanobis(args.model) if args.model else None
    id_ids = np.asarray(table.id_class_ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["frame_id", "index", "gt", "pd"]
        for m in methods:
            header += [f"{m}_raw", f"{m}_g"]
        writer.writerow(header)
        for entry, preds in _iter_predictions(read_manifest(args.manifest)):
            scores = ts.score_prediction_set(
                preds, methods, temperature=args.temperature, model=model
            )
            pd_class = id_ids[preds.pred_columns()]
            keep = np.nonzero(preds.gt != -1)[0]
            for i in keep:
                row = [entry.frame_id, int(i), int(preds.gt[i]), int(pd_class[i])]
                for m in methods:
                    raw, g = scores[m]
                    row += [f"{float(raw[i]):.12g}", f"{float(g[i]):.12g}"]
                writer.writerow(row)
    print(f"wrote {out}")
    return 0


def _accumulate_confusion(args, table):
    cm = None
    for _entry, preds in _iter_predictions(read_manifest(args.manifest)):
        pd_class = np.asarray(table.id_class_ids)[preds.pred_columns()]
        part = sm.confusion_matrix(preds.gt, pd_class, table)
        cm = part if cm is None else cm.merge(part)
    if cm is None:
        raise SystemExit("manifest is empty")
    return cm


def cmd_confusion(args) -> int:
    table = _table(args)
    cm = _accumulate_confusion(args, table)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
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
    print(f"wrote {out_dir}/confusion_counts.csv and confusion_ratios.csv")
    return 0


def cmd_metrics(args) -> int:
    table = _table(args)
    cm = _accumulate_confusion(args, table)
    rows = sm.class_metrics(cm)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def _fmt(v):
        return "" if v is None else f"{v:.12g}"

    with open(out, "w", newline="") as fh:
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
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    table = _table(args)
    method = args.method
    gt, pd, g = [], [], []
    with open(args.scores, newline="") as fh:
        reader = csv.DictReader(fh)
        col = f"{method}_g"
        if col not in (reader.fieldnames or []):
            raise SystemExit(f"scores file has no column {col}; run `score --methods {method}`")
        for row in reader:
            gt.append(int(row["gt"]))
            pd.append(int(row["pd"]))
            g.append(float(row[col]))
    records = de.EvalRecords(np.array(gt), np.array(pd), np.array(g))
    report = de.build_report(
        records,
        table,
        method=method,
        tasks=tuple(t for t in args.tasks.split(",") if t),
        edges=de.uniform_edges(args.delta_grid),
        wpre_delta=args.delta,
    )
    de.write_report(report, args.out, table)
    print(f"wrote report to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidartrust", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="transplant instances into a dataset")
    p.add_argument("--source-manifest", required=True)
    p.add_argument("--aux-manifest", required=True)
    p.add_argument("--classes", required=True, help="comma-separated class names to transplant")
    p.add_argument("--per-frame", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cell-size", type=float, default=0.05)
    p.add_argument("--min-points", type=int, default=30)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--class-table", required=True)
    p.add_argument("--aux-class-table", default=None,
                   help="class table of the auxiliary dataset (defaults to --class-table)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fit-mahalanobis", help="fit the feature-space distance model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class-table", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_mahalanobis)

    p = sub.add_parser("score", help="compute trust scores per point")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class-table", required=True)
    p.add_argument("--methods", default="conf,du,mu")
    p.add_argument("--temperature", type=float, default=ts.DEFAULT_TEMPERATURE)
    p.add_argument("--model", default=None, help="fitted model file, needed for md")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("confusion", help="write confusion counts and ratios")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class-table", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("metrics", help="write per-class segmentation metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class-table", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("evaluate", help="detection evaluation report from a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--class-table", required=True)
    p.add_argument("--method", default="conf", choices=ts.METHODS)
    p.add_argument("--tasks", default="io,cw,cwood")
    p.add_argument("--delta-grid", type=int, default=10, help="number of threshold bins")
    p.add_argument("--delta", type=float, default=0.9, help="threshold for wpre_at")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
