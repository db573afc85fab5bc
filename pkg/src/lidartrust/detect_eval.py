"""Detection evaluation: three task definitions over trust-scored records,
thresholded detection counts, ROC/AUROC per predicted class, trust score
distribution matrices, and weighted precision at a threshold."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadEdges
from .seg_metrics import ClassMetricRow, ConfusionMatrix, class_metrics
from .taxonomy import ClassTable, IGNORE

TASKS = ("io", "cw", "cwood")

BAND_CORRECT = "correct"
BAND_WRONG = "wrong"
BAND_OOD = "ood"


@dataclass(frozen=True)
class TaskSpec:
    """True/false ground-truth class sets for one task and predicted class."""

    task: str
    pd_class: int
    true_set: frozenset[int]
    false_set: frozenset[int]

    def __post_init__(self):
        if self.true_set & self.false_set:
            raise ValueError("true and false class sets must be disjoint")


def make_task_spec(task: str, pd_class: int, table: ClassTable) -> TaskSpec:
    """Resolve a task name to its class sets for one predicted class.

    io    -- in-distribution vs OOD, regardless of the predicted label.
    cw    -- correct vs wrong among in-distribution ground truth only.
    cwood -- correct vs wrong-or-OOD.
    """
    id_ids = frozenset(table.id_class_ids)
    ood = frozenset(table.ood_set)
    if pd_class not in id_ids:
        raise ValueError(f"predicted class {pd_class} is not an ID class")
    if task == "io":
        return TaskSpec(task, pd_class, id_ids, ood)
    if task == "cw":
        return TaskSpec(task, pd_class, frozenset({pd_class}), id_ids - {pd_class})
    if task == "cwood":
        return TaskSpec(task, pd_class, frozenset({pd_class}), (id_ids - {pd_class}) | ood)
    raise ValueError(f"unknown task {task!r}")


@dataclass
class EvalRecords:
    """Flat (ground truth, predicted class, trust) triples for evaluation."""

    gt: np.ndarray
    pd: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.gt = np.asarray(self.gt, dtype=np.int64)
        self.pd = np.asarray(self.pd, dtype=np.int64)
        self.g = np.asarray(self.g, dtype=np.float64)
        if not (self.gt.shape == self.pd.shape == self.g.shape):
            raise ValueError("gt, pd and g must be equally long")

    def __len__(self) -> int:
        return self.gt.shape[0]

    def subset(self, mask) -> "EvalRecords":
        return EvalRecords(self.gt[mask], self.pd[mask], self.g[mask])

    def for_predicted(self, pd_class: int) -> "EvalRecords":
        return self.subset(self.pd == pd_class)


def build_records(preds, g, table: ClassTable) -> EvalRecords:
    """Records from a prediction set and one method's trust values.

    IGNORE ground truth is dropped; the predicted class is the argmax of the
    pass-mean probabilities mapped through the table's ID class ids.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != preds.n:
        raise ValueError("trust vector must align with the prediction set")
    id_ids = np.asarray(table.id_class_ids)
    pd_class = id_ids[preds.pred_columns()]
    keep = preds.gt != IGNORE
    return EvalRecords(preds.gt[keep], pd_class[keep], g[keep])


def decide(g: float, delta: float) -> int:
    """Threshold rule: 0 (reject) if g <= delta, else 1 (accept)."""
    return 0 if g <= delta else 1


def task_records(records: EvalRecords, spec: TaskSpec) -> EvalRecords:
    """Restrict records to the task's universe (drops OOD ground truth for cw)."""
    universe = np.fromiter(spec.true_set | spec.false_set, dtype=np.int64)
    return records.subset(np.isin(records.gt, universe))


@dataclass(frozen=True)
class DetectionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def detection_counts(records: EvalRecords, spec: TaskSpec, delta: float) -> DetectionCounts:
    """Partition task records at a threshold; tp+tn+fp+fn == len(records)."""
    in_true = np.isin(records.gt, np.fromiter(spec.true_set, dtype=np.int64))
    accept = records.g > delta
    return DetectionCounts(
        tp=int((in_true & accept).sum()),
        tn=int((~in_true & ~accept).sum()),
        fp=int((~in_true & accept).sum()),
        fn=int((in_true & ~accept).sum()),
    )


def tpr_fpr(counts: DetectionCounts) -> tuple[float | None, float | None]:
    """True/false positive rates; None when the denominator is empty."""
    tpr = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    fpr = counts.fp / (counts.fp + counts.tn) if counts.fp + counts.tn else None
    return tpr, fpr


def roc_auroc(records: EvalRecords, spec: TaskSpec):
    """ROC curve over all distinct trust values plus endpoints, and its area.

    The trapezoidal area equals the Mann-Whitney statistic
    P(g_true > g_false) + 0.5 * P(g_true = g_false).  Absent (curve [], None)
    without at least one true-set and one false-set record.
    """
    in_true = np.isin(records.gt, np.fromiter(spec.true_set, dtype=np.int64))
    g_true = np.sort(records.g[in_true])
    g_false = np.sort(records.g[~in_true])
    if g_true.size == 0 or g_false.size == 0:
        return [], None
    thresholds = np.unique(np.concatenate([g_true, g_false]))[::-1]
    tp = g_true.size - np.searchsorted(g_true, thresholds, side="right")
    fp = g_false.size - np.searchsorted(g_false, thresholds, side="right")
    xs = np.concatenate([[0.0], fp / g_false.size, [1.0]])
    ys = np.concatenate([[0.0], tp / g_true.size, [1.0]])
    auroc = float(np.trapezoid(ys, xs))
    return list(zip(xs.tolist(), ys.tolist())), auroc


def auroc_pairwise(records: EvalRecords, spec: TaskSpec) -> float | None:
    """O(n^2) Mann-Whitney oracle with half credit for ties."""
    in_true = np.isin(records.gt, np.fromiter(spec.true_set, dtype=np.int64))
    g_true = records.g[in_true]
    g_false = records.g[~in_true]
    if g_true.size == 0 or g_false.size == 0:
        return None
    diff = g_true[:, None] - g_false[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(wins / (g_true.size * g_false.size))


@dataclass(frozen=True)
class TSDRow:
    gt_class: int
    band: str  # correct | wrong | ood


@dataclass
class TSDMatrix:
    """Per-predicted-class distribution of trust values by ground-truth class.

    Row order is the display band order: the matching (correct) class first,
    then the remaining ID classes, then OOD classes.  Each row sums to the
    confusion ratio p(r, c) of its ground-truth class.
    """

    pd_class: int
    edges: np.ndarray  # (n+1,)
    rows: tuple[TSDRow, ...]
    values: np.ndarray  # (R, n)

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)


def check_edges(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise BadEdges("need at least two edges")
    if edges[0] != 0.0 or edges[-1] != 1.0:
        raise BadEdges("edges must start at 0 and end at 1")
    if not (np.diff(edges) > 0).all():
        raise BadEdges("edges must be strictly increasing")
    return edges


def uniform_edges(n_bins: int = 10) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_bins + 1)


def tsd_matrix(
    records: EvalRecords,
    cm: ConfusionMatrix,
    edges,
    pd_class: int,
    table: ClassTable,
) -> TSDMatrix:
    """Bin the trust values of records predicted as pd_class, per ground truth.

    Bins are left-open intervals (edge_i, edge_{i+1}]; records with g exactly 0
    are assigned to the first bin so that each row's mass is conserved.
    """
    edges = check_edges(edges)
    n_bins = edges.size - 1
    recs = records.for_predicted(pd_class)

    ordered: list[TSDRow] = []
    id_ids = [c for c in table.id_class_ids]
    if pd_class in id_ids:
        ordered.append(TSDRow(pd_class, BAND_CORRECT))
    ordered.extend(TSDRow(c, BAND_WRONG) for c in id_ids if c != pd_class)
    ordered.extend(TSDRow(c, BAND_OOD) for c in sorted(table.ood_set))
    ordered = [row for row in ordered if cm.gt_total_of(row.gt_class) > 0]

    values = np.zeros((len(ordered), n_bins))
    for i, row in enumerate(ordered):
        g = recs.g[recs.gt == row.gt_class]
        if g.size == 0:
            continue
        idx = np.searchsorted(edges, g, side="left") - 1
        idx = np.clip(idx, 0, n_bins - 1)
        values[i] = np.bincount(idx, minlength=n_bins) / cm.gt_total_of(row.gt_class)
    return TSDMatrix(pd_class, edges, tuple(ordered), values)


def weighted_precision_at(
    records: EvalRecords,
    spec: TaskSpec,
    delta: float,
    cm: ConfusionMatrix,
):
    """Weighted precision at a threshold: per-ground-truth-class accept ratios.

    Returns (wtp, wfp, wpre) where wpre is None if no record clears delta.
    Records must already be restricted to one predicted class.
    """

    def _side(class_set) -> float:
        total = 0.0
        for r in sorted(class_set):
            n_r = cm.gt_total_of(r)
            if n_r == 0:
                continue
            total += float(((records.gt == r) & (records.g > delta)).sum()) / n_r
        return total

    wtp = _side(spec.true_set)
    wfp = _side(spec.false_set)
    wpre = wtp / (wtp + wfp) if wtp + wfp > 0 else None
    return wtp, wfp, wpre


@dataclass
class ThresholdRow:
    delta: float
    counts: DetectionCounts
    tpr: float | None
    fpr: float | None


@dataclass
class ClassTaskEval:
    pd_class: int
    task: str
    n_true: int
    n_false: int
    auroc: float | None
    curve: list
    thresholds: list[ThresholdRow]
    wpre_delta: float
    wtp: float
    wfp: float
    wpre: float | None


@dataclass
class EvalReport:
    method: str
    cm: ConfusionMatrix
    metrics: list[ClassMetricRow]
    evals: list[ClassTaskEval] = field(default_factory=list)
    tsd: dict[int, TSDMatrix] = field(default_factory=dict)
    edges: np.ndarray = field(default_factory=lambda: uniform_edges())


def build_report(
    records: EvalRecords,
    table: ClassTable,
    *,
    method: str = "conf",
    tasks=TASKS,
    edges=None,
    wpre_delta: float = 0.9,
) -> EvalReport:
    """Evaluate every requested task for every ID class, deterministically ordered."""
    edges = uniform_edges() if edges is None else check_edges(edges)
    cm = ConfusionMatrix(
        table.class_ids,
        table.id_class_ids,
        _counts_from_records(records, table),
    )
    report = EvalReport(method=method, cm=cm, metrics=class_metrics(cm), edges=edges)

    active_tasks = [t for t in TASKS if t in tasks]
    if not table.ood_set and "io" in active_tasks:
        active_tasks.remove("io")  # no false set to discriminate against

    for c in table.id_class_ids:
        recs_c = records.for_predicted(c)
        report.tsd[c] = tsd_matrix(records, cm, edges, c, table)
        for task in active_tasks:
            spec = make_task_spec(task, c, table)
            scoped = task_records(recs_c, spec)
            in_true = np.isin(scoped.gt, np.fromiter(spec.true_set, dtype=np.int64))
            curve, auroc = roc_auroc(scoped, spec)
            thresholds = []
            for delta in edges:
                counts = detection_counts(scoped, spec, float(delta))
                t, f = tpr_fpr(counts)
                thresholds.append(ThresholdRow(float(delta), counts, t, f))
            wtp, wfp, wpre = weighted_precision_at(scoped, spec, wpre_delta, cm)
            report.evals.append(
                ClassTaskEval(
                    pd_class=c,
                    task=task,
                    n_true=int(in_true.sum()),
                    n_false=int((~in_true).sum()),
                    auroc=auroc,
                    curve=curve,
                    thresholds=thresholds,
                    wpre_delta=wpre_delta,
                    wtp=wtp,
                    wfp=wfp,
                    wpre=wpre,
                )
            )
    return report


def _counts_from_records(records: EvalRecords, table: ClassTable) -> np.ndarray:
    gt_ids = np.asarray(table.class_ids)
    pd_ids = np.asarray(table.id_class_ids)
    row = np.searchsorted(gt_ids, records.gt)
    col = np.searchsorted(pd_ids, records.pd)
    flat = np.bincount(row * pd_ids.size + col, minlength=gt_ids.size * pd_ids.size)
    return flat.reshape(gt_ids.size, pd_ids.size)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_report(report: EvalReport, out_dir, table: ClassTable) -> Path:
    """Write the CSV bundle: auroc, per-task counts, wpre_at, TSD and ROC files."""
    import csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "auroc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "class", "task", "auroc", "n_true", "n_false"])
        for ev in report.evals:
            w.writerow(
                [ev.pd_class, table.name_of(ev.pd_class), ev.task, _fmt(ev.auroc),
                 ev.n_true, ev.n_false]
            )

    tasks = sorted({ev.task for ev in report.evals}, key=TASKS.index)
    for task in tasks:
        with open(out_dir / f"counts_{task}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "class", "delta", "tp", "tn", "fp", "fn", "tpr", "fpr"])
            for ev in report.evals:
                if ev.task != task:
                    continue
                for row in ev.thresholds:
                    w.writerow(
                        [ev.pd_class, table.name_of(ev.pd_class), _fmt(row.delta),
                         row.counts.tp, row.counts.tn, row.counts.fp, row.counts.fn,
                         _fmt(row.tpr), _fmt(row.fpr)]
                    )

    with open(out_dir / "wpre_at.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "class", "task", "delta", "wtp", "wfp", "wpre"])
        for ev in report.evals:
            w.writerow(
                [ev.pd_class, table.name_of(ev.pd_class), ev.task, _fmt(ev.wpre_delta),
                 _fmt(ev.wtp), _fmt(ev.wfp), _fmt(ev.wpre)]
            )

    n_bins = report.edges.size - 1
    for c, tsd in sorted(report.tsd.items()):
        with open(out_dir / f"tsd_{table.name_of(c)}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["gt_class", "band"]
                + [f"bin_{i}" for i in range(n_bins)]
                + ["row_sum"]
            )
            for row, vals in zip(tsd.rows, tsd.values):
                w.writerow(
                    [table.name_of(row.gt_class), row.band]
                    + [_fmt(float(v)) for v in vals]
                    + [_fmt(float(vals.sum()))]
                )

    for ev in report.evals:
        name = f"roc_{table.name_of(ev.pd_class)}_{ev.task}.csv"
        with open(out_dir / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            for x, y in ev.curve:
                w.writerow([_fmt(x), _fmt(y)])

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["class_id", "class", "scale_group", "task", "auroc", "wpre_at",
             "iou", "pre", "rec", "wpre", "eta", "present"]
        )
        by_class = {m.class_id: m for m in report.metrics}
        for ev in report.evals:
            m = by_class[ev.pd_class]
            w.writerow(
                [ev.pd_class, table.name_of(ev.pd_class),
                 table.scale_group_of(ev.pd_class), ev.task, _fmt(ev.auroc),
                 _fmt(ev.wpre), _fmt(m.iou), _fmt(m.pre), _fmt(m.rec),
                 _fmt(m.wpre), _fmt(m.eta), int(m.present)]
            )
    return out_dir
