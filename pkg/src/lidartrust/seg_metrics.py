"""Class-imbalance-aware segmentation metrics: confusion ratios, IoU/Pre/Rec,
weighted precision, wrong-prediction and be-confused vectors, and per-class
cross-entropy diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .lidar_io import PredictionSet
from .taxonomy import ClassTable, IGNORE

LOG_FLOOR = 1e-12  # probability floor inside logs; caps a single loss at ~27.6 nats


@dataclass(frozen=True)
class ConfusionMatrix:
    """Raw confusion counts plus ground-truth-normalized ratios p(r, c).

    Rows cover every class that can appear as ground truth (ID and OOD);
    columns cover prediction targets only.  Rows whose class never occurs as
    ground truth are absent: their ratio entries are NaN.
    """

    gt_class_ids: tuple[int, ...]
    pd_class_ids: tuple[int, ...]
    counts: np.ndarray  # (R, P) int64

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.counts.shape != (len(self.gt_class_ids), len(self.pd_class_ids)):
            raise ValueError("counts shape disagrees with the class id axes")

    @property
    def gt_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def pd_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def defined_rows(self) -> np.ndarray:
        return self.gt_totals > 0

    @property
    def ratios(self) -> np.ndarray:
        totals = self.gt_totals.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self.counts / totals[:, None]
        p[totals == 0] = np.nan
        return p

    def gt_row(self, class_id: int) -> int:
        return self.gt_class_ids.index(class_id)

    def pd_col(self, class_id: int) -> int:
        return self.pd_class_ids.index(class_id)

    def gt_total_of(self, class_id: int) -> int:
        return int(self.gt_totals[self.gt_row(class_id)])

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Associative accumulation of per-frame matrices."""
        if (self.gt_class_ids, self.pd_class_ids) != (other.gt_class_ids, other.pd_class_ids):
            raise ValueError("cannot merge confusion matrices over different class sets")
        return ConfusionMatrix(self.gt_class_ids, self.pd_class_ids, self.counts + other.counts)


def confusion_matrix(gt, pd, table: ClassTable) -> ConfusionMatrix:
    """Count (ground truth, prediction) pairs; IGNORE ground truth is skipped.

    Predictions must be in-distribution classes; ground truth may additionally
    contain OOD classes.
    """
    gt = np.asarray(gt, dtype=np.int64)
    pd = np.asarray(pd, dtype=np.int64)
    if gt.shape != pd.shape:
        raise LengthMismatch(pd.shape[0] if pd.ndim else 0, gt.shape[0] if gt.ndim else 0)
    keep = gt != IGNORE
    gt, pd = gt[keep], pd[keep]

    gt_ids = table.class_ids
    pd_ids = table.id_class_ids
    if gt.size:
        if not np.isin(gt, gt_ids).all():
            raise ValueError("ground truth contains ids outside the class table")
        if not np.isin(pd, pd_ids).all():
            raise ValueError("predictions must be in-distribution class ids")
    row = np.searchsorted(gt_ids, gt)
    col = np.searchsorted(pd_ids, pd)
    flat = np.bincount(row * len(pd_ids) + col, minlength=len(gt_ids) * len(pd_ids))
    return ConfusionMatrix(gt_ids, pd_ids, flat.reshape(len(gt_ids), len(pd_ids)))


@dataclass(frozen=True)
class ClassMetricRow:
    """Per-class metric record; None marks a value with an empty denominator."""

    class_id: int
    present: bool  # predicted at least once
    iou: float | None
    pre: float | None
    rec: float | None
    wpre: float | None
    not_pre: float | None
    not_wpre: float | None
    eta: float | None


def class_metrics(cm: ConfusionMatrix) -> list[ClassMetricRow]:
    """IoU / Pre / Rec from raw counts and wPre from column-normalized ratios."""
    ratios = cm.ratios
    defined = cm.defined_rows
    rows = []
    for c in cm.pd_class_ids:
        col = cm.pd_col(c)
        r = cm.gt_row(c)
        tp = int(cm.counts[r, col])
        n_gt = int(cm.gt_totals[r])
        n_pd = int(cm.pd_totals[col])
        union = n_gt + n_pd - tp
        eta = float(ratios[defined, col].sum()) if defined.any() else 0.0
        diag_ratio = float(ratios[r, col]) if defined[r] else 0.0

        pre = tp / n_pd if n_pd else None
        rec = tp / n_gt if n_gt else None
        iou = tp / union if union else None
        wpre = diag_ratio / eta if eta > 0 else None
        rows.append(
            ClassMetricRow(
                class_id=c,
                present=n_pd > 0,
                iou=iou,
                pre=pre,
                rec=rec,
                wpre=wpre,
                not_pre=1.0 - pre if pre is not None else None,
                not_wpre=1.0 - wpre if wpre is not None else None,
                eta=eta if eta > 0 else None,
            )
        )
    return rows


def wpr_bcr(cm: ConfusionMatrix):
    """Off-diagonal confusion ratios as row vectors (how ground truth class r
    leaks into other predictions) and column vectors (how prediction c absorbs
    other classes)."""
    ratios = cm.ratios
    wpr: dict[int, dict[int, float]] = {}
    for r_id in cm.gt_class_ids:
        r = cm.gt_row(r_id)
        if not cm.defined_rows[r]:
            continue
        wpr[r_id] = {
            c_id: float(ratios[r, cm.pd_col(c_id)])
            for c_id in cm.pd_class_ids
            if c_id != r_id
        }
    bcr: dict[int, dict[int, float]] = {}
    for c_id in cm.pd_class_ids:
        col = cm.pd_col(c_id)
        bcr[c_id] = {
            r_id: float(ratios[cm.gt_row(r_id), col])
            for r_id in cm.gt_class_ids
            if r_id != c_id and cm.defined_rows[cm.gt_row(r_id)]
        }
    return wpr, bcr


def _gt_to_columns(preds: PredictionSet, table: ClassTable | None) -> np.ndarray:
    """Map ground-truth class ids to probability column indices (-1 = none)."""
    if table is None:
        cols = np.where((preds.gt >= 0) & (preds.gt < preds.c), preds.gt, -1)
        return cols
    id_ids = np.asarray(table.id_class_ids)
    cols = np.full(preds.n, -1, dtype=np.int64)
    hit = np.isin(preds.gt, id_ids)
    cols[hit] = np.searchsorted(id_ids, preds.gt[hit])
    return cols


def per_class_nll(preds: PredictionSet, table: ClassTable | None = None) -> dict[int, float | None]:
    """Mean negative log pass-mean probability of the true class, per class.

    Classes without ground-truth points are absent (None).  Only classes with
    a probability column (in-distribution) are reported.
    """
    mean_p = preds.mean_probs()
    cols = _gt_to_columns(preds, table)
    class_ids = table.id_class_ids if table is not None else tuple(range(preds.c))
    out: dict[int, float | None] = {}
    for j, cid in enumerate(class_ids):
        sel = cols == j
        if not sel.any():
            out[cid] = None
            continue
        p = np.maximum(mean_p[sel, j], LOG_FLOOR)
        out[cid] = float(-np.log(p).mean())
    return out


def weighted_ce(preds: PredictionSet, weights, table: ClassTable | None = None) -> float:
    """Class-weighted mean negative log-likelihood over all scored points.

    Reproduces a weighted training objective on stored predictions; returns
    0.0 when no point has a scorable ground truth.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != preds.c:
        raise ValueError("need one weight per probability column")
    mean_p = preds.mean_probs()
    cols = _gt_to_columns(preds, table)
    sel = cols >= 0
    n = int(sel.sum())
    if n == 0:
        return 0.0
    j = cols[sel]
    p = np.maximum(mean_p[sel, j], LOG_FLOOR)
    return float(-(weights[j] * np.log(p)).sum() / n)
