"""Bit-exact readers and writers for LiDAR frames, label files, the prediction
container, and dataset manifests.

File formats (all little-endian, independent of host byte order):

* point file ``.bin``    -- N x 4 float32: x, y, z, intensity
* label file ``.label``  -- N x uint32: low 16 bits semantic label, high 16 bits
  instance id
* prediction ``.levk``   -- magic ``LEVK`` | version u16 | flags u16 (bit0
  logits, bit1 features) | N u64 | M u16 | C u16 | D u16 | pad u16, then per
  point: gt u32, M*C float32 probabilities, [M*C float32 logits], [D float32
  feature].  gt stores merged class ids; 0xFFFFFFFF encodes an ignored point.
* manifest ``.csv``      -- columns frame_id, points, labels, predictions
  (paths relative to the manifest's directory unless absolute).
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    HeaderInconsistent,
    LengthMismatch,
    NonFiniteValue,
    ProbabilityNotNormalized,
    TruncatedFile,
)
from .taxonomy import IGNORE

POINT_RECORD_BYTES = 16
LEVK_MAGIC = b"LEVK"
LEVK_VERSION = 1
FLAG_LOGITS = 0x1
FLAG_FEATURES = 0x2
_GT_IGNORE_WORD = 0xFFFFFFFF

# probability-sum repair bands (float32 payload, sums taken in float64)
PROB_EXACT_TOL = 1e-6
PROB_SILENT_TOL = 1e-4
PROB_ERROR_TOL = 1e-2


@dataclass
class PointFrame:
    """One LiDAR sweep in sensor coordinates; the sensor origin is (0,0,0)."""

    points: np.ndarray  # (N, 4) float32: x, y, z, intensity
    frame_id: str = ""

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 4:
            raise ValueError("points must have shape (N, 4)")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass
class LabelFrame:
    """Per-point raw semantic labels and instance ids of one sweep."""

    labels: np.ndarray  # (N,) int32 raw semantic labels, 0..65535
    instance_ids: np.ndarray  # (N,) int32, 0..65535

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.instance_ids = np.ascontiguousarray(self.instance_ids, dtype=np.int32)
        if self.labels.shape != self.instance_ids.shape or self.labels.ndim != 1:
            raise ValueError("labels and instance_ids must be 1-D and equally long")

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass
class PredictionSet:
    """Per-point ground truth and M probability passes over C classes.

    ``gt`` holds merged class ids (IGNORE = -1 for skipped points); the
    probability columns correspond to the in-distribution classes in
    ascending id order.  The predicted label is derived, never stored.
    """

    gt: np.ndarray  # (N,) int32
    probs: np.ndarray  # (N, M, C) float32
    logits: np.ndarray | None = None  # (N, M, C) float32
    features: np.ndarray | None = None  # (N, D) float32

    def __post_init__(self):
        self.gt = np.ascontiguousarray(self.gt, dtype=np.int32)
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 3:
            raise ValueError("probs must have shape (N, M, C)")
        if self.gt.shape[0] != self.probs.shape[0]:
            raise ValueError("gt and probs disagree on N")
        if self.logits is not None:
            self.logits = np.ascontiguousarray(self.logits, dtype=np.float32)
            if self.logits.shape != self.probs.shape:
                raise ValueError("logits must match probs in shape")
        if self.features is not None:
            self.features = np.ascontiguousarray(self.features, dtype=np.float32)
            if self.features.ndim != 2 or self.features.shape[0] != self.probs.shape[0]:
                raise ValueError("features must have shape (N, D)")

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def m(self) -> int:
        return self.probs.shape[1]

    @property
    def c(self) -> int:
        return self.probs.shape[2]

    @property
    def d(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def mean_probs(self) -> np.ndarray:
        """Pass-mean probability vectors, float64, shape (N, C)."""
        return self.probs.astype(np.float64).mean(axis=1)

    def pred_columns(self) -> np.ndarray:
        """argmax column of the pass-mean probabilities, shape (N,)."""
        return np.argmax(self.mean_probs(), axis=1)


def read_point_frame(path, frame_id: str | None = None) -> PointFrame:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % POINT_RECORD_BYTES != 0:
        raise TruncatedFile(path, f"size {len(raw)} is not a multiple of {POINT_RECORD_BYTES}")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    finite = np.isfinite(pts)
    if not finite.all():
        raise NonFiniteValue(int(np.argmin(finite.all(axis=1))))
    return PointFrame(pts.copy(), frame_id=frame_id or path.stem)


def write_point_frame(frame: PointFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(frame.points.astype("<f4").tobytes())
    return path


def read_label_frame(path, n_expected: int) -> LabelFrame:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % 4 != 0 or len(raw) // 4 != n_expected:
        raise LengthMismatch(len(raw) // 4, n_expected)
    words = np.frombuffer(raw, dtype="<u4")
    return LabelFrame(
        labels=(words & 0xFFFF).astype(np.int32),
        instance_ids=(words >> 16).astype(np.int32),
    )


def write_label_frame(labels: LabelFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    words = (
        (labels.labels.astype(np.uint32) & 0xFFFF)
        | ((labels.instance_ids.astype(np.uint32) & 0xFFFF) << 16)
    ).astype("<u4")
    path.write_bytes(words.tobytes())
    return path


def write_frame_pair(frame: PointFrame, labels: LabelFrame, out_dir) -> tuple[Path, Path]:
    """Write a point/label file pair named after the frame id."""
    if frame.n != labels.n:
        raise ValueError(f"frame has {frame.n} points but labels has {labels.n}")
    out_dir = Path(out_dir)
    bin_path = write_point_frame(frame, out_dir / f"{frame.frame_id}.bin")
    label_path = write_label_frame(labels, out_dir / f"{frame.frame_id}.label")
    return bin_path, label_path


def _repair_probs(probs: np.ndarray) -> np.ndarray:
    """Renormalize near-valid probability vectors in place; reject bad ones.

    Vectors whose float64 sum is within PROB_EXACT_TOL of 1 are left
    bit-identical (write/read round trips stay exact).  Larger deviations are
    renormalized, silently up to PROB_SILENT_TOL, with a warning up to
    PROB_ERROR_TOL, and rejected beyond that.
    """
    if (probs < 0).any():
        bad = int(np.argwhere((probs < 0).any(axis=(1, 2)))[0][0])
        raise ProbabilityNotNormalized(bad, float(probs.reshape(probs.shape[0], -1)[bad].min()))
    sums = probs.astype(np.float64).sum(axis=2)
    dev = np.abs(sums - 1.0)
    worst = dev.max(initial=0.0)
    if worst > PROB_ERROR_TOL:
        idx = int(np.argmax(dev.max(axis=1) > PROB_ERROR_TOL))
        raise ProbabilityNotNormalized(idx, float(sums[idx, np.argmax(dev[idx])]))
    need = dev > PROB_EXACT_TOL
    if need.any():
        if worst > PROB_SILENT_TOL:
            warnings.warn(
                f"renormalizing probability vectors off by up to {worst:.2e}", stacklevel=3
            )
        fixed = probs.astype(np.float64)
        fixed[need] /= sums[need][:, None]
        probs = np.where(need[:, :, None], fixed.astype(np.float32), probs)
    return probs


def read_prediction_set(path) -> PredictionSet:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 24:
        raise TruncatedFile(path, "shorter than the fixed header")
    if raw[:4] != LEVK_MAGIC:
        raise BadMagic(f"{path}: expected {LEVK_MAGIC!r}, got {raw[:4]!r}")
    version, flags, n, m, c, d, _pad = struct.unpack("<HHQHHHH", raw[4:24])
    if version != LEVK_VERSION:
        raise HeaderInconsistent(f"unsupported version {version}")
    if flags & ~(FLAG_LOGITS | FLAG_FEATURES):
        raise HeaderInconsistent(f"unknown flag bits 0x{flags:04x}")
    if m < 1 or c < 2:
        raise HeaderInconsistent(f"need M >= 1 and C >= 2, got M={m} C={c}")
    has_logits = bool(flags & FLAG_LOGITS)
    has_features = bool(flags & FLAG_FEATURES)
    if has_features and d == 0:
        raise HeaderInconsistent("feature flag set but D = 0")
    if not has_features and d != 0:
        raise HeaderInconsistent("D > 0 but feature flag unset")
    fields = [("gt", "<u4"), ("probs", "<f4", (m, c))]
    if has_logits:
        fields.append(("logits", "<f4", (m, c)))
    if has_features:
        fields.append(("feature", "<f4", (d,)))
    record = np.dtype(fields)
    if len(raw) - 24 != n * record.itemsize:
        raise HeaderInconsistent(
            f"payload is {len(raw) - 24} bytes, header implies {n * record.itemsize}"
        )
    body = np.frombuffer(raw, dtype=record, count=n, offset=24)
    gt_words = body["gt"]
    gt = np.where(gt_words == _GT_IGNORE_WORD, IGNORE, gt_words.astype(np.int64)).astype(np.int32)
    probs = _repair_probs(np.array(body["probs"]))
    return PredictionSet(
        gt=gt,
        probs=probs,
        logits=np.array(body["logits"]) if has_logits else None,
        features=np.array(body["feature"]) if has_features else None,
    )


def write_prediction_set(preds: PredictionSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flags = (FLAG_LOGITS if preds.logits is not None else 0) | (
        FLAG_FEATURES if preds.features is not None else 0
    )
    header = LEVK_MAGIC + struct.pack(
        "<HHQHHHH", LEVK_VERSION, flags, preds.n, preds.m, preds.c, preds.d, 0
    )
    fields = [("gt", "<u4"), ("probs", "<f4", (preds.m, preds.c))]
    if preds.logits is not None:
        fields.append(("logits", "<f4", (preds.m, preds.c)))
    if preds.features is not None:
        fields.append(("feature", "<f4", (preds.d,)))
    body = np.zeros(preds.n, dtype=np.dtype(fields))
    body["gt"] = np.where(preds.gt == IGNORE, _GT_IGNORE_WORD, preds.gt).astype("<u4")
    body["probs"] = preds.probs
    if preds.logits is not None:
        body["logits"] = preds.logits
    if preds.features is not None:
        body["feature"] = preds.features
    path.write_bytes(header + body.tobytes())
    return path


def read_prediction_csv(path) -> PredictionSet:
    """Text fallback importer for small fixtures.

    Header columns: ``gt``, ``p<m>_<c>`` probabilities, optional ``l<m>_<c>``
    logits and ``f<d>`` features, e.g. ``gt,p0_0,p0_1,l0_0,l0_1,f0``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    cols = {name: i for i, name in enumerate(header)}
    if "gt" not in cols:
        raise HeaderInconsistent("prediction CSV needs a gt column")

    def _grid(prefix):
        keys = [k for k in header if k.startswith(prefix) and "_" in k]
        if not keys:
            return None
        pairs = [tuple(int(p) for p in k[len(prefix):].split("_")) for k in keys]
        m = max(p[0] for p in pairs) + 1
        c = max(p[1] for p in pairs) + 1
        if len(keys) != m * c:
            raise HeaderInconsistent(f"{prefix}* columns do not form a full M x C grid")
        out = np.zeros((len(rows), m, c), dtype=np.float32)
        for k, (mi, ci) in zip(keys, pairs):
            out[:, mi, ci] = [row[cols[k]] for row in rows]
        return out

    probs = _grid("p")
    if probs is None:
        raise HeaderInconsistent("prediction CSV needs p<m>_<c> columns")
    logits = _grid("l")
    feat_keys = sorted((k for k in header if k.startswith("f") and k[1:].isdigit()),
                       key=lambda k: int(k[1:]))
    features = None
    if feat_keys:
        features = np.array(
            [[row[cols[k]] for k in feat_keys] for row in rows], dtype=np.float32
        )
    gt = np.array([int(row[cols["gt"]]) for row in rows], dtype=np.int32)
    return PredictionSet(gt=gt, probs=_repair_probs(probs), logits=logits, features=features)


@dataclass(frozen=True)
class FrameEntry:
    frame_id: str
    points: Path
    labels: Path
    predictions: Path | None = None


def read_manifest(path) -> list[FrameEntry]:
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            def _resolve(cell):
                if not cell:
                    return None
                p = Path(cell)
                return p if p.is_absolute() else base / p
            entries.append(
                FrameEntry(
                    frame_id=row["frame_id"],
                    points=_resolve(row["points"]),
                    labels=_resolve(row["labels"]),
                    predictions=_resolve(row.get("predictions", "")),
                )
            )
    return entries


def write_manifest(entries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def _rel(p):
        if p is None:
            return ""
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "points", "labels", "predictions"])
        for e in entries:
            writer.writerow([e.frame_id, _rel(e.points), _rel(e.labels), _rel(e.predictions)])
    return path
