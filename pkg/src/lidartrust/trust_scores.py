"""Trust scores over prediction sets: softmax confidence, data/model
uncertainty, temperature-scaled confidence, and feature-space Mahalanobis
distance, plus normalization of each raw score to a common trust value
g in [0, 1] (high = trusted)."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import xlogy

from .errors import FeaturesAbsent, InsufficientSamples, LogitsAbsent, SingularCovariance
from .taxonomy import ClassTable, IGNORE

METHODS = ("conf", "du", "mu", "temp", "md")

# methods whose raw score decreases as trust increases
DESCENDING = frozenset({"du", "mu", "md"})

DEFAULT_TEMPERATURE = 1000.0
MAHA_MAGIC = b"MAHA"
MAHA_VERSION = 1


def _as_passes(arr) -> np.ndarray:
    """Coerce (M, C) or (N, M, C) input to (N, M, C) float64."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError("expected an (N, M, C) or (M, C) array")
    return a


def _entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with 0*log(0) = 0."""
    return -xlogy(p, p).sum(axis=-1)


def softmax_confidence(prob_passes) -> np.ndarray:
    """Largest pass-mean class probability, in [1/C, 1]."""
    p = _as_passes(prob_passes)
    return p.mean(axis=1).max(axis=1)


def data_uncertainty(prob_passes) -> np.ndarray:
    """Mean per-pass prediction entropy (nats)."""
    p = _as_passes(prob_passes)
    return _entropy(p).mean(axis=1)


def model_uncertainty(prob_passes) -> np.ndarray:
    """Mutual information between the prediction and the model draw (nats).

    Computed as H(pass mean) - mean per-pass entropy; tiny negative rounding
    residue is clamped to 0.
    """
    p = _as_passes(prob_passes)
    mi = _entropy(p.mean(axis=1)) - _entropy(p).mean(axis=1)
    return np.maximum(mi, 0.0)


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def odin_score(logit_passes, temperature: float) -> np.ndarray:
    """Largest temperature-scaled softmax probability.

    The temperature softmax is applied per pass and averaged, so at T=1 the
    score coincides exactly with softmax_confidence of the per-pass softmax
    probabilities.
    """
    if logit_passes is None:
        raise LogitsAbsent("temperature scaling needs logits in the prediction set")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = _as_passes(logit_passes)
    return softmax(z / temperature).mean(axis=1).max(axis=1)


@dataclass(frozen=True)
class MahalanobisModel:
    """Per-class feature means with a tied, shrinkage-stabilized covariance."""

    class_ids: tuple[int, ...]
    means: np.ndarray  # (K, D) float64
    covariance: np.ndarray  # (D, D) float64, after shrinkage
    cholesky: np.ndarray  # (D, D) lower-triangular factor of covariance
    shrinkage: float
    md_tau: float  # median training distance, used for normalization

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_parameters(cls, means, covariance, class_ids=None, md_tau: float = 1.0):
        means = np.asarray(means, dtype=np.float64)
        cov = np.asarray(covariance, dtype=np.float64)
        if class_ids is None:
            class_ids = tuple(range(means.shape[0]))
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance(str(exc)) from exc
        return cls(tuple(class_ids), means, cov, chol, 0.0, float(md_tau))


def fit_mahalanobis(
    features,
    gt,
    table: ClassTable | None = None,
    *,
    shrinkage: float = 1e-6,
) -> MahalanobisModel:
    """Fit class means and a pooled within-class covariance on training features.

    Classes with fewer than D+1 samples are excluded with a warning.  The
    covariance receives shrinkage * (trace/D) * I before factorization, and
    the median training distance is stored for trust normalization.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(gt, dtype=np.int64)
    if f.ndim != 2 or f.shape[0] != y.shape[0]:
        raise ValueError("features must be (N, D) aligned with gt")
    d = f.shape[1]
    if d < 1:
        raise ValueError("need at least one feature dimension")
    if table is not None:
        candidates = [c for c in table.id_class_ids]
    else:
        candidates = sorted(int(v) for v in np.unique(y) if v != IGNORE)

    kept_ids, kept_means = [], []
    scatter = np.zeros((d, d))
    n_used = 0
    for cid in candidates:
        rows = f[y == cid]
        if rows.shape[0] < d + 1:
            warnings.warn(
                f"class {cid} has {rows.shape[0]} samples (< D+1 = {d + 1}); excluded",
                stacklevel=2,
            )
            continue
        mu = rows.mean(axis=0)
        centered = rows - mu
        scatter += centered.T @ centered
        n_used += rows.shape[0]
        kept_ids.append(cid)
        kept_means.append(mu)
    if not kept_ids:
        raise InsufficientSamples("every class fell below the D+1 sample floor")

    cov = scatter / n_used
    cov = (cov + cov.T) / 2.0
    cov = cov + shrinkage * (np.trace(cov) / d) * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance not positive-definite after shrinkage") from exc

    model = MahalanobisModel(
        class_ids=tuple(kept_ids),
        means=np.vstack(kept_means),
        covariance=cov,
        cholesky=chol,
        shrinkage=shrinkage,
        md_tau=1.0,
    )
    tau = float(np.median(mahalanobis_distance(model, f)))
    return MahalanobisModel(
        model.class_ids, model.means, model.covariance, model.cholesky, shrinkage, tau
    )


def mahalanobis_distance(model: MahalanobisModel, features) -> np.ndarray:
    """Smallest squared Mahalanobis distance to any class mean."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    # solve L y = (f - mu_c)^T per class; md_c = |y|^2
    dists = np.empty((f.shape[0], model.means.shape[0]))
    for k, mu in enumerate(model.means):
        y = solve_triangular(model.cholesky, (f - mu).T, lower=True)
        dists[:, k] = (y * y).sum(axis=0)
    out = dists.min(axis=1)
    return out if np.asarray(features).ndim == 2 else out[0]


def save_mahalanobis(model: MahalanobisModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k, d = model.means.shape
    header = MAHA_MAGIC + struct.pack(
        "<HHIIdd", MAHA_VERSION, 0, k, d, model.shrinkage, model.md_tau
    )
    ids = np.asarray(model.class_ids, dtype="<u4").tobytes()
    body = model.means.astype("<f8").tobytes() + model.covariance.astype("<f8").tobytes()
    path.write_bytes(header + ids + body)
    return path


def load_mahalanobis(path) -> MahalanobisModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAHA_MAGIC:
        raise SingularCovariance(f"{path} is not a feature-space model file")
    version, _pad, k, d, shrink, tau = struct.unpack("<HHIIdd", raw[4:32])
    if version != MAHA_VERSION:
        raise SingularCovariance(f"unsupported model version {version}")
    off = 32
    ids = tuple(int(v) for v in np.frombuffer(raw, dtype="<u4", count=k, offset=off))
    off += 4 * k
    means = np.frombuffer(raw, dtype="<f8", count=k * d, offset=off).reshape(k, d).copy()
    off += 8 * k * d
    cov = np.frombuffer(raw, dtype="<f8", count=d * d, offset=off).reshape(d, d).copy()
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("stored covariance is not positive-definite") from exc
    return MahalanobisModel(ids, means, cov, chol, shrink, tau)


def normalize_trust(
    raw,
    method: str,
    *,
    n_classes: int | None = None,
    md_tau: float | None = None,
) -> np.ndarray:
    """Map a raw method score to the common trust orientation g in [0, 1].

    conf/temp are already trusts; entropy-based scores map through
    1 - u/ln(C); distances map through exp(-md/tau).  Every map is strictly
    monotone over the score's support, so rank statistics are preserved.
    """
    r = np.asarray(raw, dtype=np.float64)
    if method in ("conf", "temp"):
        return r
    if method in ("du", "mu"):
        if not n_classes or n_classes < 2:
            raise ValueError("entropy normalization needs the class count")
        return np.clip(1.0 - r / np.log(n_classes), 0.0, 1.0)
    if method == "md":
        if md_tau is None or md_tau <= 0:
            raise ValueError("distance normalization needs a positive tau")
        return np.exp(-r / md_tau)
    raise ValueError(f"unknown method {method!r}")


def score_prediction_set(
    preds,
    methods,
    *,
    temperature: float = DEFAULT_TEMPERATURE,
    model: MahalanobisModel | None = None,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Compute (raw, g) per requested method for every point of a prediction set."""
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for method in methods:
        if method == "conf":
            raw = softmax_confidence(preds.probs)
        elif method == "du":
            raw = data_uncertainty(preds.probs)
        elif method == "mu":
            raw = model_uncertainty(preds.probs)
        elif method == "temp":
            if preds.logits is None:
                raise LogitsAbsent("prediction set was written without logits")
            raw = odin_score(preds.logits, temperature)
        elif method == "md":
            if preds.features is None:
                raise FeaturesAbsent("prediction set was written without features")
            if model is None:
                raise ValueError("md scoring needs a fitted MahalanobisModel")
            raw = mahalanobis_distance(model, preds.features)
        else:
            raise ValueError(f"unknown method {method!r}")
        g = normalize_trust(
            raw,
            method,
            n_classes=preds.c,
            md_tau=model.md_tau if model is not None else None,
        )
        out[method] = (raw, g)
    return out
