"""Evaluation: accuracy, one-vs-all equal error rate, confusion matrices,
penultimate-feature export, and scoring of external prediction files.

The EER estimator sweeps the sorted union of scores (plus sentinels beyond
the range): FAR(t) = fraction of negatives >= t, FRR(t) = fraction of
positives < t. Both are step functions of t; the crossing is located on the
first segment where FRR - FAR changes sign and resolved by linear
interpolation between the two adjacent operating points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataIntegrityError


@dataclass
class ScoreSet:
    probs: np.ndarray          # (n, C) class probabilities
    labels: np.ndarray         # (n,) integer labels
    class_names: list[str]

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, c = self.probs.shape
        if c != len(self.class_names):
            raise ContractError(f"{c} probability columns vs {len(self.class_names)} class names")
        if self.labels.shape != (n,):
            raise ContractError(f"labels shape {self.labels.shape} does not match {n} rows")
        if n and (self.labels.min() < 0 or self.labels.max() >= c):
            raise ContractError(f"labels outside [0, {c})")
        if n:
            sums = self.probs.sum(axis=1)
            worst = float(np.abs(sums - 1.0).max())
            if worst > 1e-4:
                raise ContractError(f"probability rows must sum to 1 within 1e-4 (worst {worst:.2e})")

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


@dataclass
class EvalReport:
    accuracy: float
    per_class_eer: list[float]       # NaN for classes without support
    mean_eer: float
    confusion: np.ndarray            # (C, C) ints, rows = true class
    undefined_classes: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_eer": [None if np.isnan(v) else float(v) for v in self.per_class_eer],
            "mean_eer": self.mean_eer,
            "confusion": self.confusion.tolist(),
            "undefined_classes": list(self.undefined_classes),
        }


def accuracy(scores: ScoreSet) -> float:
    """Fraction of argmax-correct rows; ties resolve to the lowest class index."""
    if scores.n == 0:
        raise ContractError("accuracy of an empty score set")
    pred = np.argmax(scores.probs, axis=1)
    return float(np.mean(pred == scores.labels))


def binary_eer(pos_scores, neg_scores) -> tuple[float, float]:
    """Equal error rate and crossing threshold for one binary split."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ContractError("binary_eer needs non-empty positive and negative scores")
    cands = np.unique(np.concatenate([pos, neg]))
    lo = cands[0] - 1.0
    hi = cands[-1] + 1.0
    ts = np.concatenate([[lo], cands, [hi]])
    # FAR: neg >= t; FRR: pos < t, both via searchsorted on sorted copies
    neg_sorted = np.sort(neg)
    pos_sorted = np.sort(pos)
    far = 1.0 - np.searchsorted(neg_sorted, ts, side="left") / neg.size
    frr = np.searchsorted(pos_sorted, ts, side="left") / pos.size
    diff = frr - far  # nondecreasing in t
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        return float(far[k]), float(ts[k])
    d0, d1 = diff[k - 1], diff[k]
    u = -d0 / (d1 - d0)
    eer = far[k - 1] + u * (far[k] - far[k - 1])
    thr = ts[k - 1] + u * (ts[k] - ts[k - 1])
    return float(eer), float(thr)


@dataclass
class OneVsAllResult:
    per_class: list[float]
    mean: float
    undefined: list[int]


def one_vs_all_eer(scores: ScoreSet) -> OneVsAllResult:
    """Per-class EER with each class's own probability column as the score.

    Classes lacking positives or negatives are reported NaN and excluded from
    the unweighted mean.
    """
    per_class: list[float] = []
    undefined: list[int] = []
    for c in range(scores.n_classes):
        mask = scores.labels == c
        pos = scores.probs[mask, c]
        neg = scores.probs[~mask, c]
        if pos.size == 0 or neg.size == 0:
            per_class.append(float("nan"))
            undefined.append(c)
            continue
        eer, _ = binary_eer(pos, neg)
        per_class.append(eer)
    defined = [v for v in per_class if not np.isnan(v)]
    if not defined:
        raise ContractError("one_vs_all_eer: no class has both positives and negatives")
    return OneVsAllResult(per_class, float(np.mean(defined)), undefined)


def confusion_matrix(scores: ScoreSet) -> np.ndarray:
    if scores.n == 0:
        raise ContractError("confusion matrix of an empty score set")
    c = scores.n_classes
    pred = np.argmax(scores.probs, axis=1)
    mat = np.zeros((c, c), dtype=np.int64)
    np.add.at(mat, (scores.labels, pred), 1)
    return mat


def evaluate(scores: ScoreSet) -> EvalReport:
    ova = one_vs_all_eer(scores)
    return EvalReport(
        accuracy=accuracy(scores),
        per_class_eer=ova.per_class,
        mean_eer=ova.mean,
        confusion=confusion_matrix(scores),
        undefined_classes=ova.undefined,
    )


# ---------------------------------------------------------------------------
# feature export and external prediction files


def _fmt(v: float) -> str:
    return repr(float(v))


def export_embeddings(model, views: list[np.ndarray], labels, sample_ids, path) -> None:
    """Write penultimate-layer features as CSV: sample_id, label, f0..fK."""
    if model.mode != "eval":
        raise ContractError("export_embeddings requires a frozen eval-mode model")
    tensors = [ad.Tensor(v) for v in views]
    pen = model.forward(tensors).penultimate.data
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "label"] + [f"f{i}" for i in range(pen.shape[1])])
            for sid, lab, row in zip(sample_ids, labels, pen):
                writer.writerow([sid, int(lab)] + [_fmt(v) for v in row])
    except OSError as exc:
        raise DataIntegrityError(f"cannot write embeddings to {path}: {exc}") from exc


def read_prediction_csv(path, class_names: list[str]) -> ScoreSet:
    """Score an external system: CSV of sample_id, label, then C probability columns."""
    c = len(class_names)
    labels, rows = [], []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) != c + 2:
                raise DataIntegrityError(
                    f"{path}: expected header with sample_id, label and {c} probability columns")
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != c + 2:
                    raise DataIntegrityError(f"{path}:{lineno}: expected {c + 2} fields, got {len(rec)}")
                try:
                    labels.append(int(rec[1]))
                    rows.append([float(v) for v in rec[2:]])
                except ValueError as exc:
                    raise DataIntegrityError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise DataIntegrityError(f"cannot read predictions from {path}: {exc}") from exc
    try:
        return ScoreSet(np.array(rows, dtype=np.float64), np.array(labels), class_names)
    except ContractError as exc:
        raise DataIntegrityError(f"{path}: {exc}") from exc
