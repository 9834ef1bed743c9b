"""Multi-label evaluation metrics.

Covers ranking AP/mAP, the macro (per-class) and micro (pooled) P/R/F1
sextet with their top-k variants, label-based mean accuracy, and the
instance-based accuracy/precision/recall/F1 quartet. All values are
fractions in [0, 1]; display code multiplies by 100.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _validate_pair(scores, targets, binary_scores=False):
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise ValidationError(
            f"scores {scores.shape} and targets {targets.shape} must be equal 2-D shapes"
        )
    if not np.all((targets == 0) | (targets == 1)):
        raise ValidationError("targets must be binary")
    if binary_scores and not np.all((scores == 0) | (scores == 1)):
        raise ValidationError("predictions must be binarized")
    return scores, targets


def binarize(scores, threshold: float = 0.5) -> np.ndarray:
    """Thresholded decisions; ties at the threshold predict positive."""
    return (np.asarray(scores, dtype=np.float64) >= threshold).astype(np.float64)


def topk_binarize(scores, k: int = 3) -> np.ndarray:
    """Predict exactly the k best-scoring labels per sample.

    Ties are broken toward the lower label index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValidationError(f"scores must be 2-D, got shape {scores.shape}")
    n, m = scores.shape
    if k > m:
        raise ValidationError(f"k={k} exceeds the number of labels {m}")
    out = np.zeros_like(scores)
    order = np.argsort(-scores, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    out[rows, order[:, :k]] = 1.0
    return out


def average_precision(scores, targets) -> float:
    """AP of one label's ranking: sum of precision-times-recall-increment.

    Samples are ranked by descending score with ties kept in original
    order. Equals the mean of precision evaluated at each positive.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if scores.shape != targets.shape:
        raise ValidationError("scores and targets must have equal length")
    if not np.all((targets == 0) | (targets == 1)):
        raise ValidationError("targets must be binary")
    n_pos = int(targets.sum())
    if n_pos == 0:
        raise ValidationError("average_precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    ranked = targets[order]
    hits = np.cumsum(ranked)
    prec = hits / np.arange(1, ranked.size + 1)
    rec = hits / n_pos
    rec_prev = np.concatenate([[0.0], rec[:-1]])
    return float(np.sum(prec * (rec - rec_prev)))


def mean_average_precision(scores, targets):
    """(mAP, per-label AP) with zero-positive labels excluded (NaN slot)."""
    scores, targets = _validate_pair(scores, targets)
    m = scores.shape[1]
    aps = np.full(m, np.nan)
    for j in range(m):
        if targets[:, j].sum() == 0:
            warnings.warn(f"label {j} has no positives; excluded from mAP", stacklevel=2)
            continue
        aps[j] = average_precision(scores[:, j], targets[:, j])
    included = aps[~np.isnan(aps)]
    if included.size == 0:
        raise ValidationError("no label has a positive sample; mAP undefined")
    return float(included.mean()), aps


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def macro_micro(preds, targets) -> dict:
    """CP/CR/CF1 (per-class averages) and OP/OR/OF1 (pooled counts).

    Zero-denominator per-label precision or recall contributes 0.
    """
    preds, targets = _validate_pair(preds, targets, binary_scores=True)
    tp = ((preds == 1) & (targets == 1)).sum(axis=0).astype(np.float64)
    fp = ((preds == 1) & (targets == 0)).sum(axis=0).astype(np.float64)
    fn = ((preds == 0) & (targets == 1)).sum(axis=0).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec_j = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        rec_j = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
    cp = float(prec_j.mean())
    cr = float(rec_j.mean())
    op = float(tp.sum() / (tp.sum() + fp.sum())) if (tp.sum() + fp.sum()) > 0 else 0.0
    orr = float(tp.sum() / (tp.sum() + fn.sum())) if (tp.sum() + fn.sum()) > 0 else 0.0
    return {"cp": cp, "cr": cr, "cf1": _f1(cp, cr), "op": op, "or": orr, "of1": _f1(op, orr)}


def mean_accuracy(preds, targets) -> float:
    """Label-wise mean of positive-sample and negative-sample accuracy."""
    preds, targets = _validate_pair(preds, targets, binary_scores=True)
    total = 0.0
    for j in range(targets.shape[1]):
        pos = targets[:, j] == 1
        neg = ~pos
        if not pos.any() or not neg.any():
            raise ValidationError(f"label {j} lacks a positive or negative sample")
        tpr = (preds[pos, j] == 1).mean()
        tnr = (preds[neg, j] == 0).mean()
        total += 0.5 * (tpr + tnr)
    return total / targets.shape[1]


def instance_metrics(preds, targets) -> dict:
    """Per-sample accuracy/precision/recall averaged over samples.

    Any per-sample 0/0 term contributes 0. F1 is the harmonic mean of the
    averaged precision and recall.
    """
    preds, targets = _validate_pair(preds, targets, binary_scores=True)
    tp = ((preds == 1) & (targets == 1)).sum(axis=1).astype(np.float64)
    fp = ((preds == 1) & (targets == 0)).sum(axis=1).astype(np.float64)
    fn = ((preds == 0) & (targets == 1)).sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc_i = np.where(tp + fp + fn > 0, tp / (tp + fp + fn), 0.0)
        prec_i = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        rec_i = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
    accu = float(acc_i.mean())
    prec = float(prec_i.mean())
    rec = float(rec_i.mean())
    return {"accu": accu, "prec": prec, "recall": rec, "f1": _f1(prec, rec)}


@dataclass
class MetricsReport:
    """Every evaluation number for one (scores, targets) pair."""

    map: float
    ap: list
    cp: float
    cr: float
    cf1: float
    op: float
    or_: float
    of1: float
    top3: dict
    ma: float
    accu: float
    prec: float
    recall: float
    f1: float
    topk: int = 3
    warnings_: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "ap": self.ap,
            "cp": self.cp,
            "cr": self.cr,
            "cf1": self.cf1,
            "op": self.op,
            "or": self.or_,
            "of1": self.of1,
            "top3": dict(self.top3),
            "ma": self.ma,
            "accu": self.accu,
            "prec": self.prec,
            "recall": self.recall,
            "f1": self.f1,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def evaluate(scores, targets, k: int = 3) -> MetricsReport:
    """Full report: threshold-0.5 metrics, top-k macro/micro, mA, instance."""
    scores, targets = _validate_pair(scores, targets)
    map_, aps = mean_average_precision(scores, targets)
    preds = binarize(scores)
    mm = macro_micro(preds, targets)
    topk = macro_micro(topk_binarize(scores, k), targets)
    inst = instance_metrics(preds, targets)
    return MetricsReport(
        map=map_,
        ap=[None if np.isnan(a) else float(a) for a in aps],
        cp=mm["cp"],
        cr=mm["cr"],
        cf1=mm["cf1"],
        op=mm["op"],
        or_=mm["or"],
        of1=mm["of1"],
        top3=topk,
        ma=mean_accuracy(preds, targets),
        accu=inst["accu"],
        prec=inst["prec"],
        recall=inst["recall"],
        f1=inst["f1"],
        topk=k,
    )
