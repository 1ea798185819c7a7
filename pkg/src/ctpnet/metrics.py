"""Pixel-level localization metrics, forged-area ratio and size categories.

Forged pixels are the positive class throughout.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

CATEGORY_BOUNDS = (0.10, 0.20, 0.50)
CATEGORIES = (1, 2, 3, 4)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _binary(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return arr.astype(bool)


def confusion_counts(pred, gt) -> ConfusionCounts:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p, g = _binary("pred", pred), _binary("gt", gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, p.size - tp - fp - fn, fn)


def f1_iou_mcc(c: ConfusionCounts) -> Tuple[float, float, float]:
    """Each score is 0 when its denominator is 0."""
    tp, fp, tn, fn = c.tp, c.fp, c.tn, c.fn
    d_f1 = 2 * tp + fp + fn
    d_iou = tp + fp + fn
    f1 = 2 * tp / d_f1 if d_f1 else 0.0
    iou = tp / d_iou if d_iou else 0.0
    # integer product keeps this exact before the single sqrt
    d_mcc = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(d_mcc) if d_mcc else 0.0
    return f1, iou, mcc


def auc(prob, gt) -> float:
    """ROC AUC as the Mann-Whitney statistic (ties count one half).

    Raises ValueError when ``gt`` holds a single class.
    """
    prob = np.asarray(prob, dtype=np.float64).ravel()
    g = _binary("gt", np.asarray(gt)).ravel()
    if prob.size != g.size:
        raise ValueError("prob and gt sizes differ")
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: ground truth has a single class")
    order = np.argsort(prob, kind="mergesort")
    sorted_p = prob[order]
    # average ranks (1-based) over runs of equal scores
    starts = np.flatnonzero(np.r_[True, sorted_p[1:] != sorted_p[:-1]])
    ends = np.r_[starts[1:], sorted_p.size]
    avg_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(prob.size)
    ranks[order] = np.repeat(avg_rank, ends - starts)
    u = ranks[g].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ratio_fake(mask) -> float:
    """Forged pixel count divided by authentic pixel count."""
    m = _binary("mask", np.asarray(mask))
    fake = int(m.sum())
    original = m.size - fake
    if original == 0:
        raise ValueError("ratio_fake undefined: mask has no authentic pixels")
    return fake / original


def categorize(ratio: float) -> int:
    """(0, .1] -> 1, (.1, .2] -> 2, (.2, .5] -> 3, above -> 4; 0 falls in 1."""
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    for cat, upper in zip(CATEGORIES, CATEGORY_BOUNDS):
        if ratio <= upper:
            return cat
    return 4


@dataclass
class SampleScores:
    f1: float
    iou: float
    mcc: float
    auc: Optional[float]
    category: int
    counts: ConfusionCounts
    accuracy: float


def score_sample(prob: np.ndarray, pred: np.ndarray, gt: np.ndarray) -> SampleScores:
    counts = confusion_counts(pred, gt)
    f1, iou, mcc = f1_iou_mcc(counts)
    try:
        a: Optional[float] = auc(prob, gt)
    except ValueError:
        a = None
    gt_ratio = ratio_fake(gt) if np.count_nonzero(gt) < np.size(gt) else math.inf
    return SampleScores(f1, iou, mcc, a, categorize(gt_ratio), counts, (counts.tp + counts.tn) / counts.total)


@dataclass
class MetricsReport:
    f1: float
    iou: float
    mcc: float
    auc: Optional[float]
    accuracy: float
    n_samples: int
    n_auc: int
    counts: ConfusionCounts
    per_category: Dict[int, "MetricsReport"] = field(default_factory=dict)
    pooled_auc: bool = False

    COLUMNS = ("scope", "n_samples", "f1", "iou", "mcc", "auc", "accuracy")

    def rows(self) -> List[dict]:
        out = [self._row("overall")]
        for cat in CATEGORIES:
            if cat in self.per_category:
                out.append(self.per_category[cat]._row(f"categ{cat}"))
        return out

    def _row(self, scope: str) -> dict:
        return {
            "scope": scope,
            "n_samples": self.n_samples,
            "f1": self.f1,
            "iou": self.iou,
            "mcc": self.mcc,
            "auc": self.auc,
            "accuracy": self.accuracy,
        }

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r) for r in self.rows()) + "\n"

    def table(self) -> str:
        lines = ["{:<8} {:>9} {:>7} {:>7} {:>7} {:>7} {:>8}".format(*self.COLUMNS)]
        for r in self.rows():
            a = "   n/a" if r["auc"] is None else f"{r['auc']:7.4f}"
            lines.append(
                f"{r['scope']:<8} {r['n_samples']:>9d} {r['f1']:7.4f} {r['iou']:7.4f} {r['mcc']:7.4f} {a:>7} {r['accuracy']:8.4f}"
            )
        return "\n".join(lines)


def aggregate(
    scores: Sequence[SampleScores],
    probs: Optional[Sequence[np.ndarray]] = None,
    gts: Optional[Sequence[np.ndarray]] = None,
    pooled_auc: bool = False,
    by_category: bool = True,
) -> MetricsReport:
    """Macro average over samples. Samples with undefined AUC are left out of the AUC mean.

    With ``pooled_auc`` the AUC is computed once over all pixels of all samples.
    """
    if not scores:
        raise ValueError("cannot aggregate an empty sample set")
    aucs = [s.auc for s in scores if s.auc is not None]
    if pooled_auc:
        if probs is None or gts is None:
            raise ValueError("pooled AUC needs the probability maps and masks")
        try:
            auc_value: Optional[float] = auc(np.concatenate([np.ravel(p) for p in probs]),
                                             np.concatenate([np.ravel(g) for g in gts]))
        except ValueError:
            auc_value = None
    else:
        auc_value = float(np.mean(aucs)) if aucs else None
    total = ConfusionCounts(
        sum(s.counts.tp for s in scores),
        sum(s.counts.fp for s in scores),
        sum(s.counts.tn for s in scores),
        sum(s.counts.fn for s in scores),
    )
    report = MetricsReport(
        f1=float(np.mean([s.f1 for s in scores])),
        iou=float(np.mean([s.iou for s in scores])),
        mcc=float(np.mean([s.mcc for s in scores])),
        auc=auc_value,
        accuracy=float(np.mean([s.accuracy for s in scores])),
        n_samples=len(scores),
        n_auc=len(aucs),
        counts=total,
        pooled_auc=pooled_auc,
    )
    if by_category:
        for cat in CATEGORIES:
            idx = [i for i, s in enumerate(scores) if s.category == cat]
            if idx:
                report.per_category[cat] = aggregate(
                    [scores[i] for i in idx],
                    [probs[i] for i in idx] if probs is not None else None,
                    [gts[i] for i in idx] if gts is not None else None,
                    pooled_auc=pooled_auc,
                    by_category=False,
                )
    return report


def evaluate(model, samples: Iterable, input_size: Optional[int] = None, pooled_auc: bool = False,
             batch_size: int = 8) -> MetricsReport:
    """Run the model over ``samples`` (DocumentSample-like: ``image``, ``mask``) and aggregate."""
    from .data import prepare_batch
    from .engine import Tensor
    from .model import predict_mask

    samples = list(samples)
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    size = input_size or model.config.input_size[0]
    scores, probs, gts = [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        images, masks = prepare_batch(chunk, size)
        prob, pred = predict_mask(model, Tensor(images.astype(model.dtype)))
        for i, sample in enumerate(chunk):
            sc = score_sample(prob[i], pred[i], masks[i])
            # the stored category describes the full-resolution mask
            sc.category = getattr(sample, "category", sc.category)
            scores.append(sc)
            probs.append(prob[i])
            gts.append(masks[i])
    return aggregate(scores, probs, gts, pooled_auc=pooled_auc)
