"""Pixel confusion metrics, reproducibility scoring, and the
Dice-vs-uncertainty correlation.

Formulas (float64 throughout):
    dice        = 2*TP / (FN + FP + 2*TP)
    sensitivity = TP / (FN + TP)
    accuracy    = (TP + TN) / N
    mcc         = (TP/N - S*P) / sqrt(P*S*(1-S)*(1-P)),
                  S = (TP+FN)/N, P = (TP+FP)/N

Degenerate conventions: dice of two empty maps is 1, sensitivity with no
positives to find is 1, mcc with a zero denominator factor is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import MaskMap
from .errors import ShapeError
from .features import pearson


@dataclass(frozen=True)
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_json_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class MetricReport:
    dice: float
    accuracy: float
    sensitivity: float
    mcc: float
    confusion: Confusion

    def to_json_dict(self) -> dict:
        return {
            "dice": self.dice,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "mcc": self.mcc,
            "confusion": self.confusion.to_json_dict(),
        }


def confusion(pred: MaskMap, truth: MaskMap) -> Confusion:
    if pred.shape != truth.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    p = pred.values.astype(bool)
    t = truth.values.astype(bool)
    return Confusion(
        tp=int(np.count_nonzero(p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
    )


def dice(c: Confusion) -> float:
    denom = float(c.fn + c.fp + 2 * c.tp)
    if denom == 0.0:
        return 1.0
    return 2.0 * c.tp / denom


def sensitivity(c: Confusion) -> float:
    denom = float(c.fn + c.tp)
    if denom == 0.0:
        return 1.0
    return c.tp / denom


def accuracy(c: Confusion) -> float:
    return (c.tp + c.tn) / float(c.total)


def mcc(c: Confusion) -> float:
    n = float(c.total)
    s = (c.tp + c.fn) / n
    p = (c.tp + c.fp) / n
    denom_sq = p * s * (1.0 - s) * (1.0 - p)
    if denom_sq == 0.0:
        return 0.0
    return (c.tp / n - s * p) / math.sqrt(denom_sq)


def evaluate(pred: MaskMap, truth: MaskMap) -> MetricReport:
    c = confusion(pred, truth)
    return MetricReport(dice=dice(c), accuracy=accuracy(c),
                        sensitivity=sensitivity(c), mcc=mcc(c), confusion=c)


def pooled_evaluate(preds: list[MaskMap], truths: list[MaskMap]) -> MetricReport:
    """Metrics over the summed confusion counts of all blocks."""
    if len(preds) != len(truths):
        raise ShapeError(f"{len(preds)} predictions vs {len(truths)} references")
    counts = [confusion(p, t) for p, t in zip(preds, truths)]
    c = Confusion(
        tp=sum(x.tp for x in counts), tn=sum(x.tn for x in counts),
        fp=sum(x.fp for x in counts), fn=sum(x.fn for x in counts),
    )
    return MetricReport(dice=dice(c), accuracy=accuracy(c),
                        sensitivity=sensitivity(c), mcc=mcc(c), confusion=c)


def mean_report(reports: list[MetricReport]) -> MetricReport:
    """Average per-block metrics; confusion counts are summed."""
    if not reports:
        raise ShapeError("no reports to average")
    n = len(reports)
    return MetricReport(
        dice=sum(r.dice for r in reports) / n,
        accuracy=sum(r.accuracy for r in reports) / n,
        sensitivity=sum(r.sensitivity for r in reports) / n,
        mcc=sum(r.mcc for r in reports) / n,
        confusion=Confusion(
            tp=sum(r.confusion.tp for r in reports),
            tn=sum(r.confusion.tn for r in reports),
            fp=sum(r.confusion.fp for r in reports),
            fn=sum(r.confusion.fn for r in reports),
        ),
    )


def reproducibility_report(preds_run1: list[MaskMap],
                           preds_run2: list[MaskMap]) -> MetricReport:
    """Agreement between two aligned prediction runs, run 1 as reference.

    Dice, accuracy and MCC are symmetric in the two runs; sensitivity is
    not (it reads as "fraction of run-1 foreground recovered by run 2").
    """
    if len(preds_run1) != len(preds_run2):
        raise ShapeError(f"run lengths differ: {len(preds_run1)} vs {len(preds_run2)}")
    if not preds_run1:
        raise ShapeError("empty prediction lists")
    return mean_report([evaluate(pred=b, truth=a)
                        for a, b in zip(preds_run1, preds_run2)])


def dice_uncertainty_correlation(points: list[tuple[float, float]]) -> float:
    """Pearson correlation between per-block Dice and mean uncertainty."""
    if len(points) < 2:
        raise ShapeError("need at least two (dice, uncertainty) points")
    dices = [p[0] for p in points]
    uncertainties = [p[1] for p in points]
    return pearson(dices, uncertainties)
