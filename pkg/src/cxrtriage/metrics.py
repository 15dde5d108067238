"""Diagnostic metrics: confusion counts, ratio metrics, ROC sweeps, AUC, CIs.

POSITIVE (COVID-19) is the positive class throughout.  A metric whose
denominator is zero is UNDEFINED, reported as None plus a reason string,
never as 0 or NaN.  Accuracy is (TP+TN)/total; the printed form of the
source material's accuracy equation swaps TP for FP, which its own results
table contradicts, so the consistent definition is used here.

Counts may be non-negative rationals (e.g. percentage-valued rows); every
ratio is scale-invariant so the formulas are unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import MetricsError
from .manifest import Label


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/FP/TN/FN tallies; floats allowed so percentage rows can be ingested."""

    tp: float
    fp: float
    tn: float
    fn: float

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise MetricsError(f"count {name} must be finite and >= 0, got {v}")

    @property
    def total(self) -> float:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(predictions: list[Label], truth: list[Label]) -> ConfusionCounts:
    """Tally the four confusion cells over paired label lists."""
    if len(predictions) != len(truth):
        raise MetricsError(
            f"length mismatch: {len(predictions)} predictions vs {len(truth)} truths"
        )
    if not truth:
        raise MetricsError("cannot build a confusion matrix from empty input")
    tp = fp = tn = fn = 0
    for pred, actual in zip(predictions, truth):
        if actual is Label.POSITIVE:
            if pred is Label.POSITIVE:
                tp += 1
            else:
                fn += 1
        else:
            if pred is Label.POSITIVE:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num: float, den: float, reason: str):
    """num/den, or (None, reason) when the denominator vanishes."""
    if den == 0:
        return None, reason
    return num / den, None


@dataclass
class MetricsReport:
    """Full metric suite for one classifier on one evaluation set.

    Ratio fields are None when undefined; ``undefined`` maps each such
    field to the reason.  auc and ci95 are filled by the evaluation
    pipeline when scores / raw counts are available.
    """

    counts: ConfusionCounts
    accuracy: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    precision: float | None = None
    npv: float | None = None
    f1: float | None = None
    fpr: float | None = None
    auc: float | None = None
    ci95: tuple[float, float] | None = None
    undefined: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "counts": self.counts.as_dict(),
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "npv": self.npv,
            "f1": self.f1,
            "fpr": self.fpr,
            "auc": self.auc,
            "ci95": list(self.ci95) if self.ci95 is not None else None,
            "undefined": dict(sorted(self.undefined.items())),
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            counts=ConfusionCounts(**d["counts"]),
            accuracy=d.get("accuracy"),
            sensitivity=d.get("sensitivity"),
            specificity=d.get("specificity"),
            precision=d.get("precision"),
            npv=d.get("npv"),
            f1=d.get("f1"),
            fpr=d.get("fpr"),
            auc=d.get("auc"),
            ci95=tuple(d["ci95"]) if d.get("ci95") is not None else None,
            undefined=dict(d.get("undefined", {})),
        )


def basic_metrics(c: ConfusionCounts) -> MetricsReport:
    """Accuracy, sensitivity, specificity, precision, NPV, F1 and FPR from counts."""
    if c.total == 0:
        raise MetricsError("metrics require a positive total count")
    undefined: dict[str, str] = {}

    def put(name, num, den, reason):
        value, why = _ratio(num, den, reason)
        if why is not None:
            undefined[name] = why
        return value

    accuracy = (c.tp + c.tn) / c.total
    sensitivity = put("sensitivity", c.tp, c.tp + c.fn, "TP+FN is zero (no positives)")
    specificity = put("specificity", c.tn, c.tn + c.fp, "TN+FP is zero (no negatives)")
    precision = put("precision", c.tp, c.tp + c.fp, "TP+FP is zero (nothing predicted positive)")
    npv = put("npv", c.tn, c.tn + c.fn, "TN+FN is zero (nothing predicted negative)")
    # computed from specificity, not fp/(fp+tn), so fpr == 1 - specificity
    # holds bit-for-bit
    if specificity is None:
        fpr = None
        undefined["fpr"] = "FP+TN is zero (no negatives)"
    else:
        fpr = 1.0 - specificity
    if precision is None or sensitivity is None:
        f1 = None
        undefined["f1"] = "precision or sensitivity undefined"
    elif precision + sensitivity == 0:
        f1 = None
        undefined["f1"] = "precision + sensitivity is zero"
    else:
        f1 = 2.0 * (precision * sensitivity) / (precision + sensitivity)
    return MetricsReport(
        counts=c,
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        npv=npv,
        f1=f1,
        fpr=fpr,
        undefined=undefined,
    )


@dataclass(frozen=True)
class RocCurve:
    """(fpr, tpr) points sorted by threshold high-to-low, with thresholds aligned.

    Starts at (0, 0), ends at (1, 1); both coordinates are non-decreasing.
    Thresholds sweep the distinct score values plus a sentinel above the max
    (and one below the min when it adds a new point).
    """

    points: tuple[tuple[float, float], ...]
    thresholds: tuple[float, ...]

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for t, (x, y) in zip(self.thresholds, self.points):
            lines.append(f"{t!r},{x!r},{y!r}")
        return "\n".join(lines) + "\n"


def roc_curve(scores: "np.ndarray | list[float]", truth: list[Label]) -> RocCurve:
    """Sweep classification thresholds: predict POSITIVE iff score >= t.

    Requires both classes present in truth.  Consecutive duplicate points
    (from the below-min sentinel) are collapsed, keeping the first threshold.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or len(scores) != len(truth):
        raise MetricsError("scores and truth must be equal-length 1-D sequences")
    y = np.array([1 if t is Label.POSITIVE else 0 for t in truth])
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC curve requires at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = y[order]
    cum_tp = np.cumsum(y_sorted)
    cum_fp = np.cumsum(1 - y_sorted)
    # index of the last occurrence of each distinct score (descending order)
    distinct_last = np.nonzero(np.append(s_sorted[:-1] != s_sorted[1:], True))[0]

    thresholds = [float(s_sorted[0] + 1.0)]
    points = [(0.0, 0.0)]
    for idx in distinct_last:
        thresholds.append(float(s_sorted[idx]))
        points.append((float(cum_fp[idx] / n_neg), float(cum_tp[idx] / n_pos)))
    below_min = float(s_sorted[-1] - 1.0)
    if points[-1] != (1.0, 1.0):  # unreachable for valid input; kept as a guard
        thresholds.append(below_min)
        points.append((1.0, 1.0))
    return RocCurve(points=tuple(points), thresholds=tuple(thresholds))


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve over fpr in [0, 1]."""
    xs = np.array([p[0] for p in curve.points])
    ys = np.array([p[1] for p in curve.points])
    return float(np.trapezoid(ys, xs))


def accuracy_ci(correct: int, total: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Always contains the point estimate correct/total, unlike the Wald
    interval at the boundaries.
    """
    if total <= 0:
        raise MetricsError(f"total must be positive, got {total}")
    if not 0 <= correct <= total:
        raise MetricsError(f"correct={correct} outside [0, {total}]")
    if not 0 < level < 1:
        raise MetricsError(f"confidence level must be in (0, 1), got {level}")
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    p = correct / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = (z / denom) * ((p * (1 - p) / total + z * z / (4 * total * total)) ** 0.5)
    # at the boundaries the interval endpoint is exact analytically; pin it
    # so rounding in center-half cannot leak past [0, 1]
    lo = 0.0 if correct == 0 else max(0.0, center - half)
    hi = 1.0 if correct == total else min(1.0, center + half)
    return (lo, hi)


def evaluate(
    predictions: list[Label],
    truth: list[Label],
    scores: "np.ndarray | list[float] | None" = None,
    ci_level: float = 0.95,
) -> MetricsReport:
    """Convenience wrapper: counts + ratios + Wilson CI (+ AUC when scores given)."""
    c = confusion(predictions, truth)
    report = basic_metrics(c)
    report.ci95 = accuracy_ci(int(c.tp + c.tn), int(c.total), ci_level)
    if scores is not None:
        try:
            report.auc = auc(roc_curve(scores, truth))
        except MetricsError:
            report.undefined["auc"] = "ROC undefined: truth contains a single class"
    return report
