"""Confusion-matrix metrics, Wilson intervals, and ROC/AUC.

Feeds a published-style confusion matrix through the metrics suite, shows
how undefined ratios are reported rather than silently zeroed, and sweeps
a ROC curve whose area matches the pairwise ranking statistic.
"""

import numpy as np

from cxrtriage import (
    ConfusionCounts,
    Label,
    accuracy_ci,
    auc,
    basic_metrics,
    roc_curve,
)


def main():
    # a strong triage result on an imbalanced 286-sample test set
    counts = ConfusionCounts(tp=261, fp=1, tn=24, fn=0)
    r = basic_metrics(counts)
    print("confusion counts: tp=261 fp=1 tn=24 fn=0")
    print(f"  accuracy     {r.accuracy:.4f}")
    print(f"  sensitivity  {r.sensitivity:.4f}   (every positive caught)")
    print(f"  specificity  {r.specificity:.4f}")
    print(f"  precision    {r.precision:.4f}")
    print(f"  npv          {r.npv:.4f}")
    print(f"  f1           {r.f1:.4f}")
    print(f"  fpr          {r.fpr:.4f}   (exactly 1 - specificity)")
    assert r.fpr == 1.0 - r.specificity

    lo, hi = accuracy_ci(counts.tp + counts.tn, 286)
    print(f"  95% Wilson interval for accuracy: ({lo:.4f}, {hi:.4f})")

    perfect_lo, perfect_hi = accuracy_ci(286, 286)
    print(f"  a perfect 286/286 would give:      ({perfect_lo:.4f}, {perfect_hi:.4f})")

    # degenerate slices stay honest: no negatives means no specificity
    r_pos_only = basic_metrics(ConfusionCounts(tp=5, fp=0, tn=0, fn=1))
    print("\nall-positive slice (tp=5 fp=0 tn=0 fn=1):")
    print(f"  specificity: {r_pos_only.specificity}")
    print(f"  reported reason: {r_pos_only.undefined['specificity']}")

    # ROC: scores from two overlapping clusters
    rng = np.random.default_rng(17)
    pos_scores = rng.normal(0.65, 0.15, size=120).clip(0.0, 1.0)
    neg_scores = rng.normal(0.35, 0.15, size=80).clip(0.0, 1.0)
    scores = np.concatenate([pos_scores, neg_scores])
    truth = [Label.POSITIVE] * 120 + [Label.NEGATIVE] * 80

    curve = roc_curve(scores, truth)
    area = auc(curve)
    print(f"\nROC sweep over {len(curve.points)} thresholds, AUC {area:.4f}")

    # the trapezoidal area equals the probability a random positive
    # outranks a random negative (ties count half)
    wins = sum(
        1.0 if p > n else (0.5 if p == n else 0.0)
        for p in pos_scores for n in neg_scores
    )
    pairwise = wins / (len(pos_scores) * len(neg_scores))
    print(f"pairwise ranking statistic            {pairwise:.4f}")
    assert abs(area - pairwise) < 1e-9

    print("\noperating points (threshold, fpr, tpr):")
    step = max(1, len(curve.points) // 6)
    for t, (fpr, tpr) in list(zip(curve.thresholds, curve.points))[::step]:
        print(f"  {t:>6.3f}  {fpr:.3f}  {tpr:.3f}")

    first_csv_lines = curve.to_csv().splitlines()[:3]
    print("\nCSV export starts:")
    for line in first_csv_lines:
        print(f"  {line}")


if __name__ == "__main__":
    main()
