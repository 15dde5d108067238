"""Metric-suite tests: published-row oracles, identities, ROC/AUC, Wilson CI."""

import json

import numpy as np
import pytest

from cxrtriage.errors import MetricsError
from cxrtriage.manifest import Label
from cxrtriage.metrics import (
    ConfusionCounts,
    MetricsReport,
    accuracy_ci,
    auc,
    basic_metrics,
    confusion,
    evaluate,
    roc_curve,
)

POS, NEG = Label.POSITIVE, Label.NEGATIVE

# Published result rows as percentage-valued counts (tp, fp, tn, fn) with
# the printed accuracy.  Cells are independently rounded to one decimal, so
# direct feeding reproduces accuracy only to the rounding's ~0.1pp slack.
PUBLISHED_ROWS = {
    "resnet18": (90.2, 0.3, 8.4, 1.0, 0.986),
    "resnet50": (90.9, 0.7, 8.0, 0.3, 0.990),
    "densenet201": (89.9, 0.7, 8.0, 1.5, 0.979),
    "ensemble": (91.3, 0.3, 8.4, 0.0, 0.997),
}


def random_counts(rng: np.random.Generator) -> ConfusionCounts:
    tp, fp, tn, fn = rng.integers(1, 200, size=4)
    return ConfusionCounts(tp=float(tp), fp=float(fp), tn=float(tn), fn=float(fn))


class TestConfusion:
    def test_counting(self):
        preds = [POS, POS, NEG, NEG, POS]
        truth = [POS, NEG, NEG, POS, POS]
        c = confusion(preds, truth)
        assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 1, 1)
        assert c.total == 5

    def test_length_mismatch(self):
        with pytest.raises(MetricsError):
            confusion([POS], [POS, NEG])

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            confusion([], [])

    def test_negative_count_rejected(self):
        with pytest.raises(MetricsError):
            ConfusionCounts(tp=-1, fp=0, tn=0, fn=0)


class TestBasicMetrics:
    def test_published_rows_direct_feed(self):
        for name, (tp, fp, tn, fn, printed_acc) in PUBLISHED_ROWS.items():
            r = basic_metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
            assert abs(r.accuracy - printed_acc) < 1e-3, name

    def test_published_precision_value(self):
        tp, fp, tn, fn, _ = PUBLISHED_ROWS["resnet18"]
        r = basic_metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
        assert abs(r.precision - 0.9967) < 5e-4

    def test_perfect_sensitivity_row(self):
        tp, fp, tn, fn, _ = PUBLISHED_ROWS["ensemble"]
        r = basic_metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
        assert r.sensitivity == 1.0
        assert abs(r.accuracy - 0.997) < 1e-12  # cells sum to 100 on this row

    def test_identities_on_random_counts(self):
        rng = np.random.default_rng(404)
        for _ in range(1000):
            r = basic_metrics(random_counts(rng))
            # all denominators positive, so everything is defined
            for key in ("accuracy", "sensitivity", "specificity", "precision",
                        "npv", "f1", "fpr"):
                v = getattr(r, key)
                assert v is not None
                assert 0.0 <= v <= 1.0
            harmonic = 2.0 / (1.0 / r.precision + 1.0 / r.sensitivity)
            assert abs(r.f1 - harmonic) < 1e-12
            assert r.fpr == 1.0 - r.specificity  # exact, not approximate

    def test_undefined_sensitivity_on_negative_only_set(self):
        r = basic_metrics(ConfusionCounts(tp=0, fp=0, tn=5, fn=0))
        assert r.sensitivity is None
        assert r.specificity == 1.0
        assert r.precision is None
        assert r.f1 is None
        assert r.fpr == 0.0
        assert "sensitivity" in r.undefined
        assert "no positives" in r.undefined["sensitivity"]

    def test_undefined_serializes_as_null(self):
        r = basic_metrics(ConfusionCounts(tp=0, fp=0, tn=5, fn=0))
        d = json.loads(r.to_json())
        assert d["sensitivity"] is None
        assert d["undefined"]["sensitivity"]

    def test_report_dict_round_trip(self):
        r = evaluate([POS, NEG, POS], [POS, NEG, NEG], [0.9, 0.2, 0.6])
        back = MetricsReport.from_dict(json.loads(r.to_json()))
        assert back.as_dict() == r.as_dict()

    def test_zero_total_rejected(self):
        with pytest.raises(MetricsError):
            basic_metrics(ConfusionCounts(tp=0, fp=0, tn=0, fn=0))


def brute_force_roc(scores, truth):
    """Independent per-threshold confusion tally (O(n^2))."""
    n_pos = sum(1 for t in truth if t is POS)
    n_neg = len(truth) - n_pos
    points = []
    thresholds = sorted(set(scores), reverse=True)
    thresholds = [max(scores) + 1.0] + thresholds
    for t in thresholds:
        tp = sum(1 for s, lab in zip(scores, truth) if s >= t and lab is POS)
        fp = sum(1 for s, lab in zip(scores, truth) if s >= t and lab is NEG)
        points.append((fp / n_neg, tp / n_pos))
    return points


def pairwise_auc(scores, truth):
    """Mann-Whitney statistic: P(s_pos > s_neg) + 0.5 P(tie)."""
    pos = [s for s, t in zip(scores, truth) if t is POS]
    neg = [s for s, t in zip(scores, truth) if t is NEG]
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestRocCurve:
    def test_perfect_separation_passes_corner(self):
        curve = roc_curve([0.9, 0.1], [POS, NEG])
        assert (0.0, 1.0) in curve.points

    def test_all_scores_equal_two_points(self):
        curve = roc_curve([0.5, 0.5, 0.5], [POS, NEG, POS])
        assert curve.points == ((0.0, 0.0), (1.0, 1.0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(77)
        scores = list(np.round(rng.uniform(0, 1, 200), 2))  # force ties
        truth = [POS if rng.uniform() < 0.5 else NEG for _ in range(200)]
        if POS not in truth:
            truth[0] = POS
        if NEG not in truth:
            truth[1] = NEG
        curve = roc_curve(scores, truth)
        expected = brute_force_roc(scores, truth)
        for point in expected:
            assert any(
                abs(point[0] - p[0]) < 1e-12 and abs(point[1] - p[1]) < 1e-12
                for p in curve.points
            ), f"missing point {point}"

    def test_monotone_non_decreasing(self):
        rng = np.random.default_rng(5)
        scores = list(rng.uniform(0, 1, 100))
        truth = [POS] * 50 + [NEG] * 50
        curve = roc_curve(scores, truth)
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        assert all(a <= b for a, b in zip(xs, xs[1:]))
        assert all(a <= b for a, b in zip(ys, ys[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(MetricsError):
            roc_curve([0.2, 0.8], [POS, POS])

    def test_csv_export(self):
        curve = roc_curve([0.9, 0.1], [POS, NEG])
        lines = curve.to_csv().strip().split("\n")
        assert lines[0] == "threshold,fpr,tpr"
        assert len(lines) == len(curve.points) + 1


class TestAuc:
    def test_perfect(self):
        assert auc(roc_curve([0.9, 0.8, 0.1], [POS, POS, NEG])) == 1.0

    def test_inverted(self):
        assert auc(roc_curve([0.1, 0.9], [POS, NEG])) == 0.0

    def test_matches_pairwise_statistic(self):
        rng = np.random.default_rng(2024)
        for trial in range(25):
            n = int(rng.integers(10, 200))
            scores = list(np.round(rng.uniform(0, 1, n), 2))
            truth = [POS if rng.uniform() < 0.6 else NEG for _ in range(n)]
            if POS not in truth:
                truth[0] = POS
            if NEG not in truth:
                truth[-1] = NEG
            a = auc(roc_curve(scores, truth))
            assert abs(a - pairwise_auc(scores, truth)) < 1e-9, f"trial {trial}"

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(31)
        scores = list(rng.uniform(0, 1, 80))
        truth = [POS] * 40 + [NEG] * 40
        base = roc_curve(scores, truth)
        warped = roc_curve([float(np.exp(3 * s)) for s in scores], truth)
        assert base.points == warped.points
        assert auc(base) == auc(warped)


class TestAccuracyCI:
    def test_all_correct_interval(self):
        lo, hi = accuracy_ci(286, 286)
        assert abs(lo - 0.986746344583262) < 1e-12
        assert hi == 1.0

    def test_zero_correct_lower_bound(self):
        lo, hi = accuracy_ci(0, 10)
        assert lo == 0.0
        assert 0.2 < hi < 0.35

    def test_contains_point_estimate(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            total = int(rng.integers(1, 500))
            correct = int(rng.integers(0, total + 1))
            lo, hi = accuracy_ci(correct, total)
            assert lo <= correct / total <= hi

    def test_within_exact_binomial_band(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(88)
        for _ in range(50):
            total = int(rng.integers(5, 400))
            correct = int(rng.integers(0, total + 1))
            lo, hi = accuracy_ci(correct, total)
            # exact Clopper-Pearson interval from the beta quantiles
            alpha = 0.05
            if correct == 0:
                cp_lo = 0.0
            else:
                cp_lo = float(scipy_stats.beta.ppf(alpha / 2, correct, total - correct + 1))
            if correct == total:
                cp_hi = 1.0
            else:
                cp_hi = float(scipy_stats.beta.ppf(1 - alpha / 2, correct + 1, total - correct))
            assert lo >= cp_lo - 0.02
            assert hi <= cp_hi + 0.02

    def test_invalid_counts_rejected(self):
        with pytest.raises(MetricsError):
            accuracy_ci(5, 0)
        with pytest.raises(MetricsError):
            accuracy_ci(-1, 10)
        with pytest.raises(MetricsError):
            accuracy_ci(11, 10)


class TestEvaluate:
    def test_full_report(self):
        preds = [POS, POS, NEG, NEG]
        truth = [POS, NEG, NEG, POS]
        r = evaluate(preds, truth, scores=[0.9, 0.8, 0.3, 0.4])
        assert r.accuracy == 0.5
        assert r.ci95 is not None
        assert r.auc is not None

    def test_auc_skipped_for_single_class_truth(self):
        r = evaluate([POS, POS], [POS, POS], scores=[0.9, 0.8])
        assert r.auc is None
        assert "auc" in r.undefined

    def test_no_scores_no_auc(self):
        r = evaluate([POS, NEG], [POS, NEG])
        assert r.auc is None
        assert r.accuracy == 1.0
