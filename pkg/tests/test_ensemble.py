"""Majority-vote ensemble tests.

The oracle is an independent mode computation (statistics.mode semantics
written out by hand) plus exhaustive enumeration for three members and a
randomized sweep for five.
"""

import itertools

import numpy as np
import pytest

from cxrtriage.ensemble import (
    EnsembleDefinition,
    VoteRecord,
    majority_vote,
    predict_ensemble,
    vote,
)
from cxrtriage.errors import EnsembleError
from cxrtriage.head import Prediction
from cxrtriage.manifest import Label

POS = Label.POSITIVE
NEG = Label.NEGATIVE


def mode_oracle(labels):
    """Independent tally: strictly more NEG than POS is NEG, else POS."""
    pos = sum(1 for v in labels if v == POS)
    neg = sum(1 for v in labels if v == NEG)
    return NEG if neg > pos else POS


def pred(sid, score, member=0):
    label = POS if score >= 0.5 else NEG
    return Prediction(sample_id=sid, probs=(score, 1.0 - score), label=label,
                      score=score)


class TestMajorityVote:
    def test_all_three_member_combinations(self):
        for combo in itertools.product([POS, NEG], repeat=3):
            assert majority_vote(list(combo)) == mode_oracle(combo)

    def test_all_two_and_four_member_combinations(self):
        # even sizes exercise the tie rule
        for n in (2, 4):
            for combo in itertools.product([POS, NEG], repeat=n):
                assert majority_vote(list(combo)) == mode_oracle(combo)

    def test_random_five_member_panels(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            combo = [POS if rng.uniform() < 0.5 else NEG for _ in range(5)]
            assert majority_vote(combo) == mode_oracle(combo)

    def test_permutation_invariance(self):
        for combo in itertools.product([POS, NEG], repeat=3):
            expected = majority_vote(list(combo))
            for perm in itertools.permutations(combo):
                assert majority_vote(list(perm)) == expected

    def test_exact_tie_goes_positive(self):
        assert majority_vote([POS, NEG]) == POS
        assert majority_vote([NEG, POS, NEG, POS]) == POS

    def test_single_member_passthrough(self):
        assert majority_vote([POS]) == POS
        assert majority_vote([NEG]) == NEG

    def test_unanimity(self):
        assert majority_vote([POS] * 7) == POS
        assert majority_vote([NEG] * 7) == NEG

    def test_monotone_in_positive_votes(self):
        # flipping one NEG vote to POS never flips the ensemble POS -> NEG
        rng = np.random.default_rng(1)
        for _ in range(200):
            combo = [POS if rng.uniform() < 0.5 else NEG for _ in range(5)]
            before = majority_vote(combo)
            neg_positions = [i for i, v in enumerate(combo) if v == NEG]
            if not neg_positions:
                continue
            combo[neg_positions[0]] = POS
            after = majority_vote(combo)
            assert not (before == POS and after == NEG)

    def test_empty_rejected(self):
        with pytest.raises(EnsembleError):
            majority_vote([])


class TestVote:
    def test_vote_record_fields(self):
        record = vote([pred("a", 0.9), pred("a", 0.2), pred("a", 0.8)])
        assert record.sample_id == "a"
        assert record.member_labels == (POS, NEG, POS)
        assert record.label == POS
        assert abs(record.score - (0.9 + 0.2 + 0.8) / 3) < 1e-12
        assert record.positive_votes == 2
        assert record.negative_votes == 1

    def test_score_is_mean_not_vote(self):
        # two weak positives outvote one confident negative: label POS even
        # though the mean score can sit below 0.5
        record = vote([pred("a", 0.55), pred("a", 0.55), pred("a", 0.05)])
        assert record.label == POS
        assert record.score < 0.5

    def test_mixed_sample_ids_rejected(self):
        with pytest.raises(EnsembleError):
            vote([pred("a", 0.9), pred("b", 0.9)])

    def test_empty_rejected(self):
        with pytest.raises(EnsembleError):
            vote([])


class TestPredictEnsemble:
    def member(self, scores_by_id):
        return [pred(sid, s) for sid, s in scores_by_id]

    def test_joins_by_id_and_keeps_first_member_order(self):
        m1 = self.member([("a", 0.9), ("b", 0.1), ("c", 0.6)])
        m2 = self.member([("c", 0.4), ("a", 0.8), ("b", 0.2)])  # different order
        m3 = self.member([("b", 0.7), ("c", 0.3), ("a", 0.95)])
        records = predict_ensemble([m1, m2, m3])
        assert [r.sample_id for r in records] == ["a", "b", "c"]
        a, b, c = records
        assert a.member_labels == (POS, POS, POS)
        assert a.label == POS
        assert b.member_labels == (NEG, NEG, POS)
        assert b.label == NEG
        assert c.member_labels == (POS, NEG, NEG)
        assert c.label == NEG
        assert abs(a.score - (0.9 + 0.8 + 0.95) / 3) < 1e-12

    def test_matches_per_sample_vote(self):
        rng = np.random.default_rng(2)
        ids = [f"s{i}" for i in range(20)]
        members = [
            [pred(sid, float(rng.uniform())) for sid in ids] for _ in range(5)
        ]
        records = predict_ensemble(members)
        for i, sid in enumerate(ids):
            expected = vote([m[i] for m in members])
            assert records[i] == expected

    def test_single_member_degenerate(self):
        m1 = self.member([("a", 0.9), ("b", 0.1)])
        records = predict_ensemble([m1])
        assert [r.label for r in records] == [POS, NEG]
        assert [r.score for r in records] == [0.9, 0.1]

    def test_sample_set_mismatch_rejected(self):
        m1 = self.member([("a", 0.9), ("b", 0.1)])
        m2 = self.member([("a", 0.9), ("c", 0.1)])
        with pytest.raises(EnsembleError, match="different sample set"):
            predict_ensemble([m1, m2])

    def test_duplicate_sample_rejected(self):
        m1 = self.member([("a", 0.9), ("a", 0.1)])
        with pytest.raises(EnsembleError, match="more than once"):
            predict_ensemble([m1])

    def test_empty_rejected(self):
        with pytest.raises(EnsembleError):
            predict_ensemble([])


class TestEnsembleDefinition:
    def test_round_trip(self, tmp_path):
        definition = EnsembleDefinition(
            members=(
                {"backbone": "net_a", "head": "heads/a.json"},
                {"backbone": "net_b", "head": "heads/b.json"},
            )
        )
        path = tmp_path / "ensemble.json"
        definition.save(path)
        back = EnsembleDefinition.load(path)
        assert back == definition

    def test_unknown_tie_rule_rejected(self, tmp_path):
        path = tmp_path / "ensemble.json"
        path.write_text('{"members": [{"backbone": "x", "head": "h"}], "tie_rule": "negative"}')
        with pytest.raises(EnsembleError, match="tie rule"):
            EnsembleDefinition.load(path)

    def test_member_shape_validated(self):
        with pytest.raises(EnsembleError):
            EnsembleDefinition(members=())
        with pytest.raises(EnsembleError):
            EnsembleDefinition(members=({"backbone": "x"},))

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "ensemble.json"
        path.write_text("{not json")
        with pytest.raises(EnsembleError):
            EnsembleDefinition.load(path)
