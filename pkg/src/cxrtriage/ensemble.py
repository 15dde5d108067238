"""Majority-vote bagging over independently trained classifier heads.

Each member votes with its hard label; the ensemble label is the mode,
with ties broken toward POSITIVE (the triage-safe direction).  The fused
score is the mean of member positive-class probabilities and exists for
ranking (ROC) only; it never overrides the vote.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EnsembleError
from .head import Prediction
from .manifest import Label

TIE_RULE = "positive"


@dataclass(frozen=True)
class VoteRecord:
    """One ensemble decision with the member votes that produced it."""

    sample_id: str
    member_labels: tuple[Label, ...]
    label: Label
    score: float

    @property
    def positive_votes(self) -> int:
        return sum(1 for m in self.member_labels if m is Label.POSITIVE)

    @property
    def negative_votes(self) -> int:
        return len(self.member_labels) - self.positive_votes


def majority_vote(member_labels: list[Label] | tuple[Label, ...]) -> Label:
    """Mode of the member labels; an exact tie goes POSITIVE."""
    if not member_labels:
        raise EnsembleError("majority_vote needs at least one member label")
    pos = sum(1 for m in member_labels if m is Label.POSITIVE)
    neg = len(member_labels) - pos
    return Label.POSITIVE if pos >= neg else Label.NEGATIVE


def vote(member_predictions: list[Prediction]) -> VoteRecord:
    """Combine one sample's member predictions into a VoteRecord."""
    if not member_predictions:
        raise EnsembleError("vote needs at least one member prediction")
    sid = member_predictions[0].sample_id
    for p in member_predictions[1:]:
        if p.sample_id != sid:
            raise EnsembleError(
                f"vote mixes sample ids {sid!r} and {p.sample_id!r}"
            )
    labels = tuple(p.label for p in member_predictions)
    score = sum(p.score for p in member_predictions) / len(member_predictions)
    return VoteRecord(
        sample_id=sid,
        member_labels=labels,
        label=majority_vote(labels),
        score=score,
    )


def predict_ensemble(per_member: list[list[Prediction]]) -> list[VoteRecord]:
    """Join member prediction lists by sample id and vote each sample.

    Every member must cover exactly the same set of samples.  Output order
    follows the first member's order.
    """
    if not per_member:
        raise EnsembleError("predict_ensemble needs at least one member")
    first = per_member[0]
    by_id: list[dict[str, Prediction]] = []
    for k, preds in enumerate(per_member):
        d = {p.sample_id: p for p in preds}
        if len(d) != len(preds):
            raise EnsembleError(f"member {k} predicts some sample more than once")
        by_id.append(d)
    base_ids = [p.sample_id for p in first]
    base_set = set(base_ids)
    for k, d in enumerate(by_id[1:], start=1):
        if set(d) != base_set:
            missing = base_set.symmetric_difference(d)
            raise EnsembleError(
                f"member {k} covers a different sample set (mismatch on {sorted(missing)[:5]})"
            )
    return [vote([d[sid] for d in by_id]) for sid in base_ids]


@dataclass(frozen=True)
class EnsembleDefinition:
    """Serializable description of which trained heads form the ensemble."""

    members: tuple[dict, ...]  # each {"backbone": ..., "head": path}

    def __post_init__(self):
        if not self.members:
            raise EnsembleError("an ensemble needs at least one member")
        for m in self.members:
            if "backbone" not in m or "head" not in m:
                raise EnsembleError(
                    f"member entries need 'backbone' and 'head' keys, got {sorted(m)}"
                )

    def to_json(self) -> str:
        return json.dumps(
            {"members": list(self.members), "tie_rule": TIE_RULE},
            indent=2,
            sort_keys=True,
        ) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleDefinition":
        try:
            obj = json.loads(Path(path).read_text())
        except ValueError as exc:
            raise EnsembleError(f"ensemble definition {path} is not valid JSON: {exc}") from exc
        if obj.get("tie_rule", TIE_RULE) != TIE_RULE:
            raise EnsembleError(
                f"unsupported tie rule {obj.get('tie_rule')!r}; only {TIE_RULE!r} exists"
            )
        members = obj.get("members")
        if not isinstance(members, list):
            raise EnsembleError(f"ensemble definition {path} lacks a members list")
        return cls(members=tuple(members))
