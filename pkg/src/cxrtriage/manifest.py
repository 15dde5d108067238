"""Corpus manifest ingestion and k-fold cross-validation planning.

The manifest is a UTF-8 CSV with header ``id,image_path,label,source_note``
where label is ``covid`` or ``normal`` (case-insensitive).  Fold plans are
deterministic for a fixed (manifest order, k, seed, stratified) tuple and
serialize to JSON for audit and replay.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateIdError, FoldPlanError, ManifestError, UnknownLabelError
from .rng import SplitMix64


class Label(enum.Enum):
    """Binary class label.  POSITIVE is COVID-19 for every metric in the suite."""

    POSITIVE = "covid"
    NEGATIVE = "normal"

    @classmethod
    def parse(cls, text: str) -> "Label":
        t = text.strip().lower()
        for member in cls:
            if t == member.value:
                return member
        raise UnknownLabelError(f"unknown label {text!r}; expected 'covid' or 'normal'")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    label: Label
    source_note: str = ""


@dataclass(frozen=True)
class Manifest:
    """Ordered sample list with per-class counts kept consistent by construction."""

    samples: tuple[SampleRecord, ...]
    class_counts: dict[Label, int] = field(default_factory=dict)

    def __post_init__(self):
        counts = {Label.POSITIVE: 0, Label.NEGATIVE: 0}
        for s in self.samples:
            counts[s.label] += 1
        object.__setattr__(self, "class_counts", counts)

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> list[Label]:
        return [s.label for s in self.samples]


MANIFEST_HEADER = ["id", "image_path", "label", "source_note"]


def load_manifest(path: str | Path) -> Manifest:
    """Read a manifest CSV, preserving row order.

    Raises ManifestError on a missing file, malformed row or header,
    DuplicateIdError on repeated ids, UnknownLabelError on bad labels.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    samples: list[SampleRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"empty manifest file: {path}") from None
        if [h.strip().lower() for h in header] != MANIFEST_HEADER:
            raise ManifestError(
                f"bad manifest header {header!r}; expected {MANIFEST_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) not in (3, 4):
                raise ManifestError(f"{path}:{lineno}: expected 3 or 4 columns, got {len(row)}")
            sid = row[0].strip()
            image_path = row[1].strip()
            note = row[3].strip() if len(row) == 4 else ""
            if not sid:
                raise ManifestError(f"{path}:{lineno}: empty sample id")
            if not image_path:
                raise ManifestError(f"{path}:{lineno}: empty image_path")
            if sid in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            samples.append(SampleRecord(sid, image_path, Label.parse(row[2]), note))
    return Manifest(samples=tuple(samples))


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for s in manifest.samples:
            writer.writerow([s.id, s.image_path, s.label.value, s.source_note])


@dataclass(frozen=True)
class FoldPlan:
    """k disjoint test-index sets covering 0..n-1; train sets are complements."""

    k: int
    seed: int
    stratified: bool
    n_samples: int
    folds: tuple[tuple[int, ...], ...]

    def test_indices(self, fold: int) -> tuple[int, ...]:
        return self.folds[fold]

    def train_indices(self, fold: int) -> tuple[int, ...]:
        test = set(self.folds[fold])
        return tuple(i for i in range(self.n_samples) if i not in test)

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "seed": self.seed,
            "stratified": self.stratified,
            "n_samples": self.n_samples,
            "folds": [list(f) for f in self.folds],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        d = json.loads(text)
        return cls(
            k=d["k"],
            seed=d["seed"],
            stratified=d["stratified"],
            n_samples=d["n_samples"],
            folds=tuple(tuple(f) for f in d["folds"]),
        )


def plan_folds(manifest: Manifest, k: int, seed: int, stratified: bool = True) -> FoldPlan:
    """Partition the manifest into k test folds.

    Shuffling is a seeded splitmix64 Fisher-Yates per class (classes are
    processed POSITIVE first, then NEGATIVE, off one shared stream).  Each
    class's remainder samples go to the currently least-loaded folds, which
    keeps global fold sizes within 1 of each other even under stratification.
    """
    n = len(manifest)
    if k < 2:
        raise FoldPlanError(f"k must be >= 2, got {k}")
    if n < k:
        raise FoldPlanError(f"cannot split {n} samples into {k} folds")
    counts = manifest.class_counts
    if counts[Label.POSITIVE] == 0 or counts[Label.NEGATIVE] == 0:
        raise FoldPlanError(
            "fold planning requires at least one sample per class; got "
            f"{counts[Label.POSITIVE]} positive / {counts[Label.NEGATIVE]} negative"
        )
    if stratified:
        for label, count in counts.items():
            if count < k:
                raise FoldPlanError(
                    f"class {label.value!r} has {count} samples, fewer than k={k}; "
                    "disable stratification or lower k"
                )

    rng = SplitMix64(seed)
    if stratified:
        groups = [
            [i for i, s in enumerate(manifest.samples) if s.label is label]
            for label in (Label.POSITIVE, Label.NEGATIVE)
        ]
    else:
        groups = [list(range(n))]

    fold_members: list[list[int]] = [[] for _ in range(k)]
    for group in groups:
        rng.shuffle(group)
        q, r = divmod(len(group), k)
        # folds ranked by current load, ties to the lower index; the first
        # r of them absorb this group's remainder
        order = sorted(range(k), key=lambda f: (len(fold_members[f]), f))
        sizes = [q] * k
        for f in order[:r]:
            sizes[f] += 1
        pos = 0
        for f in range(k):
            fold_members[f].extend(group[pos : pos + sizes[f]])
            pos += sizes[f]

    folds = tuple(tuple(sorted(members)) for members in fold_members)
    plan = FoldPlan(k=k, seed=seed, stratified=stratified, n_samples=n, folds=folds)
    _check_partition(plan)
    return plan


def _check_partition(plan: FoldPlan) -> None:
    """Internal sanity check: the invariants the planner promises."""
    everything = sorted(i for fold in plan.folds for i in fold)
    if everything != list(range(plan.n_samples)):
        raise FoldPlanError("fold plan does not partition the sample indices")
    sizes = [len(f) for f in plan.folds]
    if max(sizes) - min(sizes) > 1:
        raise FoldPlanError(f"fold sizes differ by more than 1: {sizes}")
