"""End-to-end orchestration: folds, augmented features, heads, votes, reports.

Per fold: augment and extract features for the training split, train one
softmax head per ensemble member from scratch, predict the untouched test
fold, and majority-vote.  The run summary carries per-fold, mean-over-folds
and pooled-counts views; pooled is the headline because every sample lands
in exactly one test fold.

All randomness flows from four explicit config seeds (split, init, train,
augment) through deterministic derivation, so a rerun with the same config
reproduces the summary byte for byte apart from its timestamp.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from ._version import __version__
from .ensemble import VoteRecord, predict_ensemble
from .errors import ConfigError, CxrError
from .extractor import (
    FeatureCache,
    FeatureMatrix,
    LoadedBackbone,
    extract_cached,
    load_backbone,
)
from .head import Prediction, TrainConfig, forward, train
from .imageproc import AugmentConfig, augment, decode_resize, normalize
from .manifest import FoldPlan, Label, Manifest, load_manifest, plan_folds
from .metrics import MetricsReport, RocCurve, evaluate, roc_curve
from .rng import SplitMix64, derive_seed

ENSEMBLE_KEY = "ensemble"
_METRIC_KEYS = ("accuracy", "sensitivity", "specificity", "precision", "npv", "f1", "fpr", "auc")
_RESIZE_TAG = "bilinear-v1"  # bump if the resize convention ever changes


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on, with no wall-clock or hidden defaults.

    Members are the cross product of backbones and heads_per_backbone; each
    member gets its own derived init and shuffle seeds per fold.
    """

    manifest: str
    backbones: tuple[str, ...]
    out_dir: str
    k: int
    split_seed: int
    init_seed: int
    train_seed: int
    augment_seed: int
    heads_per_backbone: int = 1
    stratified: bool = True
    positive_class: str = Label.POSITIVE.value
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        if self.heads_per_backbone < 1:
            raise ConfigError(
                f"heads_per_backbone must be >= 1, got {self.heads_per_backbone}"
            )
        if not self.backbones:
            raise ConfigError("at least one backbone is required")
        if self.positive_class != Label.POSITIVE.value:
            raise ConfigError(
                f"positive_class must be {Label.POSITIVE.value!r} "
                f"(the only positive label), got {self.positive_class!r}"
            )
        for s in ("split_seed", "init_seed", "train_seed", "augment_seed"):
            v = getattr(self, s)
            if not isinstance(v, int):
                raise ConfigError(f"{s} must be an integer, got {type(v).__name__}")

    def semantic_dict(self) -> dict:
        """Result-affecting fields only; excludes filesystem locations."""
        return {
            "k": self.k,
            "seeds": {
                "split": self.split_seed,
                "init": self.init_seed,
                "train": self.train_seed,
                "augment": self.augment_seed,
            },
            "heads_per_backbone": self.heads_per_backbone,
            "stratified": self.stratified,
            "positive_class": self.positive_class,
            "augment": self.augment.as_dict(),
            "train": self.train.as_dict(),
            "resize": _RESIZE_TAG,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        """Build from a parsed config mapping; relative paths resolve against base_dir."""
        base = Path(base_dir)
        d = dict(d)

        def take(key, required=True, default=None):
            if key in d:
                return d.pop(key)
            if required:
                raise ConfigError(f"config is missing required key {key!r}")
            return default

        def resolve(p: str) -> str:
            p = str(p)
            return p if Path(p).is_absolute() or p == "toypool" else str(base / p)

        manifest = resolve(take("manifest"))
        backbones = take("backbones")
        if not isinstance(backbones, (list, tuple)) or not backbones:
            raise ConfigError("'backbones' must be a non-empty list")
        backbones = tuple(resolve(b) for b in backbones)
        out_dir = resolve(take("out_dir"))
        k = take("k")
        seeds = take("seeds")
        if not isinstance(seeds, dict):
            raise ConfigError("'seeds' must be a table with split/init/train/augment")
        missing = [s for s in ("split", "init", "train", "augment") if s not in seeds]
        if missing:
            raise ConfigError(f"seeds table is missing {missing}")
        extra_seed = sorted(set(seeds) - {"split", "init", "train", "augment"})
        if extra_seed:
            raise ConfigError(f"unknown seed keys {extra_seed}")

        aug_tbl = take("augment", required=False, default={})
        trn_tbl = take("train", required=False, default={})
        if "seed" in trn_tbl:
            raise ConfigError(
                "train.seed is not configurable; per-member seeds derive from seeds.train"
            )
        heads = take("heads_per_backbone", required=False, default=1)
        stratified = take("stratified", required=False, default=True)
        positive = take("positive_class", required=False, default=Label.POSITIVE.value)
        if d:
            raise ConfigError(f"unknown config keys {sorted(d)}")
        try:
            aug = AugmentConfig.from_dict(aug_tbl)
            trn = TrainConfig.from_dict(dict(trn_tbl, seed=0))
        except TypeError as exc:
            raise ConfigError(f"bad augment/train table: {exc}") from exc
        return cls(
            manifest=manifest,
            backbones=backbones,
            out_dir=out_dir,
            k=k,
            split_seed=seeds["split"],
            init_seed=seeds["init"],
            train_seed=seeds["train"],
            augment_seed=seeds["augment"],
            heads_per_backbone=heads,
            stratified=stratified,
            positive_class=positive,
            augment=aug,
            train=trn,
        )

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)


@dataclass
class FoldResult:
    """Reports for one fold: each member plus the vote."""

    fold: int
    test_size: int
    member_reports: dict[str, MetricsReport]
    ensemble_report: MetricsReport

    def as_dict(self) -> dict:
        return {
            "fold": self.fold,
            "test_size": self.test_size,
            "members": {k: r.as_dict() for k, r in self.member_reports.items()},
            "ensemble": self.ensemble_report.as_dict(),
        }


@dataclass
class RunSummary:
    """Everything a run produced, JSON-serializable apart from the ROC curves."""

    k: int
    n_samples: int
    member_names: tuple[str, ...]
    class_counts: dict[str, int]
    folds: list[FoldResult]
    aggregate: dict
    pooled: dict[str, MetricsReport]
    roc: dict[str, RocCurve]
    provenance: dict
    fold_plan: FoldPlan

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "n_samples": self.n_samples,
            "member_names": list(self.member_names),
            "class_counts": dict(sorted(self.class_counts.items())),
            "folds": [f.as_dict() for f in self.folds],
            "aggregate": self.aggregate,
            "pooled": {k: r.as_dict() for k, r in self.pooled.items()},
            "provenance": self.provenance,
            "fold_plan": json.loads(self.fold_plan.to_json()),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"


def _member_names(specs: list, heads: int) -> list[str]:
    names = []
    for b in specs:
        if heads == 1:
            names.append(b.name)
        else:
            names.extend(f"{b.name}.h{j}" for j in range(heads))
    return names


def _prepared_tensor(raw: bytes, side: int, mean, std, aug_cfg, aug_seed):
    img = decode_resize(raw, side)
    if aug_cfg is not None:
        img = augment(img, aug_cfg, SplitMix64(aug_seed))
    return normalize(img, mean, std)


def _features_for(
    backbone: LoadedBackbone,
    images: list,
    ids: list[str],
    cache: FeatureCache | None,
    chunk: int = 32,
) -> FeatureMatrix:
    spec = backbone.spec
    preproc = (
        f"{_RESIZE_TAG};side={spec.input_side};"
        f"mean={tuple(spec.norm_mean)};std={tuple(spec.norm_std)}"
    )
    parts = []
    for start in range(0, len(images), chunk):
        parts.append(
            extract_cached(
                backbone, images[start : start + chunk], ids[start : start + chunk],
                cache, preproc,
            )
        )
    values = np.concatenate([p.values for p in parts], axis=0)
    return FeatureMatrix(values=values, sample_ids=list(ids))


def _mean_over_folds(reports: list[MetricsReport]) -> dict:
    out: dict = {}
    notes: dict[str, str] = {}
    for key in _METRIC_KEYS:
        values = [getattr(r, key) for r in reports]
        defined = [v for v in values if v is not None]
        if not defined:
            out[key] = None
            notes[key] = f"undefined in all {len(values)} folds"
            continue
        out[key] = sum(defined) / len(defined)
        if len(defined) < len(values):
            notes[key] = (
                f"mean over the {len(defined)} of {len(values)} folds where defined"
            )
    out["undefined"] = dict(sorted(notes.items()))
    return out


def _votes_to_predictions(votes: list[VoteRecord]) -> list[Prediction]:
    """Ensemble decisions viewed as plain predictions (probs mirror the score)."""
    return [
        Prediction(v.sample_id, (v.score, 1.0 - v.score), v.label, v.score)
        for v in votes
    ]


def _with_context(exc: CxrError, context: str) -> CxrError:
    wrapped = type(exc)(f"{context}: {exc}")
    wrapped.__cause__ = exc
    return wrapped


def run_pipeline(cfg: PipelineConfig) -> RunSummary:
    """Execute the full protocol and write the report tree under cfg.out_dir."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    status_path = out_dir / "status.json"
    status_path.write_text(
        json.dumps({"status": "incomplete"}, sort_keys=True) + "\n"
    )

    manifest_path = Path(cfg.manifest)
    manifest = load_manifest(manifest_path)
    manifest_dir = manifest_path.parent
    truth_all = manifest.labels()

    backbones: list[LoadedBackbone] = []
    seen_names: set[str] = set()
    for bp in cfg.backbones:
        bb = load_backbone(bp)
        if bb.spec.name in seen_names:
            raise ConfigError(f"duplicate backbone name {bb.spec.name!r}")
        if bb.spec.name == ENSEMBLE_KEY:
            raise ConfigError(f"backbone name {ENSEMBLE_KEY!r} is reserved")
        seen_names.add(bb.spec.name)
        backbones.append(bb)

    heads = cfg.heads_per_backbone
    member_names = _member_names([b.spec for b in backbones], heads)

    plan = plan_folds(manifest, cfg.k, cfg.split_seed, cfg.stratified)
    cache = FeatureCache(out_dir / "cache")

    raw_bytes: list[bytes] = []
    for rec in manifest.samples:
        p = Path(rec.image_path)
        if not p.is_absolute():
            p = manifest_dir / p
        raw_bytes.append(p.read_bytes())

    fold_results: list[FoldResult] = []
    # member name -> (sample_id, truth, label, score), pooled across test folds
    pooled_rows: dict[str, list[tuple[str, Label, Label, float]]] = {
        name: [] for name in member_names + [ENSEMBLE_KEY]
    }

    for f in range(cfg.k):
        train_idx = list(plan.train_indices(f))
        test_idx = list(plan.test_indices(f))
        test_truth = [truth_all[i] for i in test_idx]
        member_preds: list[list[Prediction]] = []
        member_reports: dict[str, MetricsReport] = {}

        for b_idx, backbone in enumerate(backbones):
            spec = backbone.spec
            try:
                train_imgs = [
                    _prepared_tensor(
                        raw_bytes[i], spec.input_side, spec.norm_mean, spec.norm_std,
                        cfg.augment,
                        derive_seed(cfg.augment_seed, "fold", f, "img", i),
                    )
                    for i in train_idx
                ]
                test_imgs = [
                    _prepared_tensor(
                        raw_bytes[i], spec.input_side, spec.norm_mean, spec.norm_std,
                        None, 0,
                    )
                    for i in test_idx
                ]
                train_fm = _features_for(
                    backbone, train_imgs,
                    [manifest.samples[i].id for i in train_idx], cache,
                )
                test_fm = _features_for(
                    backbone, test_imgs,
                    [manifest.samples[i].id for i in test_idx], cache,
                )
                train_labels = [truth_all[i] for i in train_idx]

                for j in range(heads):
                    m = b_idx * heads + j
                    member = member_names[m]
                    trn_cfg = dataclasses.replace(
                        cfg.train, seed=derive_seed(cfg.train_seed, "member", m, "fold", f)
                    )
                    head, _ = train(
                        train_fm, train_labels, trn_cfg,
                        init_seed=derive_seed(cfg.init_seed, "member", m, "fold", f),
                    )
                    preds = forward(head, test_fm)
                    member_preds.append(preds)
                    member_reports[member] = evaluate(
                        [p.label for p in preds], test_truth, [p.score for p in preds]
                    )
                    pooled_rows[member].extend(
                        (p.sample_id, t, p.label, p.score)
                        for p, t in zip(preds, test_truth)
                    )
            except CxrError as exc:
                raise _with_context(exc, f"fold {f}, backbone {spec.name}") from exc

        try:
            votes = predict_ensemble(member_preds)
        except CxrError as exc:
            raise _with_context(exc, f"fold {f}, ensemble") from exc
        ens_report = evaluate(
            [v.label for v in votes], test_truth, [v.score for v in votes]
        )
        pooled_rows[ENSEMBLE_KEY].extend(
            (v.sample_id, t, v.label, v.score) for v, t in zip(votes, test_truth)
        )
        fold_results.append(
            FoldResult(
                fold=f,
                test_size=len(test_idx),
                member_reports=member_reports,
                ensemble_report=ens_report,
            )
        )

    pooled: dict[str, MetricsReport] = {}
    roc: dict[str, RocCurve] = {}
    for name, rows in pooled_rows.items():
        truth = [t for _, t, _, _ in rows]
        labels = [lab for _, _, lab, _ in rows]
        scores = [s for _, _, _, s in rows]
        pooled[name] = evaluate(labels, truth, scores)
        roc[name] = roc_curve(scores, truth)

    aggregate = {
        "members": {
            name: _mean_over_folds([fr.member_reports[name] for fr in fold_results])
            for name in member_names
        },
        ENSEMBLE_KEY: _mean_over_folds([fr.ensemble_report for fr in fold_results]),
    }

    model_hashes = {b.spec.name: b.model_hash for b in backbones}
    config_digest = hashlib.sha256(
        json.dumps(cfg.semantic_dict(), sort_keys=True).encode("utf-8")
    ).hexdigest()
    manifest_digest = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
    provenance = {
        "code_version": __version__,
        "config_hash": config_digest,
        "manifest_sha256": manifest_digest,
        "model_hashes": dict(sorted(model_hashes.items())),
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(
            timespec="seconds"
        ),
    }

    summary = RunSummary(
        k=cfg.k,
        n_samples=len(manifest),
        member_names=tuple(member_names),
        class_counts={lab.value: n for lab, n in manifest.class_counts.items()},
        folds=fold_results,
        aggregate=aggregate,
        pooled=pooled,
        roc=roc,
        provenance=provenance,
        fold_plan=plan,
    )
    report(summary, out_dir)
    status_path.write_text(json.dumps({"status": "complete"}, sort_keys=True) + "\n")
    return summary


def extract_corpus(
    manifest_path: str | Path,
    backbone_path: str | Path,
    cache_dir: str | Path | None = None,
) -> FeatureMatrix:
    """Un-augmented features for every manifest sample, in manifest order."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    backbone = load_backbone(backbone_path)
    spec = backbone.spec
    images = []
    for rec in manifest.samples:
        p = Path(rec.image_path)
        if not p.is_absolute():
            p = manifest_path.parent / p
        images.append(
            _prepared_tensor(
                p.read_bytes(), spec.input_side, spec.norm_mean, spec.norm_std, None, 0
            )
        )
    cache = FeatureCache(cache_dir) if cache_dir is not None else None
    return _features_for(backbone, images, [s.id for s in manifest.samples], cache)


def summary_from_json(text: str) -> RunSummary:
    """Rebuild a RunSummary from its JSON form.  ROC curves are not stored
    in the JSON, so the result has an empty roc mapping."""
    d = json.loads(text)
    folds = [
        FoldResult(
            fold=fd["fold"],
            test_size=fd["test_size"],
            member_reports={
                k: MetricsReport.from_dict(v) for k, v in fd["members"].items()
            },
            ensemble_report=MetricsReport.from_dict(fd["ensemble"]),
        )
        for fd in d["folds"]
    ]
    return RunSummary(
        k=d["k"],
        n_samples=d["n_samples"],
        member_names=tuple(d["member_names"]),
        class_counts=dict(d["class_counts"]),
        folds=folds,
        aggregate=d["aggregate"],
        pooled={k: MetricsReport.from_dict(v) for k, v in d["pooled"].items()},
        roc={},
        provenance=dict(d["provenance"]),
        fold_plan=FoldPlan.from_json(json.dumps(d["fold_plan"])),
    )


def _fmt_count(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def _fmt_pct(v: float | None) -> str:
    return "undefined" if v is None else f"{100.0 * v:.1f}%"


def _fmt_ci(ci: tuple[float, float] | None) -> str:
    if ci is None:
        return "n/a"
    return f"{100.0 * ci[0]:.2f}-{100.0 * ci[1]:.2f}"


def _confusion_table(name: str, r: MetricsReport) -> str:
    c = r.counts
    rows = [
        ("", "truth covid", "truth normal"),
        ("predicted covid", _fmt_count(c.tp), _fmt_count(c.fp)),
        ("predicted normal", _fmt_count(c.fn), _fmt_count(c.tn)),
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = [f"confusion matrix: {name}"]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def report(summary: RunSummary, out_dir: str | Path) -> list[Path]:
    """Write summary JSON, confusion tables, ROC CSVs and the Markdown report.

    Returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    p = out_dir / "summary.json"
    p.write_text(summary.to_json())
    written.append(p)

    order = list(summary.member_names) + [ENSEMBLE_KEY]
    for name in order:
        r = summary.pooled[name]
        p = out_dir / f"confusion_{name}.txt"
        p.write_text(_confusion_table(name, r))
        written.append(p)
        curve = summary.roc.get(name)
        if curve is not None:
            p = out_dir / f"roc_{name}.csv"
            p.write_text(curve.to_csv())
            written.append(p)

    lines = [
        "# Run report",
        "",
        f"Corpus: {summary.n_samples} samples "
        f"({summary.class_counts.get(Label.POSITIVE.value, 0)} covid / "
        f"{summary.class_counts.get(Label.NEGATIVE.value, 0)} normal), "
        f"{summary.k}-fold cross-validation.",
        "",
        "## Pooled over test folds",
        "",
        "| Model | TP | FP | TN | FN | Accuracy | AUC | 95% CI |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for name in order:
        r = summary.pooled[name]
        c = r.counts
        auc_txt = "undefined" if r.auc is None else f"{r.auc:.5f}"
        lines.append(
            f"| {name} | {_fmt_count(c.tp)} | {_fmt_count(c.fp)} | {_fmt_count(c.tn)} "
            f"| {_fmt_count(c.fn)} | {_fmt_pct(r.accuracy)} | {auc_txt} "
            f"| {_fmt_ci(r.ci95)} |"
        )
    lines += [
        "",
        "## Mean over folds",
        "",
        "| Model | Accuracy | Sensitivity | Specificity | Precision | F1 | AUC |",
        "|---|---|---|---|---|---|---|",
    ]
    for name in order:
        agg = (
            summary.aggregate["members"][name]
            if name in summary.aggregate["members"]
            else summary.aggregate[ENSEMBLE_KEY]
        )
        lines.append(
            f"| {name} | {_fmt_pct(agg['accuracy'])} | {_fmt_pct(agg['sensitivity'])} "
            f"| {_fmt_pct(agg['specificity'])} | {_fmt_pct(agg['precision'])} "
            f"| {_fmt_pct(agg['f1'])} | {_fmt_pct(agg['auc'])} |"
        )
    lines += [
        "",
        f"Provenance: config {summary.provenance['config_hash'][:12]}, "
        f"manifest {summary.provenance['manifest_sha256'][:12]}, "
        f"code {summary.provenance['code_version']}.",
        "",
    ]
    p = out_dir / "report.md"
    p.write_text("\n".join(lines))
    written.append(p)
    return written
