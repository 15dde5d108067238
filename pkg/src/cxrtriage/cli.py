"""Command-line entry points.

Subcommands: synth, plan-folds, extract, train, evaluate, ensemble, run,
report.  `run` executes the whole protocol from a TOML config; the other
subcommands expose the individual stages.  Failures print a machine-readable
JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ensemble import EnsembleDefinition, predict_ensemble
from .errors import ConfigError, CxrError
from .extractor import load_features, save_features
from .head import SoftmaxHead, TrainConfig, forward, train
from .manifest import Label, load_manifest, plan_folds
from .metrics import evaluate, roc_curve
from .pipeline import (
    PipelineConfig,
    extract_corpus,
    report,
    run_pipeline,
    summary_from_json,
)
from .synth import make_synthetic_corpus

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


def _abs(path: str) -> str:
    if path == "toypool" or Path(path).is_absolute():
        return path
    return str(Path.cwd() / path)


def _labels_for(manifest_path: str, sample_ids: list[str]) -> list[Label]:
    manifest = load_manifest(manifest_path)
    by_id = {s.id: s.label for s in manifest.samples}
    missing = [sid for sid in sample_ids if sid not in by_id]
    if missing:
        raise ConfigError(
            f"sample ids not in manifest: {missing[:5]}"
            + (" ..." if len(missing) > 5 else "")
        )
    return [by_id[sid] for sid in sample_ids]


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
        print(f"wrote {out}")


def cmd_synth(args) -> int:
    manifest = make_synthetic_corpus(args.n_pos, args.n_neg, args.seed, args.out_dir)
    print(f"wrote {Path(args.out_dir) / 'manifest.csv'} ({len(manifest)} samples)")
    return 0


def cmd_plan_folds(args) -> int:
    manifest = load_manifest(args.manifest)
    plan = plan_folds(manifest, args.k, args.seed, stratified=not args.no_stratify)
    _emit(plan.to_json(), args.out)
    return 0


def cmd_extract(args) -> int:
    fm = extract_corpus(args.manifest, args.backbone, cache_dir=args.cache)
    save_features(fm, args.out)
    print(f"wrote {args.out} ({fm.rows} rows x {fm.dim} features)")
    return 0


def cmd_train(args) -> int:
    fm = load_features(args.features)
    labels = _labels_for(args.manifest, fm.sample_ids)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.train_seed,
        shuffle=not args.no_shuffle,
    )
    head, trace = train(fm, labels, cfg, init_seed=args.init_seed)
    head.save(args.out, train_config=cfg, final_loss=trace[-1])
    print(f"wrote {args.out} (final loss {trace[-1]:.6f})")
    return 0


def cmd_evaluate(args) -> int:
    head = SoftmaxHead.load(args.head)
    fm = load_features(args.features)
    truth = _labels_for(args.manifest, fm.sample_ids)
    preds = forward(head, fm)
    rep = evaluate([p.label for p in preds], truth, [p.score for p in preds])
    if args.roc_out is not None:
        curve = roc_curve([p.score for p in preds], truth)
        Path(args.roc_out).write_text(curve.to_csv())
        print(f"wrote {args.roc_out}")
    _emit(rep.to_json() + "\n", args.out)
    return 0


def cmd_ensemble(args) -> int:
    definition = EnsembleDefinition.load(args.definition)
    base = Path(args.definition).parent
    members = definition.members
    feats = args.features
    if len(feats) == 1:
        feats = feats * len(members)
    if len(feats) != len(members):
        raise ConfigError(
            f"{len(members)} members but {len(args.features)} feature files; "
            "pass one file total or one per member"
        )
    per_member = []
    names = []
    for i, (m, fpath) in enumerate(zip(members, feats)):
        head_path = Path(m["head"])
        if not head_path.is_absolute():
            head_path = base / head_path
        head = SoftmaxHead.load(head_path)
        fm = load_features(fpath)
        per_member.append(forward(head, fm))
        names.append(f"{m['backbone']}#{i}")
    votes = predict_ensemble(per_member)
    truth = _labels_for(args.manifest, [v.sample_id for v in votes])
    member_reports = {}
    for name, preds in zip(names, per_member):
        member_reports[name] = evaluate(
            [p.label for p in preds], truth, [p.score for p in preds]
        ).as_dict()
    ens = evaluate([v.label for v in votes], truth, [v.score for v in votes])
    payload = {"members": member_reports, "ensemble": ens.as_dict()}
    _emit(json.dumps(payload, sort_keys=True, indent=2) + "\n", args.out)
    return 0


_SEED_FLAGS = ("split_seed", "init_seed", "train_seed", "augment_seed")
_TRAIN_FLAGS = ("epochs", "batch_size", "learning_rate")
_AUG_FLAGS = ("flip_x_prob", "flip_y_prob", "rotation_range_deg", "shear_range")


def _run_config(args) -> PipelineConfig:
    """Config file plus flag overrides; flags alone must be complete."""
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            with open(cfg_path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {cfg_path} is not valid TOML: {exc}") from exc
        base = cfg_path.parent
    else:
        data = {}
        base = Path.cwd()

    if args.manifest is not None:
        data["manifest"] = _abs(args.manifest)
    if args.backbone:
        data["backbones"] = [_abs(b) for b in args.backbone]
    if args.out_dir is not None:
        data["out_dir"] = _abs(args.out_dir)
    if args.k is not None:
        data["k"] = args.k
    if args.heads_per_backbone is not None:
        data["heads_per_backbone"] = args.heads_per_backbone
    if args.no_stratify:
        data["stratified"] = False
    seeds = dict(data.get("seeds", {}))
    for flag in _SEED_FLAGS:
        v = getattr(args, flag)
        if v is not None:
            seeds[flag.removesuffix("_seed")] = v
    if seeds:
        data["seeds"] = seeds
    trn = dict(data.get("train", {}))
    for flag in _TRAIN_FLAGS:
        v = getattr(args, flag)
        if v is not None:
            trn[flag] = v
    if args.no_shuffle:
        trn["shuffle"] = False
    if trn:
        data["train"] = trn
    aug = dict(data.get("augment", {}))
    for flag in _AUG_FLAGS:
        v = getattr(args, flag)
        if v is not None:
            aug[flag] = v
    if args.no_augment:
        aug["enabled"] = False
    if aug:
        data["augment"] = aug
    return PipelineConfig.from_dict(data, base_dir=base)


def cmd_run(args) -> int:
    cfg = _run_config(args)
    summary = run_pipeline(cfg)
    ens = summary.pooled["ensemble"]
    print(f"wrote {Path(cfg.out_dir) / 'summary.json'}")
    acc = "undefined" if ens.accuracy is None else f"{100 * ens.accuracy:.1f}%"
    sen = "undefined" if ens.sensitivity is None else f"{100 * ens.sensitivity:.1f}%"
    print(f"pooled ensemble: accuracy {acc}, sensitivity {sen}")
    return 0


def cmd_report(args) -> int:
    summary = summary_from_json(Path(args.summary).read_text())
    written = report(summary, args.out_dir)
    for p in written:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cxrtriage",
        description="Binary chest-radiograph triage: frozen extractors, "
        "softmax heads, k-fold bagging ensemble.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-pos", type=int, required=True)
    p.add_argument("--n-neg", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plan-folds", help="write a deterministic k-fold plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan_folds)

    p = sub.add_parser("extract", help="extract un-augmented features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--backbone", required=True, help="metadata JSON path or 'toypool'")
    p.add_argument("--out", required=True)
    p.add_argument("--cache")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one softmax head on saved features")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--learning-rate", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--init-seed", type=int, required=True)
    p.add_argument("--train-seed", type=int, required=True)
    p.add_argument("--no-shuffle", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained head against a manifest")
    p.add_argument("--head", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--roc-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="majority-vote saved heads over features")
    p.add_argument("--definition", required=True)
    p.add_argument("--features", nargs="+", required=True,
                   help="one file shared by all members, or one per member")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("run", help="end-to-end cross-validated run")
    p.add_argument("--config", help="TOML config; flags below override its fields")
    p.add_argument("--manifest")
    p.add_argument("--backbone", action="append", default=[],
                   help="repeatable; metadata JSON path or 'toypool'")
    p.add_argument("--out-dir")
    p.add_argument("--k", type=int)
    p.add_argument("--heads-per-backbone", type=int)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--init-seed", type=int)
    p.add_argument("--train-seed", type=int)
    p.add_argument("--augment-seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--flip-x-prob", type=float)
    p.add_argument("--flip-y-prob", type=float)
    p.add_argument("--rotation-range-deg", type=float)
    p.add_argument("--shear-range", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-emit report files from a summary JSON")
    p.add_argument("--summary", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CxrError as exc:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 2
    except OSError as exc:
        sys.stderr.write(
            json.dumps({"error": "OSError", "message": str(exc)}) + "\n"
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
