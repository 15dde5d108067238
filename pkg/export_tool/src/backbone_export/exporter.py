"""Export pretrained torchvision backbones as frozen ONNX feature extractors.

Output contract (consumed by the cxrtriage extractor): an ONNX model whose
graph maps an N x 3 x 224 x 224 float32 batch to an N x feature_dim float32
matrix, plus a JSON metadata sidecar with the fields name, input_side,
feature_dim, norm_mean, norm_std, model_file, and sha256. The sidecar also
pins weights_version so feature caches keyed on the model hash stay honest
across weight revisions.

Verification exercises the export exclusively through cxrtriage's public
loading and extraction API, so a passing report means the downstream
pipeline will accept the files as-is.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torchvision.models as tv_models

import cxrtriage

from . import onnxbuild
from .errors import ExportError, UnsupportedBackboneError, VerificationError, WeightsError
from .tracer import TracedGraph, trace_densenet, trace_resnet

INPUT_SIDE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_OPSET = 17
_MIN_OPSET = 11

# architecture name -> (constructor, pretrained weights enum, tracer, feature_dim)
_BACKBONES = {
    "resnet18": (tv_models.resnet18, "ResNet18_Weights", trace_resnet, 512),
    "resnet50": (tv_models.resnet50, "ResNet50_Weights", trace_resnet, 2048),
    "densenet201": (tv_models.densenet201, "DenseNet201_Weights", trace_densenet, 1920),
}

SUPPORTED_BACKBONES = tuple(sorted(_BACKBONES))

# weights field values with special meaning (anything else is a local file path)
WEIGHTS_PRETRAINED = "pretrained"
WEIGHTS_RANDOM = "random"

_RANDOM_INIT_SEED = 0


@dataclass(frozen=True)
class ExportRequest:
    """What to export and where.

    weights selects the parameter source: "pretrained" downloads the
    published ImageNet weights, "random" builds a freshly initialized
    network from a fixed seed (for offline plumbing tests), and any other
    value is read as a local state-dict file path.
    """

    backbone: str
    out_dir: str | Path
    weights: str = WEIGHTS_PRETRAINED
    opset: int = DEFAULT_OPSET

    def __post_init__(self):
        if self.backbone not in _BACKBONES:
            raise UnsupportedBackboneError(
                f"unsupported backbone {self.backbone!r}; supported: "
                + ", ".join(SUPPORTED_BACKBONES)
            )
        if not isinstance(self.opset, int) or self.opset < _MIN_OPSET:
            raise ExportError(f"opset must be an integer >= {_MIN_OPSET}, got {self.opset!r}")


@dataclass(frozen=True)
class VerifyCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class VerifyReport:
    """Ordered pass/fail checks for one exported model."""

    backbone: str
    checks: tuple[VerifyCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[VerifyCheck]:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
        }

    def summary(self) -> str:
        if self.passed:
            return f"{self.backbone}: all {len(self.checks)} checks passed"
        lines = [f"{c.name}: {c.detail}" for c in self.failures()]
        return f"{self.backbone}: " + "; ".join(lines)


@dataclass(frozen=True)
class ExportResult:
    backbone: str
    model_path: Path
    meta_path: Path
    feature_dim: int
    sha256: str
    weights_version: str
    report: VerifyReport


def load_source_model(backbone: str, weights: str) -> tuple[nn.Module, str]:
    """Build the torch network in eval mode with its classifier removed.

    Returns the module and a weights_version string identifying exactly
    which parameters it carries.
    """
    if backbone not in _BACKBONES:
        raise UnsupportedBackboneError(
            f"unsupported backbone {backbone!r}; supported: " + ", ".join(SUPPORTED_BACKBONES)
        )
    builder, weights_enum_name, _, _ = _BACKBONES[backbone]
    if weights == WEIGHTS_PRETRAINED:
        enum = getattr(tv_models, weights_enum_name).IMAGENET1K_V1
        try:
            model = builder(weights=enum)
        except Exception as exc:
            raise WeightsError(
                f"could not obtain pretrained weights for {backbone}: {exc}"
            ) from exc
        version = f"{weights_enum_name}.IMAGENET1K_V1"
    elif weights == WEIGHTS_RANDOM:
        torch.manual_seed(_RANDOM_INIT_SEED)
        model = builder(weights=None)
        version = f"random-init(seed={_RANDOM_INIT_SEED})"
    else:
        path = Path(weights)
        if not path.exists():
            raise WeightsError(f"weights file not found: {path}")
        model = builder(weights=None)
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except Exception as exc:
            raise WeightsError(f"could not load weights from {path}: {exc}") from exc
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        version = f"file:{digest[:16]}"
    model.eval()
    # the exported graph ends at the pooled features, so the torch reference
    # must end there too
    if hasattr(model, "fc"):
        model.fc = nn.Identity()
    else:
        model.classifier = nn.Identity()
    return model, version


def build_model_bytes(traced: TracedGraph, backbone: str, opset: int) -> bytes:
    """Assemble the serialized ONNX model around a traced graph."""
    graph = onnxbuild.graph(
        nodes=traced.nodes,
        initializers=traced.initializers,
        inputs=[
            onnxbuild.tensor_value_info(traced.input_name, (None, 3, INPUT_SIDE, INPUT_SIDE))
        ],
        outputs=[onnxbuild.tensor_value_info(traced.output_name, (None, traced.feature_dim))],
        name=f"{backbone}_features",
    )
    return onnxbuild.model(graph, opset=opset)


def synthetic_batch(side: int, count: int) -> list[np.ndarray]:
    """Fixed smooth test images in [0, 1], H x W x 3 float32.

    Deterministic by construction (no RNG), distinct per sample and per
    channel so a permuted or truncated graph cannot match by accident.
    """
    ys, xs = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    images = []
    for i in range(count):
        img = np.empty((side, side, 3), dtype=np.float32)
        for c in range(3):
            phase = 2.0 * math.pi * (i / max(count, 1) + c / 3.0)
            wave = np.sin(2.0 * math.pi * (xs + 2 * ys) / side + phase)
            img[:, :, c] = (0.5 + 0.5 * wave).astype(np.float32)
        images.append(img)
    return images


def _normalized_batch(spec, count: int) -> list:
    return [
        cxrtriage.normalize(img, spec.norm_mean, spec.norm_std)
        for img in synthetic_batch(spec.input_side, count)
    ]


def verify_export(model_path: str | Path, meta_path: str | Path, batch_size: int = 4) -> VerifyReport:
    """Check an exported model the way the downstream pipeline would use it.

    Checks, in order: the metadata sidecar references the given model file;
    the file hash matches the recorded sha256; the pair loads through
    cxrtriage.load_backbone; a fixed synthetic batch extracts; the output
    shape is batch_size x feature_dim; every output value is finite. Each
    failure carries a specific reason, and later checks are skipped once a
    prerequisite fails.
    """
    model_path = Path(model_path)
    meta_path = Path(meta_path)
    checks: list[VerifyCheck] = []
    backbone_name = meta_path.stem

    def fail(name: str, detail: str) -> VerifyReport:
        checks.append(VerifyCheck(name, False, detail))
        return VerifyReport(backbone=backbone_name, checks=tuple(checks))

    def ok(name: str, detail: str) -> None:
        checks.append(VerifyCheck(name, True, detail))

    try:
        meta = json.loads(meta_path.read_text())
    except OSError as exc:
        return fail("metadata-readable", f"cannot read metadata: {exc}")
    except ValueError as exc:
        return fail("metadata-readable", f"metadata is not valid JSON: {exc}")
    ok("metadata-readable", f"parsed {meta_path.name}")
    if isinstance(meta.get("name"), str):
        backbone_name = meta["name"]

    declared = meta_path.parent / str(meta.get("model_file", ""))
    if not model_path.exists():
        return fail("paths-consistent", f"model file not found: {model_path}")
    if declared.resolve() != model_path.resolve():
        return fail(
            "paths-consistent",
            f"metadata points at {declared}, but verifying {model_path}",
        )
    ok("paths-consistent", f"metadata references {model_path.name}")

    digest = hashlib.sha256(model_path.read_bytes()).hexdigest()
    if digest != meta.get("sha256"):
        return fail(
            "hash-match",
            f"sha256 mismatch: metadata says {meta.get('sha256')}, file is {digest}",
        )
    ok("hash-match", f"sha256 {digest[:16]}...")

    try:
        backbone = cxrtriage.load_backbone(meta_path)
    except cxrtriage.CxrError as exc:
        return fail("loads-in-extractor", str(exc))
    ok(
        "loads-in-extractor",
        f"feature_dim {backbone.spec.feature_dim}, input side {backbone.spec.input_side}",
    )

    batch = _normalized_batch(backbone.spec, batch_size)
    ids = [f"verify_{i}" for i in range(batch_size)]
    try:
        features = backbone.extract(batch, ids)
    except cxrtriage.CxrError as exc:
        return fail("extraction-runs", str(exc))
    ok("extraction-runs", f"extracted {batch_size} synthetic samples")

    expected = (batch_size, backbone.spec.feature_dim)
    if features.values.shape != expected:
        return fail(
            "output-shape", f"expected shape {expected}, got {features.values.shape}"
        )
    ok("output-shape", f"{features.values.shape[0]} x {features.values.shape[1]}")

    if not np.isfinite(features.values).all():
        bad = int(np.size(features.values) - np.isfinite(features.values).sum())
        return fail("finite-outputs", f"{bad} non-finite output values")
    ok("finite-outputs", "all output values finite")

    return VerifyReport(backbone=backbone_name, checks=tuple(checks))


def _check_against_source(model: nn.Module, meta_path: Path, batch_size: int = 4) -> float:
    """Compare the exported graph's outputs with the source network's.

    Returns the max absolute difference; raises VerificationError when the
    two disagree beyond float32 reimplementation tolerance.
    """
    backbone = cxrtriage.load_backbone(meta_path)
    batch = _normalized_batch(backbone.spec, batch_size)
    ids = [f"agree_{i}" for i in range(batch_size)]
    ours = backbone.extract(batch, ids).values
    # float32, exactly what the downstream extractor feeds the graph
    stacked = np.stack([img.transpose(2, 0, 1) for img in batch]).astype(np.float32)
    with torch.no_grad():
        reference = model(torch.from_numpy(stacked)).numpy()
    max_abs = float(np.max(np.abs(ours - reference)))
    if not np.allclose(ours, reference, rtol=1e-3, atol=1e-3):
        raise VerificationError(
            f"exported graph disagrees with the source network: "
            f"max abs difference {max_abs:.3e} exceeds tolerance"
        )
    return max_abs


def export_backbone(req: ExportRequest) -> ExportResult:
    """Export one backbone: write model + metadata, then verify both.

    The written pair is checked two ways before the call returns: the
    downstream-loader checks of verify_export, and numeric agreement
    between the exported graph and the source network on a fixed batch.
    """
    model, weights_version = load_source_model(req.backbone, req.weights)
    _, _, tracer, expected_dim = _BACKBONES[req.backbone]
    traced = tracer(model)
    if traced.feature_dim != expected_dim:
        raise VerificationError(
            f"{req.backbone}: traced feature_dim {traced.feature_dim}, expected {expected_dim}"
        )
    model_bytes = build_model_bytes(traced, req.backbone, req.opset)
    digest = hashlib.sha256(model_bytes).hexdigest()

    out_dir = Path(req.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / f"{req.backbone}.onnx"
    meta_path = out_dir / f"{req.backbone}.json"
    model_path.write_bytes(model_bytes)
    meta = {
        "name": req.backbone,
        "input_side": INPUT_SIDE,
        "feature_dim": traced.feature_dim,
        "norm_mean": list(IMAGENET_MEAN),
        "norm_std": list(IMAGENET_STD),
        "model_file": model_path.name,
        "sha256": digest,
        "weights_version": weights_version,
        "opset": req.opset,
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")

    report = verify_export(model_path, meta_path)
    if not report.passed:
        raise VerificationError(report.summary())
    _check_against_source(model, meta_path)

    return ExportResult(
        backbone=req.backbone,
        model_path=model_path,
        meta_path=meta_path,
        feature_dim=traced.feature_dim,
        sha256=digest,
        weights_version=weights_version,
        report=report,
    )
