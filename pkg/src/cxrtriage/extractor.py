"""Frozen feature extractors: opaque pretrained backbones run as-is.

A backbone is an ONNX graph (one image input N x 3 x S x S, one feature
output N x D) plus a JSON metadata sidecar: name, input_side, feature_dim,
norm_mean, norm_std, model_file, sha256.  A dependency-free built-in
"toypool" backbone (16 x 16 grid of block means over a 224 x 224 input,
768 features) ships so everything runs without any exported model.

Feature files / cache entries are a one-line JSON header (rows, dim,
sample_ids) followed by little-endian float32 row-major data.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackboneError, CacheError, ShapeMismatchError
from .imageproc import ImageTensor, check_image
from .onnxrun import GraphRunner
from .onnxwire import parse_model

TOYPOOL_NAME = "toypool"
_TOYPOOL_GRID = 16
_TOYPOOL_SIDE = 224


@dataclass(frozen=True)
class BackboneSpec:
    """Metadata describing a frozen extractor."""

    name: str
    input_side: int
    feature_dim: int
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]
    model_path: str | None = None
    sha256: str | None = None

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise BackboneError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.input_side not in (224, 299):
            raise BackboneError(f"input_side must be 224 or 299, got {self.input_side}")


@dataclass(frozen=True)
class FeatureMatrix:
    """Row-per-sample feature block with aligned sample ids."""

    values: np.ndarray
    sample_ids: list[str]

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise BackboneError(f"feature values must be 2-D, got shape {arr.shape}")
        if arr.shape[0] != len(self.sample_ids):
            raise BackboneError(
                f"{arr.shape[0]} feature rows but {len(self.sample_ids)} sample ids"
            )
        if not np.isfinite(arr).all():
            raise BackboneError("feature matrix contains non-finite values")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def save_features(fm: FeatureMatrix, path: str | Path) -> None:
    """Write header line + raw float32 data atomically."""
    header = json.dumps(
        {"rows": fm.rows, "dim": fm.dim, "sample_ids": list(fm.sample_ids)},
        sort_keys=True,
    )
    payload = header.encode("utf-8") + b"\n" + np.ascontiguousarray(
        fm.values, dtype="<f4"
    ).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp_feat_")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)  # atomic: concurrent writers land a full file
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_features(path: str | Path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CacheError(f"feature file {path} has no header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        rows, dim = header["rows"], header["dim"]
        ids = header["sample_ids"]
    except (ValueError, KeyError) as exc:
        raise CacheError(f"feature file {path} has a bad header: {exc}") from exc
    body = raw[nl + 1 :]
    if len(body) != rows * dim * 4:
        raise CacheError(
            f"feature file {path}: expected {rows * dim * 4} data bytes, found {len(body)}"
        )
    values = np.frombuffer(body, dtype="<f4").reshape(rows, dim).copy()
    return FeatureMatrix(values=values, sample_ids=list(ids))


class LoadedBackbone:
    """A ready-to-run extractor: spec plus the function that maps batches to features."""

    def __init__(self, spec: BackboneSpec, run_batch, model_hash: str):
        self.spec = spec
        self._run_batch = run_batch
        self.model_hash = model_hash  # cache key component

    def extract(self, batch: list[ImageTensor], sample_ids: list[str]) -> FeatureMatrix:
        return extract(self, batch, sample_ids)


def _toypool_run(batch: np.ndarray) -> np.ndarray:
    """Mean over each cell of a 16 x 16 grid, per channel.

    batch is N x 3 x S x S with S divisible by 16; output N x 768 ordered
    (cell-major, channel-minor).
    """
    n, c, h, w = batch.shape
    g = _TOYPOOL_GRID
    bh, bw = h // g, w // g
    blocks = batch.reshape(n, c, g, bh, g, bw).mean(axis=(3, 5))  # N x C x g x g
    return blocks.transpose(0, 2, 3, 1).reshape(n, g * g * c).astype(np.float32)


def toypool_spec() -> BackboneSpec:
    return BackboneSpec(
        name=TOYPOOL_NAME,
        input_side=_TOYPOOL_SIDE,
        feature_dim=_TOYPOOL_GRID * _TOYPOOL_GRID * 3,
        norm_mean=(0.0, 0.0, 0.0),
        norm_std=(1.0, 1.0, 1.0),
    )


def _shape_matches(declared: tuple, expected: tuple) -> bool:
    """Compare a graph shape against (None, c, s, s)-style expectations.

    None in either position means "any" (symbolic batch dim)."""
    if len(declared) != len(expected):
        return False
    for d, e in zip(declared, expected):
        if d is not None and e is not None and d != e:
            return False
    return True


def load_backbone(spec_path: str | Path) -> LoadedBackbone:
    """Load a backbone from a metadata sidecar path, or "toypool" for the built-in.

    Validates eagerly: metadata fields, model file hash, and the graph's
    declared input/output shapes against input_side and feature_dim.
    """
    if str(spec_path) == TOYPOOL_NAME:
        return LoadedBackbone(toypool_spec(), _toypool_run, model_hash="builtin:toypool")

    meta_path = Path(spec_path)
    if not meta_path.exists():
        raise BackboneError(f"backbone metadata not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except ValueError as exc:
        raise BackboneError(f"backbone metadata {meta_path} is not valid JSON: {exc}") from exc
    for key in ("name", "input_side", "feature_dim", "norm_mean", "norm_std", "model_file", "sha256"):
        if key not in meta:
            raise BackboneError(f"backbone metadata {meta_path} is missing field {key!r}")
    spec = BackboneSpec(
        name=meta["name"],
        input_side=int(meta["input_side"]),
        feature_dim=int(meta["feature_dim"]),
        norm_mean=tuple(float(v) for v in meta["norm_mean"]),
        norm_std=tuple(float(v) for v in meta["norm_std"]),
        model_path=str(meta_path.parent / meta["model_file"]),
        sha256=meta["sha256"],
    )
    model_file = Path(spec.model_path)
    if not model_file.exists():
        raise BackboneError(f"backbone model file not found: {model_file}")
    blob = model_file.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != spec.sha256:
        raise BackboneError(
            f"model file hash mismatch for {model_file}: metadata says {spec.sha256}, "
            f"file is {digest}"
        )
    runner = GraphRunner(parse_model(blob))
    s = spec.input_side
    if not _shape_matches(runner.input_shape, (None, 3, s, s)):
        raise ShapeMismatchError(
            f"graph input shape {runner.input_shape} does not match N x 3 x {s} x {s}"
        )
    if not _shape_matches(runner.output_shape, (None, spec.feature_dim)):
        raise ShapeMismatchError(
            f"graph output shape {runner.output_shape} does not match "
            f"N x {spec.feature_dim}"
        )
    return LoadedBackbone(spec, runner.run, model_hash=digest)


def extract(
    backbone: LoadedBackbone, batch: list[ImageTensor], sample_ids: list[str]
) -> FeatureMatrix:
    """Run the frozen extractor over a batch of normalized image tensors.

    Order-preserving, one row per input; inference only, so repeated calls
    agree bitwise.
    """
    if not batch:
        raise BackboneError("extract requires a non-empty batch")
    if len(batch) != len(sample_ids):
        raise BackboneError(f"{len(batch)} images but {len(sample_ids)} sample ids")
    side = backbone.spec.input_side
    stacked = np.empty((len(batch), 3, side, side), dtype=np.float32)
    for i, img in enumerate(batch):
        arr = check_image(img)
        if arr.shape[0] != side or arr.shape[1] != side:
            raise ShapeMismatchError(
                f"batch item {i} has shape {arr.shape[:2]}, expected {side} x {side}"
            )
        stacked[i] = arr.transpose(2, 0, 1)
    values = np.asarray(backbone._run_batch(stacked))
    if values.shape != (len(batch), backbone.spec.feature_dim):
        raise ShapeMismatchError(
            f"extractor returned shape {values.shape}, expected "
            f"({len(batch)}, {backbone.spec.feature_dim})"
        )
    if not np.isfinite(values).all():
        raise BackboneError("extractor produced non-finite features (corrupt model?)")
    return FeatureMatrix(values=values.astype(np.float32), sample_ids=list(sample_ids))


class FeatureCache:
    """Disk cache of per-image feature rows.

    Keys combine the model hash, the image tensor's content hash, and a
    preprocessing descriptor, so any change to weights, pixels, or
    preprocessing invalidates the entry.  Writes go through a temp file +
    atomic rename and are safe under concurrent writers.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def image_key(img: ImageTensor) -> str:
        arr = np.ascontiguousarray(np.asarray(img), dtype="<f8")
        h = hashlib.sha256()
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
        return h.hexdigest()

    def _entry_path(self, model_hash: str, image_key: str, preproc: str) -> Path:
        digest = hashlib.sha256(
            "\x1f".join([model_hash, image_key, preproc]).encode("utf-8")
        ).hexdigest()
        return self.root / digest[:2] / f"{digest}.feat"

    def get(self, model_hash: str, image_key: str, preproc: str) -> np.ndarray | None:
        path = self._entry_path(model_hash, image_key, preproc)
        if not path.exists():
            return None
        try:
            return load_features(path).values[0]
        except CacheError:
            return None  # treat a torn/corrupt entry as a miss

    def put(self, model_hash: str, image_key: str, preproc: str, row: np.ndarray,
            sample_id: str) -> None:
        path = self._entry_path(model_hash, image_key, preproc)
        fm = FeatureMatrix(values=np.asarray(row, dtype=np.float32).reshape(1, -1),
                           sample_ids=[sample_id])
        save_features(fm, path)


def extract_cached(
    backbone: LoadedBackbone,
    batch: list[ImageTensor],
    sample_ids: list[str],
    cache: FeatureCache | None,
    preproc: str,
) -> FeatureMatrix:
    """extract(), but with per-image rows served from / stored to the cache."""
    if cache is None:
        return extract(backbone, batch, sample_ids)
    keys = [FeatureCache.image_key(img) for img in batch]
    rows: list[np.ndarray | None] = [
        cache.get(backbone.model_hash, k, preproc) for k in keys
    ]
    missing = [i for i, r in enumerate(rows) if r is None or r.shape != (backbone.spec.feature_dim,)]
    if missing:
        computed = extract(
            backbone, [batch[i] for i in missing], [sample_ids[i] for i in missing]
        )
        for j, i in enumerate(missing):
            rows[i] = computed.values[j]
            cache.put(backbone.model_hash, keys[i], preproc, computed.values[j], sample_ids[i])
    values = np.stack([r for r in rows])  # type: ignore[arg-type]
    return FeatureMatrix(values=values.astype(np.float32), sample_ids=list(sample_ids))
