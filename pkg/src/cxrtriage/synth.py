"""Synthetic desk-scale corpus generator.

Produces grayscale PNGs whose class signal is spatial and trivially
learnable: POSITIVE images carry a bright Gaussian blob in the upper half,
NEGATIVE in the lower half, over Gaussian background noise.  Placement
margins keep the blob on its own side under modest rotation and shear, so
a pipeline configured without vertical flips stays separable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageError, ManifestError
from .manifest import Label, Manifest, SampleRecord, save_manifest
from .rng import derive_seed

IMAGE_SIDE = 96
NOISE_MEAN = 0.25
NOISE_STD = 0.05
BLOB_AMPLITUDE = 0.7
BLOB_SIGMA = 7.0
# Blob-center bands as fractions of the image side.  POSITIVE sits well
# inside the top half, NEGATIVE well inside the bottom half.
_POS_Y_BAND = (0.15, 0.35)
_NEG_Y_BAND = (0.65, 0.85)
_X_BAND = (0.30, 0.70)


def _render_image(rng: np.random.Generator, label: Label) -> np.ndarray:
    """One float image in [0, 1]: noise plus a class-positioned blob."""
    side = IMAGE_SIDE
    img = rng.normal(NOISE_MEAN, NOISE_STD, size=(side, side))
    y_band = _POS_Y_BAND if label is Label.POSITIVE else _NEG_Y_BAND
    cy = rng.uniform(y_band[0] * side, y_band[1] * side)
    cx = rng.uniform(_X_BAND[0] * side, _X_BAND[1] * side)
    yy, xx = np.mgrid[0:side, 0:side]
    img += BLOB_AMPLITUDE * np.exp(
        -((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * BLOB_SIGMA**2)
    )
    return np.clip(img, 0.0, 1.0)


def make_synthetic_corpus(
    n_pos: int, n_neg: int, seed: int, out_dir: str | Path
) -> Manifest:
    """Generate n_pos + n_neg PNGs under out_dir/images and write out_dir/manifest.csv.

    Image content depends only on (seed, row index, label), so regenerating
    with the same arguments reproduces every file.  Manifest image paths are
    relative to out_dir.
    """
    if n_pos < 1 or n_neg < 1:
        raise ManifestError(
            f"need at least one sample per class, got {n_pos} positive / {n_neg} negative"
        )
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageError(f"cannot create output directory {images_dir}: {exc}") from exc

    samples: list[SampleRecord] = []
    plan = [(Label.POSITIVE, "cov", j) for j in range(n_pos)]
    plan += [(Label.NEGATIVE, "nrm", j) for j in range(n_neg)]
    for i, (label, prefix, j) in enumerate(plan):
        rng = np.random.default_rng(derive_seed(seed, "img", i))
        img = _render_image(rng, label)
        sid = f"{prefix}{j + 1:04d}"
        rel_path = f"images/{sid}.png"
        pixels = np.round(img * 255.0).astype(np.uint8)
        try:
            Image.fromarray(pixels, mode="L").save(out_dir / rel_path, format="PNG")
        except OSError as exc:
            raise ImageError(f"cannot write {out_dir / rel_path}: {exc}") from exc
        samples.append(SampleRecord(sid, rel_path, label, "synthetic"))

    manifest = Manifest(samples=tuple(samples))
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
