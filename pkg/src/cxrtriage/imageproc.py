"""Image decoding, bilinear resizing, normalization, and affine augmentation.

Images are H x W x 3 float arrays ("image tensors") with values in [0, 1]
before normalization.  Pixel centers sit at integer coordinates, x running
along columns and y along rows; resizing and warping both use the
half-pixel-center convention so a constant image stays constant.

Augmentation composes, in order: left-right reflection, top-bottom
reflection, rotation, horizontal shear, as a single affine warp about the
image center with bilinear sampling and zero padding outside the source.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError
from .rng import SplitMix64

ImageTensor = np.ndarray  # H x W x 3 float array, row-major


def check_image(img: ImageTensor) -> ImageTensor:
    """Validate the tensor contract: 3-channel, non-empty, finite."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected an H x W x 3 tensor, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageError("image has zero pixels")
    if not np.isfinite(arr).all():
        raise ImageError("image contains non-finite values")
    return arr


@dataclass(frozen=True)
class AugmentConfig:
    """Stochastic augmentation parameters.

    flip_x_prob mirrors left-right, flip_y_prob top-bottom; rotation is a
    symmetric bound in degrees and shear a symmetric unitless factor
    (x' = x + shear * y).  enabled=False makes augment the identity.
    """

    flip_x_prob: float = 0.5
    flip_y_prob: float = 0.5
    rotation_range_deg: float = 10.0
    shear_range: float = 0.3
    enabled: bool = True

    def __post_init__(self):
        for name in ("flip_x_prob", "flip_y_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ImageError(f"{name} must be in [0, 1], got {p}")
        for name in ("rotation_range_deg", "shear_range"):
            r = getattr(self, name)
            if r < 0:
                raise ImageError(f"{name} must be >= 0, got {r}")

    def as_dict(self) -> dict:
        return {
            "flip_x_prob": self.flip_x_prob,
            "flip_y_prob": self.flip_y_prob,
            "rotation_range_deg": self.rotation_range_deg,
            "shear_range": self.shear_range,
            "enabled": self.enabled,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**d)


def decode_image(data: bytes) -> ImageTensor:
    """Decode PNG or JPEG bytes to an H x W x 3 tensor in [0, 1].

    Grayscale inputs are replicated across the three channels.
    """
    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageError(f"could not decode image bytes: {exc}") from exc
    if arr.size == 0:
        raise ImageError("decoded image has zero pixels")
    return arr


def resize_bilinear(img: ImageTensor, out_h: int, out_w: int) -> ImageTensor:
    """Bilinear resize with half-pixel centers and edge clamping."""
    img = check_image(img)
    if out_h <= 0 or out_w <= 0:
        raise ImageError(f"target size must be positive, got {out_h}x{out_w}")
    in_h, in_w = img.shape[:2]

    def source_coords(out_n: int, in_n: int) -> np.ndarray:
        return (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5

    sx = source_coords(out_w, in_w)
    sy = source_coords(out_h, in_h)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)

    top = img[y0c][:, x0c] * (1 - fx)[None, :, None] + img[y0c][:, x1c] * fx[None, :, None]
    bot = img[y1c][:, x0c] * (1 - fx)[None, :, None] + img[y1c][:, x1c] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def decode_resize(data: bytes, side: int) -> ImageTensor:
    """Decode then resize to a square side x side tensor."""
    if side <= 0:
        raise ImageError(f"side must be positive, got {side}")
    return resize_bilinear(decode_image(data), side, side)


def build_affine(
    flip_x: bool,
    flip_y: bool,
    rotation_deg: float,
    shear: float,
    width: int,
    height: int,
) -> np.ndarray:
    """Forward 3x3 affine matrix about the image center.

    Applies flip_x, then flip_y, then rotation, then shear, in pixel
    coordinates (x = column, y = row).  Positive rotation turns the +x
    axis toward +y.
    """
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    lin = np.eye(2)
    if flip_x:
        lin = np.array([[-1.0, 0.0], [0.0, 1.0]]) @ lin
    if flip_y:
        lin = np.array([[1.0, 0.0], [0.0, -1.0]]) @ lin
    theta = math.radians(rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear_m = np.array([[1.0, shear], [0.0, 1.0]])
    lin = shear_m @ rot @ lin
    m = np.eye(3)
    m[:2, :2] = lin
    center = np.array([cx, cy])
    m[:2, 2] = center - lin @ center
    return m


def invert_affine(matrix: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a 3x3 affine (last row 0 0 1)."""
    lin = matrix[:2, :2]
    t = matrix[:2, 2]
    det = lin[0, 0] * lin[1, 1] - lin[0, 1] * lin[1, 0]
    if det == 0:
        raise ImageError("affine matrix is singular")
    inv_lin = np.array([[lin[1, 1], -lin[0, 1]], [-lin[1, 0], lin[0, 0]]]) / det
    out = np.eye(3)
    out[:2, :2] = inv_lin
    out[:2, 2] = -inv_lin @ t
    return out


def warp_affine(img: ImageTensor, matrix: np.ndarray) -> ImageTensor:
    """Warp by a forward affine: out(q) = in(matrix^-1 q), bilinear, zero-padded.

    Pixels whose pre-image falls outside the source are black, matching the
    radiograph background.
    """
    img = check_image(img)
    h, w = img.shape[:2]
    inv = invert_affine(np.asarray(matrix, dtype=float))
    ys, xs = np.mgrid[0:h, 0:w]
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(src_x).astype(int)
    y0 = np.floor(src_y).astype(int)
    fx = src_x - x0
    fy = src_y - y0

    out = np.zeros_like(img)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xi_c = np.clip(xi, 0, w - 1)
            yi_c = np.clip(yi, 0, h - 1)
            contrib = img[yi_c, xi_c] * weight[..., None]
            out += np.where(inside[..., None], contrib, 0.0)
    return out


def augment(img: ImageTensor, cfg: AugmentConfig, rng: SplitMix64) -> ImageTensor:
    """Stochastically augment one image.

    Draw order is fixed (flip_x, flip_y, rotation, shear) and all four
    draws are always consumed while enabled, so the stream for a fold is a
    pure function of (seed, sample order).
    """
    img = check_image(img)
    if not cfg.enabled:
        return img.copy()
    flip_x = rng.bernoulli(cfg.flip_x_prob)
    flip_y = rng.bernoulli(cfg.flip_y_prob)
    rotation = rng.uniform(-cfg.rotation_range_deg, cfg.rotation_range_deg)
    shear = rng.uniform(-cfg.shear_range, cfg.shear_range)
    h, w = img.shape[:2]
    matrix = build_affine(flip_x, flip_y, rotation, shear, width=w, height=h)
    return warp_affine(img, matrix)


def normalize(img: ImageTensor, mean, std) -> ImageTensor:
    """Per-channel (value - mean) / std."""
    img = check_image(img)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    std = np.asarray(std, dtype=float).reshape(-1)
    if mean.shape != (3,) or std.shape != (3,):
        raise ImageError("mean and std must each have three components")
    if np.any(std <= 0):
        raise ImageError(f"std components must be > 0, got {std.tolist()}")
    return (img - mean[None, None, :]) / std[None, None, :]


def denormalize(img: ImageTensor, mean, std) -> ImageTensor:
    """Inverse of normalize."""
    img = check_image(img)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    std = np.asarray(std, dtype=float).reshape(-1)
    return img * std[None, None, :] + mean[None, None, :]
