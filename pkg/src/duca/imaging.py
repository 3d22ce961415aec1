"""Image geometry: min-side rescaling, the 16-variant augmentation set and the
dense sliding-window patch grid.

Images are float arrays of shape (H, W, 3) with values in [0, 1]. Every
function here is pure and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from duca.errors import InvalidInputError

DEFAULT_RESCALE = 700
DEFAULT_WINDOW = 224
DEFAULT_STRIDE = 32
ROTATION_ANGLE = math.pi / 6

BASE_TAGS = (
    "original",
    "crop-tl",
    "crop-tr",
    "crop-bl",
    "crop-br",
    "crop-center",
    "rot+30",
    "rot-30",
)
VARIANT_TAGS = BASE_TAGS + tuple(f"flip-{t}" for t in BASE_TAGS)

# Mirror partner of each base variant: flip(variant(img)) == partner(flip(img)).
MIRROR_PARTNER = {
    "original": "original",
    "crop-tl": "crop-tr",
    "crop-tr": "crop-tl",
    "crop-bl": "crop-br",
    "crop-br": "crop-bl",
    "crop-center": "crop-center",
    "rot+30": "rot-30",
    "rot-30": "rot+30",
}


class PatchRect(NamedTuple):
    x0: int
    y0: int
    side: int


@dataclass(frozen=True)
class Variant:
    tag: str
    image: np.ndarray


def as_image(data) -> np.ndarray:
    """Validate and convert to a float64 (H, W, 3) array in [0, 1].

    uint8 input is scaled by 1/255; a 2-D array is treated as grayscale.
    """
    arr = np.asarray(data)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float64) / 255.0
    else:
        arr = arr.astype(np.float64, copy=False)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"expected an HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"degenerate image of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError("image values must lie in [0, 1]")
    return arr


def _check(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected an HxWx3 image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidInputError(f"degenerate image of shape {img.shape}")
    return img


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = _check(img)
    if height < 1 or width < 1:
        raise InvalidInputError(f"target size {height}x{width} is degenerate")
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()
    lo, hi, fr = _axis_weights(h, height)
    rows = img[lo] * (1.0 - fr)[:, None, None] + img[hi] * fr[:, None, None]
    lo, hi, fr = _axis_weights(w, width)
    out = rows[:, lo] * (1.0 - fr)[None, :, None] + rows[:, hi] * fr[None, :, None]
    return np.clip(out, 0.0, 1.0)


def rescaled_shape(height: int, width: int, target: int) -> tuple[int, int]:
    scale = target / min(height, width)
    if height <= width:
        return target, max(1, int(round(width * scale)))
    return max(1, int(round(height * scale))), target


def rescale_min_side(img: np.ndarray, target: int) -> np.ndarray:
    """Bilinearly rescale so that the shorter side equals ``target``."""
    img = _check(img)
    if target < 1:
        raise InvalidInputError(f"rescale target must be >= 1, got {target}")
    h, w = img.shape[:2]
    return resize_bilinear(img, *rescaled_shape(h, w, target))


def hflip(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(_check(img)[:, ::-1])


def largest_inscribed_rect(width: float, height: float, angle: float) -> tuple[float, float]:
    """Largest axis-aligned rectangle inside a ``width`` x ``height`` rectangle
    rotated by ``angle`` about its centre."""
    if width <= 0 or height <= 0:
        return 0.0, 0.0
    long_side, short_side = (width, height) if width >= height else (height, width)
    sin_a, cos_a = abs(math.sin(angle)), abs(math.cos(angle))
    if short_side <= 2.0 * sin_a * cos_a * long_side or abs(sin_a - cos_a) < 1e-10:
        half = 0.5 * short_side
        if width >= height:
            return half / sin_a, half / cos_a
        return half / cos_a, half / sin_a
    cos_2a = cos_a * cos_a - sin_a * sin_a
    return (
        (width * cos_a - height * sin_a) / cos_2a,
        (height * cos_a - width * sin_a) / cos_2a,
    )


def _sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return np.clip(top * (1.0 - fy) + bottom * fy, 0.0, 1.0)


def rotate_crop(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the centre by ``angle`` radians (positive is counter-clockwise
    as displayed) and keep the largest axis-aligned interior rectangle, so no
    fill pixels appear in the result."""
    img = _check(img)
    h, w = img.shape[:2]
    # pixel centres span (w-1) x (h-1); sampling stays inside that footprint
    rw, rh = largest_inscribed_rect(w - 1, h - 1, angle)
    out_w = max(1, int(math.floor(rw + 1e-9)) + 1)
    out_h = max(1, int(math.floor(rh + 1e-9)) + 1)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    dy = np.arange(out_h) - (out_h - 1) / 2.0
    dx = np.arange(out_w) - (out_w - 1) / 2.0
    gy, gx = np.meshgrid(dy, dx, indexing="ij")
    c, s = math.cos(angle), math.sin(angle)
    # inverse map: output offset -> source offset (y axis points down)
    src_x = cx + c * gx - s * gy
    src_y = cy + s * gx + c * gy
    return _sample_bilinear(img, src_y, src_x)


def crop(img: np.ndarray, y0: int, x0: int, height: int, width: int) -> np.ndarray:
    return np.ascontiguousarray(img[y0 : y0 + height, x0 : x0 + width])


def augment(img: np.ndarray) -> list[Variant]:
    """Original, five 2/3-size crops, two +/-30 degree rotations, then the
    horizontal flip of each of those eight, in that order (16 variants)."""
    img = _check(img)
    h, w = img.shape[:2]
    if h < 3 or w < 3:
        raise InvalidInputError(f"augmentation needs at least a 3x3 image, got {h}x{w}")
    ch, cw = (2 * h) // 3, (2 * w) // 3
    base = [
        img.copy(),
        crop(img, 0, 0, ch, cw),
        crop(img, 0, w - cw, ch, cw),
        crop(img, h - ch, 0, ch, cw),
        crop(img, h - ch, w - cw, ch, cw),
        crop(img, (h - ch) // 2, (w - cw) // 2, ch, cw),
        rotate_crop(img, ROTATION_ANGLE),
        rotate_crop(img, -ROTATION_ANGLE),
    ]
    variants = [Variant(tag, im) for tag, im in zip(BASE_TAGS, base)]
    variants += [Variant(f"flip-{tag}", hflip(im)) for tag, im in zip(BASE_TAGS, base)]
    return variants


def grid_offsets(length: int, window: int, stride: int) -> list[int]:
    return list(range(0, length - window + 1, stride))


def patch_grid(height: int, width: int, window: int = DEFAULT_WINDOW,
               stride: int = DEFAULT_STRIDE) -> list[PatchRect]:
    """Row-major window positions at multiples of ``stride``; the trailing
    strip is left uncovered when it is narrower than a stride."""
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    if window < 1 or window > min(height, width):
        raise InvalidInputError(
            f"window {window} does not fit a {height}x{width} image"
        )
    ys = grid_offsets(height, window, stride)
    xs = grid_offsets(width, window, stride)
    return [PatchRect(x, y, window) for y in ys for x in xs]


def extract_patches(img: np.ndarray, rescale: int | None = DEFAULT_RESCALE,
                    window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE):
    """Rescale the min side to ``rescale`` (None keeps the size) and cut the
    dense grid. Returns ``(rects, patches)`` with patches stacked as an
    (N, window, window, 3) array."""
    img = _check(img)
    if rescale is not None:
        img = rescale_min_side(img, rescale)
    rects = patch_grid(img.shape[0], img.shape[1], window, stride)
    patches = np.stack([img[r.y0 : r.y0 + r.side, r.x0 : r.x0 + r.side] for r in rects])
    return rects, patches
