"""Procedural texture images for desk-scale runs of the whole pipeline."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from duca.errors import InvalidInputError

TEXTURES = ("stripes-h", "stripes-v", "checker", "rings")


def texture_image(kind: str, height: int, width: int, rng, period: float | None = None,
                  noise: float = 0.05) -> np.ndarray:
    """One ``height x width x 3`` texture with random period, phase and colours."""
    if period is None:
        period = rng.uniform(48.0, 96.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "stripes-h":
        wave = np.sin(2 * np.pi * yy / period + phase)
    elif kind == "stripes-v":
        wave = np.sin(2 * np.pi * xx / period + phase)
    elif kind == "checker":
        ox, oy = rng.uniform(0, period, size=2)
        half = period / 2
        wave = np.sign(np.sin(np.pi * (xx + ox) / half) * np.sin(np.pi * (yy + oy) / half))
    elif kind == "rings":
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        wave = np.sin(2 * np.pi * np.hypot(yy - cy, xx - cx) / period + phase)
    else:
        raise InvalidInputError(f"unknown texture {kind!r}")
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    t = (0.5 * (wave + 1.0))[..., None]
    img = c0 * (1.0 - t) + c1 * t
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def texture_dataset(n_per_class: int = 30, classes=TEXTURES, height: int = 288,
                    width_range=(288, 352), seed: int = 0):
    """Returns a list of ``(image_id, label, image)``."""
    rng = np.random.default_rng(seed)
    items = []
    for label in classes:
        for k in range(n_per_class):
            width = int(rng.integers(width_range[0], width_range[1] + 1))
            items.append((f"{label}-{k:03d}", label, texture_image(label, height, width, rng)))
    return items


def object_categories(n_images: int = 3, side: int = 256, seed: int = 1):
    """Stand-in for a labelled object-category set: each texture at a fine and
    a coarse scale. Returns ``[(name, [images])]``."""
    rng = np.random.default_rng(seed)
    cats = []
    for kind in TEXTURES:
        for scale, (lo, hi) in (("fine", (40.0, 60.0)), ("coarse", (70.0, 110.0))):
            imgs = [texture_image(kind, side, side, rng, period=rng.uniform(lo, hi))
                    for _ in range(n_images)]
            cats.append((f"{kind}-{scale}", imgs))
    return cats


def write_dataset(items, directory) -> Path:
    """Write PNGs plus a ``manifest.json``; returns the manifest path."""
    from PIL import Image

    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for index, (image_id, label, img) in enumerate(items):
        rel = Path("images") / f"{image_id}.png"
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(directory / rel)
        records.append({"id": image_id, "path": str(rel), "label": label, "index": index})
    classes = sorted({r["label"] for r in records})
    path = directory / "manifest.json"
    path.write_text(json.dumps({"classes": classes, "items": records}, indent=2))
    return path


def write_categories(categories, directory) -> Path:
    """Write an object-category manifest usable for supervised codebooks."""
    items = []
    for name, imgs in categories:
        for k, img in enumerate(imgs):
            items.append((f"{name}-{k:02d}", name, img))
    return write_dataset(items, directory)
