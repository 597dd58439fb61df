"""Deterministic synthetic fixtures: colored elliptical blobs on gradient
backgrounds, with exact polygon or RLE ground truth.

Useful for demos, benchmarks and end-to-end tests when no real dataset is
at hand. Everything derives from one seed, so a (root, seed, parameters)
triple always produces byte-identical images and annotations.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .coco import Dataset, parse_dataset
from .masks import polygons_to_mask, rle_encode


def _ellipse_polygon(cx, cy, rx, ry, tilt, vertices=28):
    poly = []
    cos_t, sin_t = math.cos(tilt), math.sin(tilt)
    for i in range(vertices):
        phi = 2.0 * math.pi * i / vertices
        ex, ey = rx * math.cos(phi), ry * math.sin(phi)
        poly.extend([
            round(cx + ex * cos_t - ey * sin_t, 2),
            round(cy + ex * sin_t + ey * cos_t, 2),
        ])
    return poly


def make_blob_dataset(
    root,
    n_images: int = 10,
    size: tuple[int, int] = (480, 640),  # (height, width)
    instances_per_image: tuple[int, int] = (1, 3),
    radius: tuple[float, float] = (25.0, 60.0),
    seed: int = 0,
    rle_fraction: float = 0.25,
    unlabelled_fraction: float = 0.0,
    category: tuple[int, str] = (1, "person"),
) -> tuple[Path, Path, Dataset]:
    """Write ``<root>/images/*.png`` plus ``<root>/annotations.json``.

    ``rle_fraction`` of the annotations use RLE segmentations instead of
    polygons; ``unlabelled_fraction`` of the images get one extra
    segmentation-free annotation (for exercising the fully-labelled filter).
    Returns (annotations path, images dir, parsed dataset).
    """
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    hh, ww = size
    cat_id, cat_name = category

    images = []
    annotations = []
    ann_id = 1
    for idx in range(n_images):
        image_id = idx + 1
        file_name = f"img_{image_id:04d}.png"
        # banded gradient background, different hue per image
        base = rng.integers(40, 200, size=3)
        ramp = np.linspace(0.6, 1.0, hh)[:, None, None]
        column = np.clip(base[None, None, :] * ramp, 0, 255).astype(np.uint8)
        img = np.broadcast_to(column, (hh, ww, 3)).copy()

        k = int(rng.integers(instances_per_image[0], instances_per_image[1] + 1))
        for _ in range(k):
            rx = float(rng.uniform(*radius))
            ry = float(rng.uniform(*radius))
            cx = float(rng.uniform(rx + 2, ww - rx - 2))
            cy = float(rng.uniform(ry + 2, hh - ry - 2))
            tilt = float(rng.uniform(0, math.pi))
            poly = _ellipse_polygon(cx, cy, rx, ry, tilt)
            mask = polygons_to_mask([poly], hh, ww)
            if not mask.any():
                continue
            color = rng.integers(0, 256, size=3)
            img[mask] = color
            # darker rim makes pasted copies visually traceable
            rim = mask & ~np.roll(np.roll(mask, 2, axis=0), 2, axis=1)
            img[rim] = (color * 0.5).astype(np.uint8)

            x, y, w, h = _bbox(mask)
            if rng.random() < rle_fraction:
                rle = rle_encode(mask)
                seg = {"size": [hh, ww], "counts": list(rle.counts)}
            else:
                seg = [poly]
            annotations.append({
                "id": ann_id, "image_id": image_id, "category_id": cat_id,
                "segmentation": seg, "bbox": [float(x), float(y), float(w), float(h)],
                "area": int(mask.sum()), "iscrowd": 0,
            })
            ann_id += 1

        if rng.random() < unlabelled_fraction:
            annotations.append({
                "id": ann_id, "image_id": image_id, "category_id": cat_id,
                "bbox": [1.0, 1.0, 4.0, 4.0], "area": 16, "iscrowd": 0,
            })
            ann_id += 1

        Image.fromarray(img).save(images_dir / file_name)
        images.append({"id": image_id, "file_name": file_name, "height": hh, "width": ww})

    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": cat_id, "name": cat_name}],
    }
    ann_path = root / "annotations.json"
    ann_path.write_text(json.dumps(doc))
    return ann_path, images_dir, parse_dataset(ann_path.read_text())


def _bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)
