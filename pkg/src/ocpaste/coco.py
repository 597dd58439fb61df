"""In-memory model of COCO instance-segmentation documents.

Parsing keeps every unknown field (on the document, images, annotations and
categories) in ``extras`` dicts so a parse/serialize round trip reproduces
the input field for field. Stored ``area`` values in the wild are frequently
stale, so they are never trusted for geometry; :func:`find_stale_areas`
reports them and everything else recomputes areas from rasterized masks.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .masks import (
    RleMask,
    counts_to_string,
    polygons_to_mask,
    rle_decode,
    string_to_counts,
)

log = logging.getLogger(__name__)

_IMAGE_KEYS = ("id", "file_name", "height", "width")
_ANN_KEYS = ("id", "image_id", "category_id", "segmentation", "bbox", "area", "iscrowd")
_CAT_KEYS = ("id", "name")

Segmentation = "list[list[float]] | RleMask | None"


@dataclass
class ImageRecord:
    id: int
    file_name: str
    height: int
    width: int
    extras: dict = field(default_factory=dict)


@dataclass
class Category:
    id: int
    name: str
    extras: dict = field(default_factory=dict)


@dataclass
class InstanceAnnotation:
    id: int
    image_id: int
    category_id: int
    # None means the key was absent in the document; [] is present-but-empty.
    segmentation: list[list[float]] | RleMask | None = None
    bbox: tuple[float, float, float, float] | None = None
    area: float | None = None
    iscrowd: int | None = None
    extras: dict = field(default_factory=dict)

    def has_segmentation(self) -> bool:
        """True when the segmentation encodes a non-empty region."""
        seg = self.segmentation
        if seg is None:
            return False
        if isinstance(seg, RleMask):
            return seg.area > 0
        return any(len(p) >= 6 for p in seg)


@dataclass
class Dataset:
    images: list[ImageRecord] = field(default_factory=list)
    annotations: list[InstanceAnnotation] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def image_by_id(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    def annotations_by_image(self) -> dict[int, list[InstanceAnnotation]]:
        grouped: dict[int, list[InstanceAnnotation]] = {im.id: [] for im in self.images}
        for ann in self.annotations:
            grouped.setdefault(ann.image_id, []).append(ann)
        return grouped


def annotation_mask(ann: InstanceAnnotation, height: int, width: int) -> np.ndarray | None:
    """Rasterize an annotation's segmentation at the image resolution."""
    seg = ann.segmentation
    if seg is None:
        return None
    if isinstance(seg, RleMask):
        if seg.size != (height, width):
            raise ValidationError(
                f"annotation {ann.id}: RLE size {seg.size} does not match "
                f"image {height}x{width}"
            )
        return rle_decode(seg)
    polys = [p for p in seg if len(p) >= 6]
    if not polys:
        return None
    return polygons_to_mask(polys, height, width)


# ----------------------------------------------------------------- parsing

def _parse_segmentation(value, ann_id) -> "list[list[float]] | RleMask | None":
    if value is None:
        return None
    if isinstance(value, dict):
        try:
            h, w = value["size"]
            counts = value["counts"]
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"annotation {ann_id}: malformed RLE segmentation") from e
        if isinstance(counts, str):
            return RleMask(size=(int(h), int(w)), counts=string_to_counts(counts), compressed=True)
        return RleMask(size=(int(h), int(w)), counts=[int(c) for c in counts])
    if isinstance(value, list):
        return [[float(v) for v in poly] for poly in value]
    raise ValidationError(f"annotation {ann_id}: unsupported segmentation type {type(value).__name__}")


def _split_extras(entry: dict, known: tuple[str, ...]) -> dict:
    return {k: v for k, v in entry.items() if k not in known}


def parse_dataset(raw: str | bytes) -> Dataset:
    """Parse a COCO instances document into a :class:`Dataset`.

    Raises :class:`ParseError` for malformed JSON (with the byte offset) and
    :class:`ValidationError` for duplicate ids or dangling references.
    """
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON at byte {e.pos}: {e.msg}", offset=e.pos) from e
    if not isinstance(doc, dict):
        raise ParseError(f"top-level JSON value must be an object, got {type(doc).__name__}")

    images = []
    image_ids: set[int] = set()
    for entry in doc.get("images", []):
        try:
            rec = ImageRecord(
                id=int(entry["id"]),
                file_name=str(entry["file_name"]),
                height=int(entry["height"]),
                width=int(entry["width"]),
                extras=_split_extras(entry, _IMAGE_KEYS),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed image entry: {entry!r:.200}") from e
        if rec.height < 1 or rec.width < 1:
            raise ValidationError(
                f"image {rec.id}: dimensions must be positive, got {rec.height}x{rec.width}"
            )
        if rec.id in image_ids:
            raise ValidationError(f"duplicate image id {rec.id}")
        image_ids.add(rec.id)
        images.append(rec)

    categories = []
    category_ids: set[int] = set()
    for entry in doc.get("categories", []):
        cat = Category(
            id=int(entry["id"]),
            name=str(entry.get("name", "")),
            extras=_split_extras(entry, _CAT_KEYS),
        )
        if cat.id in category_ids:
            raise ValidationError(f"duplicate category id {cat.id}")
        category_ids.add(cat.id)
        categories.append(cat)

    annotations = []
    ann_ids: set[int] = set()
    for entry in doc.get("annotations", []):
        try:
            ann = InstanceAnnotation(
                id=int(entry["id"]),
                image_id=int(entry["image_id"]),
                category_id=int(entry["category_id"]),
                segmentation=_parse_segmentation(entry.get("segmentation"), entry.get("id")),
                bbox=tuple(float(v) for v in entry["bbox"]) if "bbox" in entry else None,
                area=float(entry["area"]) if "area" in entry else None,
                iscrowd=int(entry["iscrowd"]) if "iscrowd" in entry else None,
                extras=_split_extras(entry, _ANN_KEYS),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed annotation entry: {entry!r:.200}") from e
        if ann.id in ann_ids:
            raise ValidationError(f"duplicate annotation id {ann.id}")
        if ann.image_id not in image_ids:
            raise ValidationError(
                f"annotation {ann.id} references missing image_id {ann.image_id}"
            )
        if category_ids and ann.category_id not in category_ids:
            raise ValidationError(
                f"annotation {ann.id} references missing category_id {ann.category_id}"
            )
        ann_ids.add(ann.id)
        annotations.append(ann)

    extras = {k: v for k, v in doc.items() if k not in ("images", "annotations", "categories")}
    return Dataset(images=images, annotations=annotations, categories=categories, extras=extras)


# ------------------------------------------------------------- serialization

def segmentation_to_json(seg: "list[list[float]] | RleMask | None"):
    if seg is None:
        return None
    if isinstance(seg, RleMask):
        h, w = seg.size
        counts = counts_to_string(seg.counts) if seg.compressed else list(seg.counts)
        return {"size": [h, w], "counts": counts}
    return [list(p) for p in seg]


def annotation_to_json(ann: InstanceAnnotation) -> dict:
    entry: dict = {"id": ann.id, "image_id": ann.image_id, "category_id": ann.category_id}
    if ann.segmentation is not None:
        entry["segmentation"] = segmentation_to_json(ann.segmentation)
    if ann.bbox is not None:
        entry["bbox"] = list(ann.bbox)
    if ann.area is not None:
        entry["area"] = ann.area
    if ann.iscrowd is not None:
        entry["iscrowd"] = ann.iscrowd
    entry.update(ann.extras)
    return entry


def dataset_to_json(d: Dataset) -> dict:
    return {
        **d.extras,
        "images": [
            {"id": im.id, "file_name": im.file_name, "height": im.height,
             "width": im.width, **im.extras}
            for im in d.images
        ],
        "annotations": [annotation_to_json(a) for a in d.annotations],
        "categories": [{"id": c.id, "name": c.name, **c.extras} for c in d.categories],
    }


def serialize_dataset(d: Dataset) -> str:
    """Serialize back to COCO JSON; inverse of :func:`parse_dataset`."""
    return json.dumps(dataset_to_json(d), separators=(",", ":"))


# ------------------------------------------------------------------ filters

def filter_fully_labelled(d: Dataset) -> Dataset:
    """Keep only images whose every annotation has a non-empty segmentation.

    Images without annotations pass vacuously. Idempotent.
    """
    grouped = d.annotations_by_image()
    keep_ids = {
        im.id for im in d.images
        if all(a.has_segmentation() for a in grouped.get(im.id, ()))
    }
    images = [im for im in d.images if im.id in keep_ids]
    annotations = [a for a in d.annotations if a.image_id in keep_ids]
    log.info(
        "fully-labelled filter: kept %d/%d images, %d/%d annotations",
        len(images), len(d.images), len(annotations), len(d.annotations),
    )
    return Dataset(
        images=images,
        annotations=annotations,
        categories=list(d.categories),
        extras=dict(d.extras),
    )


def find_stale_areas(d: Dataset, rel_tol: float = 0.01, abs_tol: float = 5.0):
    """List annotations whose stored area disagrees with the rasterized mask.

    Returns (annotation id, stored area, rasterized area) triples for every
    annotation off by more than ``rel_tol`` relatively and ``abs_tol`` pixels.
    """
    dims = {im.id: (im.height, im.width) for im in d.images}
    stale = []
    for ann in d.annotations:
        if ann.area is None or not ann.has_segmentation():
            continue
        h, w = dims[ann.image_id]
        real = int(annotation_mask(ann, h, w).sum())
        if abs(real - ann.area) > max(rel_tol * ann.area, abs_tol):
            stale.append((ann.id, ann.area, real))
    return stale


# ---------------------------------------------------------------- paste pool

@dataclass(frozen=True)
class PoolEntry:
    annotation_id: int
    image_id: int
    side: float  # sqrt of the rasterized mask area, in pixels


@dataclass
class InstancePool:
    """Flat index of paste-eligible instances, grouped by source image.

    The eligibility rule that produced the pool is recorded so downstream
    consumers can tell what they are sampling from.
    """

    entries: list[PoolEntry] = field(default_factory=list)
    min_side_px: float = 0.0
    category_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        self.by_image: dict[int, list[PoolEntry]] = {}
        for e in self.entries:
            self.by_image.setdefault(e.image_id, []).append(e)
        self.image_ids: list[int] = sorted(self.by_image)

    def __len__(self) -> int:
        return len(self.entries)


def build_instance_pool(
    d: Dataset,
    min_side_px: float = 1.0,
    category_ids: "list[int] | tuple[int, ...] | None" = None,
) -> InstancePool:
    """Index annotations that are usable as paste sources.

    Eligible: non-empty segmentation, not a crowd, matching category (when a
    category set is given) and a recomputed mask side of at least
    ``min_side_px``. Stored areas are ignored; masks are rasterized.
    """
    cat_set = set(category_ids) if category_ids is not None else None
    dims = {im.id: (im.height, im.width) for im in d.images}
    entries = []
    for ann in d.annotations:
        if not ann.has_segmentation():
            continue
        if (ann.iscrowd or 0) != 0:
            continue
        if cat_set is not None and ann.category_id not in cat_set:
            continue
        if isinstance(ann.segmentation, RleMask):
            area = ann.segmentation.area
        else:
            h, w = dims[ann.image_id]
            area = int(annotation_mask(ann, h, w).sum())
        side = math.sqrt(area)
        if side < min_side_px:
            continue
        entries.append(PoolEntry(annotation_id=ann.id, image_id=ann.image_id, side=side))
    return InstancePool(
        entries=entries,
        min_side_px=min_side_px,
        category_ids=tuple(category_ids) if category_ids is not None else None,
    )
