"""In-process dataloader bindings for the ocpaste augmentation engine.

Two calls, nothing else: ``open_pool`` parses a dataset once and holds the
paste pool plus config behind an immutable handle; ``augment_sample`` runs
the streaming augmentation on an in-memory image buffer inside a dataloader
iteration. Annotations cross the boundary as plain dicts with COCO JSON keys,
so hosts never touch engine-internal types. All validation goes through the
same code paths as the ``ocpaste`` CLI, so a bad config or a malformed
annotation produces the exact same message here as there.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ocpaste import (
    Augmenter,
    Dataset,
    ValidationError,
    annotation_to_json,
    dataset_to_json,
    load_config,
    parse_dataset,
)

__version__ = "0.1.0"

__all__ = ["BoundSample", "PoolHandle", "augment_sample", "open_pool"]


@dataclass(frozen=True, eq=False)
class BoundSample:
    """One augmented training sample: contiguous HxWx3 uint8 pixels,
    annotations as COCO-style dicts, and the engine's provenance record."""

    image: np.ndarray
    annotations: list[dict]
    provenance: dict


class PoolHandle:
    """Opaque, immutable carrier for a parsed dataset and its paste pool.
    Safe to share across dataloader workers; picklable for fork/spawn hosts."""

    __slots__ = ("_augmenter", "_records")

    def __init__(self, augmenter: Augmenter):
        self._augmenter = augmenter
        self._records = augmenter.dataset.image_by_id()

    def __getstate__(self):
        return self._augmenter

    def __setstate__(self, augmenter):
        self._augmenter = augmenter
        self._records = augmenter.dataset.image_by_id()


def open_pool(dataset_path, image_root, config=None) -> PoolHandle:
    """Parse ``dataset_path`` and build the paste pool under ``config``.

    ``config`` may be None (defaults), a dict, a JSON string, a path to a
    JSON file, or a ready OcpConfig.
    """
    if isinstance(config, (str, Path)) and os.path.exists(config):
        config = Path(config).read_text(encoding="utf-8")
    dataset = parse_dataset(Path(dataset_path).read_text(encoding="utf-8"))
    return PoolHandle(Augmenter(dataset, image_root, load_config(config)))


def _parse_annotations(handle: PoolHandle, image_id: int, annotations):
    # round-trip through the dataset parser: same validation, same messages
    record = handle._records[image_id]
    doc = dataset_to_json(Dataset(
        images=[record],
        annotations=[],
        categories=handle._augmenter.dataset.categories,
    ))
    doc["annotations"] = [dict(a) for a in annotations]
    return parse_dataset(json.dumps(doc)).annotations


def augment_sample(handle: PoolHandle, image, annotations, seed: int,
                   *, image_id: int | None = None, epoch: int = 0) -> BoundSample:
    """Augment one sample; equal, field for field, to the core engine under
    the same (seed, config, inputs).

    ``image_id`` is read from the annotations when not given explicitly; the
    image buffer is used in place (no copy) whenever it is already contiguous
    uint8 RGB.
    """
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(
            f"image buffer must be HxWx3 uint8, got shape {arr.shape} "
            f"dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr)

    if image_id is None:
        ids = {a["image_id"] for a in annotations}
        if len(ids) != 1:
            raise ValidationError(
                "pass image_id= explicitly: the annotations name "
                f"{sorted(ids) if ids else 'no'} image ids")
        image_id = ids.pop()
    if image_id not in handle._records:
        ids = sorted(handle._records)
        listing = f"{ids[0]}..{ids[-1]}, {len(ids)} images" if ids else "none"
        raise ValidationError(
            f"image id {image_id} not in dataset (valid ids: {listing})")
    record = handle._records[image_id]
    if arr.shape[:2] != (record.height, record.width):
        raise ValidationError(
            f"image {image_id}: buffer is {arr.shape[1]}x{arr.shape[0]} but "
            f"the record says {record.width}x{record.height}")

    anns = _parse_annotations(handle, image_id, annotations)
    sample = handle._augmenter.augment_image(
        arr, anns, image_id=image_id, epoch=epoch, seed=seed)
    out = sample.image
    if not out.flags.c_contiguous:
        out = np.ascontiguousarray(out)
    return BoundSample(
        image=out,
        annotations=[annotation_to_json(a) for a in sample.annotations],
        provenance=sample.provenance.to_dict(),
    )
