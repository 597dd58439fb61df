"""Occlusion-inducing copy & paste augmentation for instance segmentation.

Typical use::

    from ocpaste import Augmenter, parse_dataset, preset

    dataset = parse_dataset(open("annotations.json").read())
    aug = Augmenter(dataset, "images/", preset("ocp-final"))
    sample = aug.augment_id(image_id=42, epoch=0)

``sample.image`` is the composited RGB array, ``sample.annotations`` the
rewritten COCO annotations and ``sample.provenance`` a record of what was
pasted, moved, occluded or removed.
"""

from .coco import (
    Category,
    Dataset,
    ImageRecord,
    InstanceAnnotation,
    annotation_mask,
    annotation_to_json,
    build_instance_pool,
    dataset_to_json,
    filter_fully_labelled,
    find_stale_areas,
    parse_dataset,
    serialize_dataset,
)
from .config import PRESETS, BlendSpec, OcpConfig, load_config, preset
from .engine import AugmentedSample, Augmenter, ProvenanceRecord, augment
from .errors import (
    CodecError,
    ConfigError,
    OcpasteError,
    ParseError,
    ValidationError,
)
from .evalkit import (
    EvalResult,
    OcclusionReport,
    PredictionInstance,
    average_precision,
    load_predictions,
    occlusion_stats,
)
from .masks import RleMask, polygons_to_mask, rle_decode, rle_encode
from .synthetic import make_blob_dataset

__version__ = "0.1.0"

__all__ = [
    "AugmentedSample",
    "Augmenter",
    "BlendSpec",
    "Category",
    "CodecError",
    "ConfigError",
    "Dataset",
    "EvalResult",
    "ImageRecord",
    "InstanceAnnotation",
    "OcclusionReport",
    "OcpConfig",
    "OcpasteError",
    "ParseError",
    "PredictionInstance",
    "PRESETS",
    "ProvenanceRecord",
    "RleMask",
    "ValidationError",
    "annotation_mask",
    "annotation_to_json",
    "augment",
    "average_precision",
    "build_instance_pool",
    "dataset_to_json",
    "filter_fully_labelled",
    "find_stale_areas",
    "load_config",
    "load_predictions",
    "make_blob_dataset",
    "occlusion_stats",
    "parse_dataset",
    "polygons_to_mask",
    "preset",
    "rle_decode",
    "rle_encode",
    "serialize_dataset",
    "__version__",
]
