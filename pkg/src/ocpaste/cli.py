"""Command-line interface.

``generate`` writes an augmented copy of a whole dataset (re-encoded images,
rewritten annotations, a provenance line per sample and a run manifest),
``preview`` renders one augmented image with its masks drawn on top,
``stats`` reports how much same-image overlap a dataset contains, and
``eval`` scores segmentation predictions against ground truth.

Exit codes: 0 success, 2 configuration problems, 3 file-system problems,
4 malformed or inconsistent data.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .coco import (
    Dataset,
    annotation_mask,
    filter_fully_labelled,
    parse_dataset,
    serialize_dataset,
)
from .config import load_config, preset
from .engine import Augmenter
from .errors import ConfigError, ParseError, ValidationError
from .evalkit import average_precision, load_predictions, occlusion_stats

logger = logging.getLogger("ocpaste")

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4

# 12 visually distinct overlay colors (RGB)
_PALETTE = [
    (230, 57, 70), (46, 196, 182), (255, 183, 3), (106, 76, 219),
    (67, 170, 139), (244, 114, 182), (2, 132, 199), (217, 119, 6),
    (132, 204, 22), (148, 63, 28), (14, 116, 144), (190, 24, 93),
]


def _read_text(path: "str | Path") -> str:
    return Path(path).read_text(encoding="utf-8")


def _resolve_config(args):
    if getattr(args, "preset", None) and getattr(args, "config", None):
        raise ConfigError("give either --preset or --config, not both")
    if getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif getattr(args, "config", None):
        cfg = load_config(_read_text(args.config))
    else:
        cfg = load_config(None)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


# ----------------------------------------------------------------- generate

# one engine per worker process, built in the pool initializer
_AUGMENTER: Augmenter | None = None


def _worker_init(dataset_path, image_root, config_dict, fully_labelled,
                 pool_path, pool_root):
    global _AUGMENTER
    ds = parse_dataset(_read_text(dataset_path))
    if fully_labelled:
        ds = filter_fully_labelled(ds)
    pool_ds = parse_dataset(_read_text(pool_path)) if pool_path else None
    _AUGMENTER = Augmenter(
        ds, image_root, config_dict,
        pool_dataset=pool_ds,
        pool_image_root=pool_root if pool_root else None,
    )


def _run_one(job):
    epoch, image_id, fmt = job
    t0 = time.perf_counter()
    try:
        image, anns = _AUGMENTER.load_base(image_id)
    except (OSError, ValidationError) as e:
        return {"epoch": epoch, "image_id": image_id, "skip": str(e)}
    t1 = time.perf_counter()
    sample = _AUGMENTER.augment_image(image, anns, image_id=image_id, epoch=epoch)
    t2 = time.perf_counter()
    buf = io.BytesIO()
    pil = Image.fromarray(sample.image)
    if fmt == "jpeg":
        pil.save(buf, format="JPEG", quality=95)
    else:
        pil.save(buf, format="PNG")
    t3 = time.perf_counter()
    return {
        "epoch": epoch,
        "image_id": image_id,
        "annotations": sample.annotations,
        "provenance": sample.provenance.to_dict(),
        "image_bytes": buf.getvalue(),
        "load_s": t1 - t0,
        "augment_s": t2 - t1,
        "encode_s": t3 - t2,
    }


def run_generate(args) -> int:
    config = _resolve_config(args)
    if args.epochs < 1:
        raise ConfigError("epochs must be a positive integer")
    if args.workers < 1:
        raise ConfigError("workers must be a positive integer")
    dataset = parse_dataset(_read_text(args.dataset))
    if args.fully_labelled_only:
        dataset = filter_fully_labelled(dataset)
    image_root = Path(args.images)
    if not image_root.is_dir():
        raise OSError(f"image root {image_root} is not a directory")
    if args.pool_dataset:
        parse_dataset(_read_text(args.pool_dataset))  # fail before any writes
    out = Path(args.out)
    if out.exists():
        raise OSError(f"output directory {out} already exists")

    fmt = "jpeg" if args.jpeg else "png"
    ext = "jpg" if args.jpeg else "png"
    init_args = (
        str(args.dataset), str(args.images), config.to_dict(),
        args.fully_labelled_only, args.pool_dataset, args.pool_images,
    )
    jobs = [(epoch, rec.id, fmt)
            for epoch in range(args.epochs) for rec in dataset.images]
    src_records = dataset.image_by_id()

    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "images").mkdir(parents=True)

    out_images = []
    out_annotations = []
    skipped = []
    next_ann_id = 0
    pasted_total = 0
    removed_total = 0
    latencies = []
    stage = {"load": 0.0, "augment": 0.0, "encode": 0.0}
    wall0 = time.perf_counter()

    try:
        with open(tmp / "provenance.jsonl", "w", encoding="utf-8") as prov_f:

            def consume(res):
                nonlocal next_ann_id, pasted_total, removed_total
                if "skip" in res:
                    logger.warning("skipping image %s (epoch %s): %s",
                                   res["image_id"], res["epoch"], res["skip"])
                    skipped.append({"epoch": res["epoch"],
                                    "image_id": res["image_id"],
                                    "reason": res["skip"]})
                    return
                new_img_id = len(out_images) + 1
                name = f"{res['epoch']:04d}_{res['image_id']:08d}.{ext}"
                (tmp / "images" / name).write_bytes(res["image_bytes"])
                rec = src_records[res["image_id"]]
                out_images.append(dataclasses.replace(
                    rec, id=new_img_id, file_name=name))
                prov = res["provenance"]
                pasted_ids = {p["new_annotation_id"] for p in prov["pastes"]
                              if not p["dropped"]}
                id_map = {}
                for ann in res["annotations"]:
                    next_ann_id += 1
                    out_annotations.append(dataclasses.replace(
                        ann, id=next_ann_id, image_id=new_img_id))
                    id_map[str(next_ann_id)] = None if ann.id in pasted_ids else ann.id
                line = dict(prov)
                line["output_image_id"] = new_img_id
                line["file_name"] = name
                line["id_map"] = id_map
                prov_f.write(json.dumps(line, separators=(",", ":"),
                                        sort_keys=True) + "\n")
                pasted_total += len(pasted_ids)
                removed_total += len(prov["removed_ids"])
                latencies.append(res["augment_s"] * 1000.0)
                for k in stage:
                    stage[k] += res[f"{k}_s"]

            if args.workers > 1:
                with ProcessPoolExecutor(max_workers=args.workers,
                                         initializer=_worker_init,
                                         initargs=init_args) as ex:
                    for res in ex.map(_run_one, jobs):
                        consume(res)
            else:
                _worker_init(*init_args)
                for job in jobs:
                    consume(_run_one(job))

        out_ds = Dataset(images=out_images, annotations=out_annotations,
                         categories=dataset.categories, extras=dataset.extras)
        (tmp / "annotations.json").write_text(serialize_dataset(out_ds),
                                              encoding="utf-8")
        wall = time.perf_counter() - wall0
        lat = np.asarray(latencies) if latencies else np.asarray([0.0])
        manifest = {
            "config": config.to_dict(),
            "inputs": {
                "dataset": str(args.dataset),
                "images": str(args.images),
                "pool_dataset": str(args.pool_dataset) if args.pool_dataset else None,
            },
            "output": str(out),
            "seed": config.seed,
            "epochs": args.epochs,
            "workers": args.workers,
            "image_format": fmt,
            "counts": {
                "images_processed": len(out_images),
                "images_skipped": len(skipped),
                "annotations_written": len(out_annotations),
                "instances_pasted": pasted_total,
                "instances_removed": removed_total,
            },
            "skipped": skipped,
            "timings_s": {"wall": round(wall, 6),
                          **{k: round(v, 6) for k, v in stage.items()}},
            "latency_ms": {
                "p50": float(np.percentile(lat, 50)),
                "p95": float(np.percentile(lat, 95)),
                "mean": float(lat.mean()),
                "max": float(lat.max()),
                "samples": len(latencies),
            },
        }
        (tmp / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        os.rename(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise

    print(f"wrote {len(out_images)} images, {len(out_annotations)} annotations "
          f"({pasted_total} pasted, {removed_total} removed, "
          f"{len(skipped)} skipped) to {out}")
    return 0


# ------------------------------------------------------------------ preview

def _erode(m: np.ndarray) -> np.ndarray:
    e = m.copy()
    e[1:, :] &= m[:-1, :]
    e[:-1, :] &= m[1:, :]
    e[:, 1:] &= m[:, :-1]
    e[:, :-1] &= m[:, 1:]
    e[0, :] = False
    e[-1, :] = False
    e[:, 0] = False
    e[:, -1] = False
    return e


def _dilate(m: np.ndarray) -> np.ndarray:
    d = m.copy()
    d[1:, :] |= m[:-1, :]
    d[:-1, :] |= m[1:, :]
    d[:, 1:] |= m[:, :-1]
    d[:, :-1] |= m[:, 1:]
    return d


def render_overlay(image: np.ndarray, annotations, pasted_ids,
                   hw: tuple[int, int]) -> np.ndarray:
    """Translucent per-instance fills plus outlines; pasted instances get an
    extra white ring so they stand out from pre-existing ones."""
    hh, ww = hw
    out = image.astype(np.float64)
    for idx, ann in enumerate(annotations):
        mask = annotation_mask(ann, hh, ww)
        if mask is None or not mask.any():
            continue
        color = np.asarray(_PALETTE[idx % len(_PALETTE)], dtype=np.float64)
        out[mask] = 0.55 * out[mask] + 0.45 * color
        boundary = mask & ~_erode(mask)
        out[boundary] = color
        if ann.id in pasted_ids:
            grown = _dilate(_dilate(mask))
            out[grown & ~_dilate(mask)] = 255.0
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def run_preview(args) -> int:
    config = _resolve_config(args)
    dataset = parse_dataset(_read_text(args.dataset))
    records = dataset.image_by_id()
    if args.image_id not in records:
        ids = sorted(records)
        listing = f"{ids[0]}..{ids[-1]}, {len(ids)} images" if ids else "none"
        raise ValidationError(
            f"image id {args.image_id} not in dataset (valid ids: {listing})")
    augmenter = Augmenter(dataset, args.images, config)
    sample = augmenter.augment_id(args.image_id)
    rec = records[args.image_id]
    pasted_ids = {p.new_annotation_id for p in sample.provenance.pastes
                  if not p.dropped}
    overlay = render_overlay(sample.image, sample.annotations, pasted_ids,
                             (rec.height, rec.width))
    out = Path(args.out) if args.out else Path(f"preview_{args.image_id}.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.tmp-{os.getpid()}"
    Image.fromarray(overlay).save(tmp, format="PNG")
    os.replace(tmp, out)
    print(f"wrote {out} ({len(sample.annotations)} instances, "
          f"{len(pasted_ids)} pasted)")
    return 0


# -------------------------------------------------------------- stats, eval

def run_stats(args) -> int:
    dataset = parse_dataset(_read_text(args.dataset))
    report = occlusion_stats(dataset)
    print(report.summary())
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(payload, end="")
    return 0


def run_eval(args) -> int:
    dataset = parse_dataset(_read_text(args.dataset))
    preds = load_predictions(_read_text(args.predictions))
    result = average_precision(preds, dataset)
    print(f"AP {result.ap:.3f}")
    for t in sorted(result.per_threshold):
        print(f"  AP@{t:.2f} {result.per_threshold[t]:.3f}")
    print(f"  ({result.prediction_count} predictions, "
          f"{result.gt_count} ground-truth instances)")
    if args.out:
        payload = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------- entrypoint

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocpaste",
        description="Occlusion-inducing copy & paste augmentation for "
                    "instance-segmentation datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common_config(p):
        p.add_argument("--config", help="path to a JSON config file")
        p.add_argument("--preset", help="named config preset")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    g = sub.add_parser("generate", help="write an augmented dataset")
    common_config(g)
    g.add_argument("--dataset", required=True, help="COCO annotation JSON")
    g.add_argument("--images", required=True, help="image directory")
    g.add_argument("--out", required=True, help="output directory (must not exist)")
    g.add_argument("--epochs", type=int, default=1,
                   help="augmented copies per base image")
    g.add_argument("--workers", type=int, default=1,
                   help="parallel worker processes")
    g.add_argument("--pool-dataset", default=None,
                   help="draw paste instances from this annotation file "
                        "instead of the base dataset")
    g.add_argument("--pool-images", default=None,
                   help="image directory for --pool-dataset")
    g.add_argument("--fully-labelled-only", action="store_true",
                   help="drop images that contain annotations without usable "
                        "segmentations")
    g.add_argument("--jpeg", action="store_true",
                   help="write JPEG instead of PNG (images stop being "
                        "byte-reproducible; annotations still are)")
    g.set_defaults(func=run_generate)

    p = sub.add_parser("preview", help="render one augmented image with masks")
    common_config(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--image-id", type=int, required=True)
    p.add_argument("--out", default=None, help="output PNG path")
    p.set_defaults(func=run_preview)

    s = sub.add_parser("stats", help="occlusion statistics for a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", default=None, help="write the JSON report here")
    s.set_defaults(func=run_stats)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--dataset", required=True, help="ground-truth COCO JSON")
    e.add_argument("--predictions", required=True,
                   help="JSON array of {image_id, category_id, segmentation, score}")
    e.add_argument("--out", default=None, help="write the JSON report here")
    e.set_defaults(func=run_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
