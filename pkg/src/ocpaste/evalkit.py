"""Segmentation-quality and occlusion-statistics reporting.

Average precision follows the familiar COCO protocol: greedy matching per
image at IoU thresholds 0.50:0.05:0.95, a global PR curve over predictions
sorted by descending score, and the precision envelope sampled at recall
0.00:0.01:1.00. The zero-recall sample is reported in the curve but carries
no weight in the average, so a detector that finds exactly half the objects
perfectly scores 0.5, not 51/101. Single class, whole area range, no
detection cap. Crowd regions are excluded from matching and from the
ground-truth denominator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .coco import Dataset, InstanceAnnotation, annotation_mask
from .errors import ValidationError
from .masks import RleMask, mask_iou, string_to_counts

IOU_THRESHOLDS = [round(0.5 + 0.05 * i, 2) for i in range(10)]
RECALL_POINTS = [round(0.01 * i, 2) for i in range(101)]


@dataclass
class PredictionInstance:
    image_id: int
    category_id: int
    segmentation: "list[list[float]] | RleMask"
    score: float


@dataclass
class EvalResult:
    ap: float
    per_threshold: dict[float, float]
    pr_curves: dict[float, list[float]]  # envelope precision at RECALL_POINTS
    gt_count: int
    prediction_count: int

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "pr_curves": {f"{t:.2f}": v for t, v in self.pr_curves.items()},
            "gt_count": self.gt_count,
            "prediction_count": self.prediction_count,
        }


def load_predictions(raw: str | bytes) -> list[PredictionInstance]:
    """Parse a COCO-results-style JSON array of segmentation predictions."""
    doc = json.loads(raw)
    if not isinstance(doc, list):
        raise ValidationError(f"predictions must be a JSON array, got {type(doc).__name__}")
    preds = []
    for i, entry in enumerate(doc):
        try:
            seg = entry["segmentation"]
            if isinstance(seg, dict):
                counts = seg["counts"]
                if isinstance(counts, str):
                    counts = string_to_counts(counts)
                seg = RleMask(size=tuple(int(v) for v in seg["size"]),
                              counts=[int(c) for c in counts])
            preds.append(PredictionInstance(
                image_id=int(entry["image_id"]),
                category_id=int(entry["category_id"]),
                segmentation=seg,
                score=float(entry["score"]),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"prediction {i} is malformed: {entry!r:.200}") from e
    return preds


def _prediction_mask(pred: PredictionInstance, height: int, width: int) -> np.ndarray:
    shim = InstanceAnnotation(
        id=-1, image_id=pred.image_id, category_id=pred.category_id,
        segmentation=pred.segmentation,
    )
    m = annotation_mask(shim, height, width)
    if m is None:
        m = np.zeros((height, width), dtype=bool)
    return m


def match_instances(
    preds: list[PredictionInstance],
    gts: list[InstanceAnnotation],
    iou_threshold: float,
    image_hw: tuple[int, int],
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching within a single image and category.

    Predictions are visited by descending score; each takes the unmatched
    ground truth with the highest mask IoU at or above the threshold, ties
    broken toward the lower gt id. Returns (prediction index, gt id) pairs.
    """
    hh, ww = image_hw
    gt_masks = [annotation_mask(g, hh, ww) for g in gts]
    iou = np.zeros((len(preds), len(gts)))
    for pi, p in enumerate(preds):
        pm = _prediction_mask(p, hh, ww)
        for gi, gm in enumerate(gt_masks):
            if gm is not None:
                iou[pi, gi] = mask_iou(pm, gm)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    return _greedy_match(iou, order, [g.id for g in gts], iou_threshold)


def _greedy_match(iou, pred_order, gt_ids, threshold) -> list[tuple[int, int]]:
    taken: set[int] = set()
    matches = []
    for pi in pred_order:
        best_gi = -1
        best = threshold - 1e-12
        for gi in range(len(gt_ids)):
            if gi in taken:
                continue
            v = iou[pi, gi]
            if v > best or (v == best and best_gi >= 0 and gt_ids[gi] < gt_ids[best_gi]):
                if v >= threshold:
                    best = v
                    best_gi = gi
        if best_gi >= 0:
            taken.add(best_gi)
            matches.append((pi, gt_ids[best_gi]))
    return matches


def _ap_from_flags(flags: list[bool], n_gt: int) -> tuple[float, list[float]]:
    """Interpolated AP and the sampled envelope, from per-prediction hit
    flags already in descending-score order."""
    if n_gt == 0:
        return 0.0, [0.0] * len(RECALL_POINTS)
    tp = 0
    fp = 0
    recalls = []
    precisions = []
    for hit in flags:
        tp += hit
        fp += not hit
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    # precision envelope, walked from the right
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    samples = []
    j = 0
    for r in RECALL_POINTS:
        while j < len(recalls) and recalls[j] < r - 1e-12:
            j += 1
        samples.append(precisions[j] if j < len(recalls) else 0.0)
    # the recall-0 sample is trivially the curve maximum; averaging it in
    # would score a detector finding k of n objects above k/n
    ap = sum(samples[1:]) / (len(samples) - 1)
    return ap, samples


def average_precision(
    preds: list[PredictionInstance],
    dataset: Dataset,
    thresholds: list[float] | None = None,
) -> EvalResult:
    """Mask AP of predictions against a dataset's ground truth.

    Evaluated per category and averaged, which collapses to plain AP when
    one category is present. Images with neither predictions nor ground
    truth contribute nothing.
    """
    thresholds = list(IOU_THRESHOLDS if thresholds is None else thresholds)
    dims = {im.id: (im.height, im.width) for im in dataset.images}
    categories = sorted({c.id for c in dataset.categories}
                        or {g.category_id for g in dataset.annotations}
                        or {p.category_id for p in preds})
    per_threshold: dict[float, list[float]] = {t: [] for t in thresholds}
    total_gt = 0

    for cat in categories:
        cat_gts: dict[int, list[InstanceAnnotation]] = {}
        for g in dataset.annotations:
            if g.category_id != cat or (g.iscrowd or 0) != 0:
                continue
            cat_gts.setdefault(g.image_id, []).append(g)
        cat_preds: dict[int, list[PredictionInstance]] = {}
        for p in preds:
            if p.category_id != cat:
                continue
            if p.image_id not in dims:
                raise ValidationError(
                    f"prediction references missing image_id {p.image_id}"
                )
            cat_preds.setdefault(p.image_id, []).append(p)
        n_gt = sum(len(v) for v in cat_gts.values())
        total_gt += n_gt
        if n_gt == 0 and not cat_preds:
            continue

        # global prediction order: score desc, then stable by (image, index)
        flat = [
            (p.score, img_id, idx)
            for img_id, plist in sorted(cat_preds.items())
            for idx, p in enumerate(plist)
        ]
        flat.sort(key=lambda t: (-t[0], t[1], t[2]))

        for thr in thresholds:
            matched: dict[tuple[int, int], bool] = {}
            for img_id, plist in cat_preds.items():
                pairs = match_instances(plist, cat_gts.get(img_id, []), thr,
                                        dims[img_id])
                for pi, _gt_id in pairs:
                    matched[(img_id, pi)] = True
            flags = [matched.get((img_id, idx), False) for _s, img_id, idx in flat]
            per_threshold[thr].append(_ap_from_flags(flags, n_gt))

    ap_by_thr = {}
    curves = {}
    for t, entries in per_threshold.items():
        if entries:
            ap_by_thr[t] = sum(ap for ap, _ in entries) / len(entries)
            curves[t] = [sum(c[i] for _, c in entries) / len(entries)
                         for i in range(len(RECALL_POINTS))]
        else:
            ap_by_thr[t] = 0.0
            curves[t] = [0.0] * len(RECALL_POINTS)
    mean_ap = sum(ap_by_thr.values()) / len(thresholds) if thresholds else 0.0
    return EvalResult(
        ap=mean_ap,
        per_threshold=ap_by_thr,
        pr_curves=curves,
        gt_count=total_gt,
        prediction_count=len(preds),
    )


# --------------------------------------------------------- occlusion report

@dataclass
class OcclusionReport:
    images: int
    annotations: int
    mean_instances_per_image: float
    overlapping_pairs_per_image: dict[int, int]
    total_overlapping_pairs: int
    images_with_overlap: int
    iou_histogram: list[int] = field(default_factory=lambda: [0] * 10)

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "annotations": self.annotations,
            "mean_instances_per_image": self.mean_instances_per_image,
            "overlapping_pairs_per_image": {
                str(k): v for k, v in sorted(self.overlapping_pairs_per_image.items())
            },
            "total_overlapping_pairs": self.total_overlapping_pairs,
            "images_with_overlap": self.images_with_overlap,
            "iou_histogram": list(self.iou_histogram),
        }

    def summary(self) -> str:
        return (
            f"{self.images} images, {self.annotations} annotations, "
            f"{self.mean_instances_per_image:.2f} instances/image; "
            f"{self.total_overlapping_pairs} overlapping pairs in "
            f"{self.images_with_overlap} images"
        )


def bbox_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix0, iy0 = max(ax, bx), max(ay, by)
    ix1, iy1 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


def occlusion_stats(dataset: Dataset) -> OcclusionReport:
    """How crowded a dataset is: pairwise bbox IoU over each image's
    annotations. Histogram bins are ten equal slices of (0, 1]."""
    dims = {im.id: (im.height, im.width) for im in dataset.images}
    boxes: dict[int, list] = {im.id: [] for im in dataset.images}
    for ann in dataset.annotations:
        box = ann.bbox
        if box is None and ann.has_segmentation():
            from .masks import mask_bbox  # local import avoids a cycle at module load

            hh, ww = dims[ann.image_id]
            box = mask_bbox(annotation_mask(ann, hh, ww))
        if box is not None:
            boxes.setdefault(ann.image_id, []).append(tuple(float(v) for v in box))

    pairs_per_image: dict[int, int] = {}
    histogram = [0] * 10
    total = 0
    for image_id, blist in boxes.items():
        count = 0
        for i in range(len(blist)):
            for j in range(i + 1, len(blist)):
                iou = bbox_iou(blist[i], blist[j])
                if iou > 0.0:
                    count += 1
                    histogram[min(int(iou * 10), 9)] += 1
        pairs_per_image[image_id] = count
        total += count

    n_images = len(dataset.images)
    return OcclusionReport(
        images=n_images,
        annotations=len(dataset.annotations),
        mean_instances_per_image=len(dataset.annotations) / n_images if n_images else 0.0,
        overlapping_pairs_per_image=pairs_per_image,
        total_overlapping_pairs=total,
        images_with_overlap=sum(1 for v in pairs_per_image.values() if v > 0),
        iou_histogram=histogram,
    )
