"""The copy & paste engine.

One augmentation call walks a fixed pipeline: gate on ``p_cp``, sample a
basket of donor images, pick paste candidates from their instances, jitter
each candidate, then composite them one by one while rewriting the ground
truth of everything they occlude. All randomness for one sample comes from
a single generator stream seeded by (seed, base image id, epoch), so results
are reproducible regardless of how samples are scheduled across workers.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .coco import (
    Dataset,
    InstanceAnnotation,
    InstancePool,
    PoolEntry,
    annotation_mask,
    build_instance_pool,
)
from .config import OcpConfig, load_config
from .errors import ValidationError
from .jitter import apply_color_jitter, apply_geometric_jitter, sample_jitter
from .masks import affine_patch, composite, gaussian_alpha, mask_bbox, rle_encode

_U64 = (1 << 64) - 1


# ------------------------------------------------------------------- types

@dataclass
class PasteCandidate:
    """A donor instance cropped to its mask, after jitter."""

    source_annotation_id: int
    source_image_id: int
    patch: np.ndarray
    mask: np.ndarray
    category_id: int = 1
    jitter: dict = field(default_factory=dict)
    scale_factor: float = 1.0  # jitter scale x scale-aware factor, final
    position: tuple[int, int] | None = None  # top-left in the destination


@dataclass
class PasteEvent:
    """Provenance for one attempted paste, executed or dropped."""

    source_annotation_id: int
    source_image_id: int
    new_annotation_id: int | None = None
    position: tuple[int, int] | None = None
    jitter: dict | None = None
    scale_factor: float | None = None
    blend: dict | None = None
    placed_area: int = 0
    dropped: bool = False
    drop_reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "source_annotation_id": self.source_annotation_id,
            "source_image_id": self.source_image_id,
            "new_annotation_id": self.new_annotation_id,
            "position": list(self.position) if self.position is not None else None,
            "jitter": self.jitter,
            "scale_factor": self.scale_factor,
            "blend": self.blend,
            "placed_area": self.placed_area,
            "dropped": self.dropped,
            "drop_reason": self.drop_reason,
        }


@dataclass
class ProvenanceRecord:
    """Everything needed to audit (or replay) one augmented sample."""

    image_id: int
    epoch: int
    seed: int
    applied: bool
    p_draw: float
    pastes: list[PasteEvent] = field(default_factory=list)
    removed_ids: list[int] = field(default_factory=list)
    visible_fractions: dict[int, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "epoch": self.epoch,
            "seed": self.seed,
            "applied": self.applied,
            "p_draw": self.p_draw,
            "pastes": [p.to_dict() for p in self.pastes],
            "removed_ids": list(self.removed_ids),
            "visible_fractions": {str(k): v for k, v in self.visible_fractions.items()},
            "notes": list(self.notes),
        }


@dataclass
class AugmentedSample:
    image: np.ndarray
    annotations: list[InstanceAnnotation]
    provenance: ProvenanceRecord


@dataclass
class TrackedInstance:
    """Working state of one annotation while pastes land on top of it."""

    ann_id: int
    category_id: int
    mask: np.ndarray | None  # full-canvas boolean mask; None = no segmentation
    area: int
    start_area: int
    iscrowd: int = 0
    pasted: bool = False
    dirty: bool = False
    source: InstanceAnnotation | None = None


# ------------------------------------------------------------ sampling ops

def sample_basket(
    rng: np.random.Generator,
    pool: InstancePool,
    n_basket: int,
    exclude_image: int | None = None,
) -> list[int]:
    """Pick donor image ids uniformly without replacement, never the base."""
    ids = [i for i in pool.image_ids if i != exclude_image]
    k = min(n_basket, len(ids))
    if k <= 0:
        return []
    chosen = rng.choice(len(ids), size=k, replace=False)
    return [ids[int(i)] for i in chosen]


def select_candidates(
    rng: np.random.Generator,
    entries: list[PoolEntry],
    r_paste: tuple[int, int],
    loader,
) -> tuple[list[PasteCandidate], list[PasteEvent]]:
    """Draw the paste count from ``r_paste`` and crop that many donors.

    ``loader`` maps a pool entry to a (patch, mask) pair or None when the
    source pixels cannot be used; such candidates are skipped and logged,
    not replaced. The minimum-size filter runs later, in the paste loop,
    once jitter and scale-aware decisions have fixed the final mask size.
    """
    lo, hi = r_paste
    k = int(rng.integers(lo, hi + 1))
    k = min(k, len(entries))
    candidates: list[PasteCandidate] = []
    events: list[PasteEvent] = []
    if k <= 0:
        return candidates, events
    chosen = rng.choice(len(entries), size=k, replace=False)
    for i in chosen:
        entry = entries[int(i)]
        loaded = loader(entry)
        if loaded is None:
            events.append(PasteEvent(
                source_annotation_id=entry.annotation_id,
                source_image_id=entry.image_id,
                dropped=True, drop_reason="source unusable",
            ))
            continue
        patch, mask = loaded
        candidates.append(PasteCandidate(
            source_annotation_id=entry.annotation_id,
            source_image_id=entry.image_id,
            patch=patch, mask=mask,
        ))
    return candidates, events


def choose_position_random(
    rng: np.random.Generator,
    dest_hw: tuple[int, int],
    cand_hw: tuple[int, int],
) -> tuple[int, int]:
    """Uniform top-left position keeping the candidate center on canvas."""
    hh, ww = dest_hw
    ch, cw = cand_hw
    x = int(rng.integers(-(cw // 2), ww - cw // 2))
    y = int(rng.integers(-(ch // 2), hh - ch // 2))
    return x, y


def choose_position_targeted(
    rng: np.random.Generator,
    bboxes: list[tuple[float, float, float, float]],
    dest_hw: tuple[int, int],
    cand_hw: tuple[int, int],
    expand: float,
) -> tuple[int, int]:
    """Drop the candidate near one existing instance.

    An anchor box is picked uniformly, grown by ``expand`` times its width
    and height on each side, clipped to the canvas, and the candidate
    center lands uniformly inside it. Without anchors this degrades to
    :func:`choose_position_random` on the same rng stream.
    """
    if not bboxes:
        return choose_position_random(rng, dest_hw, cand_hw)
    hh, ww = dest_hw
    ch, cw = cand_hw
    bx, by, bw, bh = bboxes[int(rng.integers(0, len(bboxes)))]
    x0 = min(max(bx - expand * bw, 0.0), ww - 1.0)
    x1 = min(max(bx + bw + expand * bw, 0.0), ww - 1.0)
    y0 = min(max(by - expand * bh, 0.0), hh - 1.0)
    y1 = min(max(by + bh + expand * bh, 0.0), hh - 1.0)
    cx = _uniform_int(rng, x0, x1)
    cy = _uniform_int(rng, y0, y1)
    return cx - cw // 2, cy - ch // 2


def _uniform_int(rng: np.random.Generator, lo: float, hi: float) -> int:
    a, b = math.ceil(lo), math.floor(hi)
    if a > b:  # interval narrower than one pixel after clipping
        return int(round((lo + hi) / 2.0))
    return int(rng.integers(a, b + 1))


def scale_aware_factor(
    rng: np.random.Generator,
    sides: list[float],
    candidate_side: float,
    jitter_interval: tuple[float, float],
) -> float:
    """Rescale factor matching donor size to the destination's instances.

    The target side is drawn from the empirical side lengths of the
    instances already present, then wiggled by a relative jitter factor.
    With no instances to imitate the factor is 1.0 (no draw consumed).
    """
    if not sides:
        return 1.0
    target = float(rng.choice(np.asarray(sides, dtype=np.float64)))
    target *= float(rng.uniform(jitter_interval[0], jitter_interval[1]))
    return target / candidate_side


# ----------------------------------------------------- ground-truth rewrite

def update_ground_truth(
    tracked: list[TrackedInstance],
    pasted_mask: np.ndarray,
    visibility_threshold: float,
    min_visible_px: int,
    pasted_min_area: int = 0,
) -> tuple[list[TrackedInstance], list[int]]:
    """Punch ``pasted_mask`` out of every tracked mask and drop what is left
    too small.

    Visibility is measured against each instance's area at the start of the
    augmentation (for pasted instances: at paste time). An instance is
    removed when its visible fraction falls below the threshold or its
    pixel count below ``min_visible_px``; already-pasted instances are
    additionally held to ``pasted_min_area`` so that the minimum-size rule
    keeps holding after later pastes occlude them.
    """
    box = mask_bbox(pasted_mask)
    if box is None:
        return tracked, []
    x, y, w, h = box
    window = pasted_mask[y : y + h, x : x + w]
    survivors: list[TrackedInstance] = []
    removed: list[int] = []
    for t in tracked:
        if t.mask is None:
            survivors.append(t)
            continue
        sub = t.mask[y : y + h, x : x + w]
        overlap = int(np.count_nonzero(sub & window))
        if overlap:
            sub &= ~window
            t.area -= overlap
            t.dirty = True
        fraction = t.area / t.start_area if t.start_area else 0.0
        floor = max(min_visible_px, pasted_min_area if t.pasted else 0)
        if fraction < visibility_threshold or t.area < floor:
            removed.append(t.ann_id)
        else:
            survivors.append(t)
    return survivors, removed


# -------------------------------------------------------------- paste loop

def _draw_blend(rng: np.random.Generator, config: OcpConfig) -> tuple[int, float] | None:
    b = config.blend
    if b.mode == "off":
        return None
    if b.mode == "fixed":
        return b.kernel, b.sigma
    lo, hi = b.kernel_interval
    odd = [k for k in range(lo, hi + 1) if k % 2 == 1]
    kernel = int(rng.choice(odd))
    sigma = float(rng.uniform(b.sigma_interval[0], b.sigma_interval[1]))
    return kernel, sigma


def _tracked_bboxes(tracked: list[TrackedInstance]) -> list[tuple[float, float, float, float]]:
    out = []
    for t in tracked:
        if t.mask is not None:
            box = mask_bbox(t.mask)
            if box is not None:
                out.append(tuple(float(v) for v in box))
        elif t.source is not None and t.source.bbox is not None:
            out.append(t.source.bbox)
    return out


def paste_sequence(
    base_image: np.ndarray,
    tracked: list[TrackedInstance],
    candidates: list[PasteCandidate],
    config: OcpConfig,
    rng: np.random.Generator,
    next_id: int,
) -> tuple[np.ndarray | None, list[TrackedInstance], list[PasteEvent], list[int]]:
    """Composite candidates in order, rewriting ground truth after each.

    Later pastes freely occlude earlier ones. Returns the composited image
    (None when every candidate was dropped), the surviving tracked
    instances, one event per candidate and the removed annotation ids.
    """
    hh, ww = base_image.shape[:2]
    tau_area = int(math.ceil(config.min_size_ratio**2 * hh * ww)) if config.min_size_ratio > 0 else 0
    work: np.ndarray | None = None
    events: list[PasteEvent] = []
    removed_all: list[int] = []

    for cand in candidates:
        event = PasteEvent(
            source_annotation_id=cand.source_annotation_id,
            source_image_id=cand.source_image_id,
            jitter=dict(cand.jitter),
        )
        events.append(event)

        ch, cw = cand.mask.shape
        if config.placement == "targeted":
            x, y = choose_position_targeted(
                rng, _tracked_bboxes(tracked), (hh, ww), (ch, cw), config.targeted_expand
            )
        else:
            x, y = choose_position_random(rng, (hh, ww), (ch, cw))
        center = (x + cw // 2, y + ch // 2)

        patch, mask = cand.patch, cand.mask
        factor = 1.0
        if config.scale_aware:
            sides = [math.sqrt(t.area) for t in tracked if t.mask is not None and t.area > 0]
            factor = scale_aware_factor(
                rng, sides, math.sqrt(int(mask.sum())), config.scale_aware_jitter
            )
            if abs(factor - 1.0) > 1e-9:
                rescaled = affine_patch(patch, mask, factor, 0.0)
                if rescaled is None:
                    event.dropped = True
                    event.drop_reason = "degenerate after scale-aware rescale"
                    event.scale_factor = cand.jitter.get("scale", 1.0) * factor
                    continue
                patch, mask = rescaled
                ch, cw = mask.shape
                x, y = center[0] - cw // 2, center[1] - ch // 2
        cand.scale_factor = cand.jitter.get("scale", 1.0) * factor
        cand.position = (x, y)
        event.scale_factor = cand.scale_factor
        event.position = (x, y)

        # in-bounds footprint of the candidate mask
        dx0, dy0 = max(x, 0), max(y, 0)
        dx1, dy1 = min(x + cw, ww), min(y + ch, hh)
        full_area = int(mask.sum())
        if dx1 <= dx0 or dy1 <= dy0:
            event.dropped = True
            event.drop_reason = "fully outside canvas"
            continue
        sub = mask[dy0 - y : dy1 - y, dx0 - x : dx1 - x]
        placed_area = int(np.count_nonzero(sub))
        event.placed_area = placed_area

        if placed_area < max(config.min_visible_px, 1) or placed_area < config.visibility_threshold * full_area:
            event.dropped = True
            event.drop_reason = "below visibility floor after clipping"
            continue
        if tau_area and placed_area < tau_area:
            event.dropped = True
            event.drop_reason = "below minimum pasting size"
            continue

        blend = _draw_blend(rng, config)
        if blend is None:
            alpha = mask.astype(np.float64)
        else:
            alpha = gaussian_alpha(mask, blend[0], blend[1])
            event.blend = {"kernel": blend[0], "sigma": blend[1]}

        work = composite(base_image if work is None else work, patch, alpha, (x, y))

        placed = np.zeros((hh, ww), dtype=bool)
        placed[dy0:dy1, dx0:dx1] = sub
        tracked, removed = update_ground_truth(
            tracked, placed, config.visibility_threshold, config.min_visible_px,
            pasted_min_area=tau_area,
        )
        removed_all.extend(removed)

        tracked.append(TrackedInstance(
            ann_id=next_id,
            category_id=cand.category_id,
            mask=placed,
            area=placed_area,
            start_area=placed_area,
            pasted=True,
            dirty=True,
        ))
        event.new_annotation_id = next_id
        next_id += 1

    return work, tracked, events, removed_all


# ------------------------------------------------------------ pixel access

class PasteSource:
    """Dataset + pixels + pool bundle the engine pulls donors from."""

    def __init__(self, dataset: Dataset, image_root, pool: InstancePool, cache_size: int = 32):
        self.dataset = dataset
        self.pool = pool
        self.image_root = Path(image_root)
        self._images = dataset.image_by_id()
        self._anns = {a.id: a for a in dataset.annotations}
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_size = cache_size

    def image_path(self, image_id: int) -> Path:
        return self.image_root / self._images[image_id].file_name

    def load_image(self, image_id: int) -> np.ndarray:
        cached = self._cache.get(image_id)
        if cached is not None:
            self._cache.move_to_end(image_id)
            return cached
        path = self.image_path(image_id)
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
        self._cache[image_id] = arr
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return arr

    def basket_entries(self, basket: list[int]) -> list[PoolEntry]:
        entries: list[PoolEntry] = []
        for image_id in basket:
            entries.extend(sorted(self.pool.by_image.get(image_id, ()),
                                  key=lambda e: e.annotation_id))
        return entries

    def annotation(self, annotation_id: int) -> InstanceAnnotation:
        return self._anns[annotation_id]

    def load_candidate(self, entry: PoolEntry):
        """Crop (patch, mask) for a pool entry; None when unusable."""
        try:
            image = self.load_image(entry.image_id)
        except OSError:
            return None
        rec = self._images[entry.image_id]
        ann = self._anns[entry.annotation_id]
        try:
            mask = annotation_mask(ann, rec.height, rec.width)
        except ValidationError:
            return None
        if mask is None or not mask.any():
            return None
        if image.shape[:2] != mask.shape:
            return None
        x, y, w, h = mask_bbox(mask)
        return image[y : y + h, x : x + w].copy(), mask[y : y + h, x : x + w].copy()


# ------------------------------------------------------------- augment call

def augment(
    base_image: np.ndarray,
    base_annotations: list[InstanceAnnotation],
    source: PasteSource,
    config: OcpConfig,
    rng: np.random.Generator,
    *,
    image_id: int | None = None,
    epoch: int = 0,
    seed: int | None = None,
) -> AugmentedSample:
    """Run the full pipeline on one sample.

    Deterministic given (rng stream, config, inputs); the rng is normally
    derived from (seed, image id, epoch) by the caller. With probability
    1 - p_cp the input comes back untouched (zero copy).
    """
    if image_id is None:
        image_id = base_annotations[0].image_id if base_annotations else -1
    prov = ProvenanceRecord(
        image_id=image_id,
        epoch=epoch,
        seed=config.seed if seed is None else seed,
        applied=False,
        p_draw=float(rng.random()),
    )
    if prov.p_draw >= config.p_cp:
        prov.notes.append("skipped by p_cp gate")
        return AugmentedSample(base_image, list(base_annotations), prov)
    prov.applied = True

    hh, ww = base_image.shape[:2]
    basket = sample_basket(rng, source.pool, config.n_basket, exclude_image=image_id)
    entries = source.basket_entries(basket)
    candidates, skip_events = select_candidates(rng, entries, config.r_paste, source.load_candidate)
    prov.pastes.extend(skip_events)

    jittered: list[PasteCandidate] = []
    for cand in candidates:
        params = sample_jitter(rng, config.jitter)
        cand.jitter = params.to_dict()
        cand.category_id = source.annotation(cand.source_annotation_id).category_id
        patch = apply_color_jitter(cand.patch, cand.mask, params)
        geo = apply_geometric_jitter(patch, cand.mask, params)
        if geo is None:
            prov.pastes.append(PasteEvent(
                source_annotation_id=cand.source_annotation_id,
                source_image_id=cand.source_image_id,
                jitter=cand.jitter, dropped=True,
                drop_reason="degenerate after geometric jitter",
            ))
            continue
        cand.patch, cand.mask = geo
        jittered.append(cand)

    tracked: list[TrackedInstance] = []
    for ann in base_annotations:
        mask = annotation_mask(ann, hh, ww)
        if mask is None or not mask.any():
            tracked.append(TrackedInstance(
                ann_id=ann.id, category_id=ann.category_id, mask=None,
                area=0, start_area=0, iscrowd=ann.iscrowd or 0, source=ann,
            ))
        else:
            area = int(mask.sum())
            tracked.append(TrackedInstance(
                ann_id=ann.id, category_id=ann.category_id, mask=mask,
                area=area, start_area=area, iscrowd=ann.iscrowd or 0, source=ann,
            ))

    next_id = max((a.id for a in base_annotations), default=0) + 1
    work, tracked, events, removed = paste_sequence(
        base_image, tracked, jittered, config, rng, next_id
    )
    prov.pastes.extend(events)
    prov.removed_ids = removed

    if work is None:
        if not jittered:
            prov.notes.append("no candidates available")
        else:
            prov.notes.append("all candidates dropped")
        return AugmentedSample(base_image, list(base_annotations), prov)

    out_annotations: list[InstanceAnnotation] = []
    for t in tracked:
        if t.mask is None:
            out_annotations.append(t.source)
            continue
        prov.visible_fractions[t.ann_id] = t.area / t.start_area if t.start_area else 0.0
        box = mask_bbox(t.mask)
        bbox = tuple(float(v) for v in box)
        if t.pasted:
            seg = rle_encode(t.mask)
            seg.compressed = True
            out_annotations.append(InstanceAnnotation(
                id=t.ann_id, image_id=image_id, category_id=t.category_id,
                segmentation=seg, bbox=bbox, area=t.area, iscrowd=0,
            ))
        elif t.dirty:
            seg = rle_encode(t.mask)
            seg.compressed = True
            out_annotations.append(InstanceAnnotation(
                id=t.ann_id, image_id=t.source.image_id, category_id=t.category_id,
                segmentation=seg, bbox=bbox, area=t.area,
                iscrowd=t.source.iscrowd, extras=dict(t.source.extras),
            ))
        else:
            src = t.source
            out_annotations.append(InstanceAnnotation(
                id=src.id, image_id=src.image_id, category_id=src.category_id,
                segmentation=src.segmentation, bbox=bbox, area=t.area,
                iscrowd=src.iscrowd, extras=dict(src.extras),
            ))
    # keep input order first, pasted additions after, matching paste order
    return AugmentedSample(work, out_annotations, prov)


# ------------------------------------------------------------- entry point

class Augmenter:
    """Convenience wrapper tying a dataset, its pixels and a config together.

    The paste pool may come from a different annotation file than the base
    dataset (e.g. one with higher-quality masks) via ``pool_dataset``.
    """

    def __init__(
        self,
        dataset: Dataset,
        image_root,
        config: "OcpConfig | dict | str | None" = None,
        *,
        pool_dataset: Dataset | None = None,
        pool_image_root=None,
        pool_min_side_px: float = 1.0,
    ):
        self.config = load_config(config)
        self.dataset = dataset
        self.image_root = Path(image_root)
        pool_ds = pool_dataset if pool_dataset is not None else dataset
        pool = build_instance_pool(
            pool_ds, min_side_px=pool_min_side_px,
            category_ids=self.config.paste_category_ids,
        )
        self.source = PasteSource(
            pool_ds,
            pool_image_root if pool_image_root is not None else image_root,
            pool,
        )
        self._records = dataset.image_by_id()
        self._by_image = dataset.annotations_by_image()

    def rng_for(self, image_id: int, epoch: int = 0, seed: int | None = None) -> np.random.Generator:
        base = self.config.seed if seed is None else seed
        return np.random.default_rng([base & _U64, image_id & _U64, epoch & _U64])

    def load_base(self, image_id: int) -> tuple[np.ndarray, list[InstanceAnnotation]]:
        rec = self._records[image_id]
        path = self.image_root / rec.file_name
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
        if arr.shape[:2] != (rec.height, rec.width):
            raise ValidationError(
                f"image {image_id}: file {path} is {arr.shape[1]}x{arr.shape[0]} "
                f"but the record says {rec.width}x{rec.height}"
            )
        return arr, list(self._by_image.get(image_id, []))

    def augment_image(
        self,
        image: np.ndarray,
        annotations: list[InstanceAnnotation],
        *,
        image_id: int,
        epoch: int = 0,
        seed: int | None = None,
    ) -> AugmentedSample:
        rng = self.rng_for(image_id, epoch, seed)
        return augment(
            image, annotations, self.source, self.config, rng,
            image_id=image_id, epoch=epoch, seed=seed,
        )

    def augment_id(self, image_id: int, epoch: int = 0, seed: int | None = None) -> AugmentedSample:
        image, anns = self.load_base(image_id)
        return self.augment_image(image, anns, image_id=image_id, epoch=epoch, seed=seed)
