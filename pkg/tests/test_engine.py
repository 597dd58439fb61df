"""Engine behavior: sampling ops, placement, ground-truth rewriting and the
full augmentation call."""

import dataclasses
import json

import numpy as np
import pytest

from invariants import check_sample, pasted_ids_of
from ocpaste.coco import InstancePool, PoolEntry, annotation_mask, parse_dataset
from ocpaste.config import OcpConfig, preset
from ocpaste.engine import (
    Augmenter,
    TrackedInstance,
    choose_position_random,
    choose_position_targeted,
    sample_basket,
    scale_aware_factor,
    select_candidates,
    update_ground_truth,
)
from ocpaste.jitter import disabled_jitter


def rng_(seed=0):
    return np.random.default_rng(seed)


# helpers --------------------------------------------------------------------

def small_pool():
    entries = [
        PoolEntry(annotation_id=10, image_id=1, side=20.0),
        PoolEntry(annotation_id=11, image_id=2, side=25.0),
        PoolEntry(annotation_id=12, image_id=2, side=30.0),
        PoolEntry(annotation_id=13, image_id=3, side=15.0),
    ]
    return InstancePool(entries=entries, min_side_px=1.0)


# ----------------------------------------------------------------- sampling

def test_sample_basket_excludes_base_image():
    pool = small_pool()
    for seed in range(40):
        basket = sample_basket(rng_(seed), pool, 2, exclude_image=2)
        assert 2 not in basket
        assert len(basket) == 2
        assert len(set(basket)) == 2


def test_sample_basket_caps_at_pool_size():
    pool = small_pool()
    basket = sample_basket(rng_(1), pool, 10, exclude_image=1)
    assert sorted(basket) == [2, 3]
    assert sample_basket(rng_(1), pool, 10, exclude_image=None) != []


def test_sample_basket_empty_pool():
    pool = InstancePool(entries=[])
    assert sample_basket(rng_(0), pool, 3) == []


def test_select_candidates_count_within_range():
    entries = small_pool().entries
    loader = lambda e: (np.zeros((4, 4, 3), np.uint8), np.ones((4, 4), bool))
    seen = set()
    for seed in range(60):
        cands, events = select_candidates(rng_(seed), entries, (1, 3), loader)
        seen.add(len(cands))
        assert 1 <= len(cands) <= 3
        assert not events
    assert seen == {1, 2, 3}


def test_select_candidates_fewer_when_unavailable():
    entries = small_pool().entries[:2]
    loader = lambda e: (np.zeros((4, 4, 3), np.uint8), np.ones((4, 4), bool))
    cands, _ = select_candidates(rng_(3), entries, (4, 6), loader)
    assert len(cands) == 2


def test_select_candidates_zero_range():
    cands, events = select_candidates(rng_(0), small_pool().entries, (0, 0), lambda e: None)
    assert cands == [] and events == []


def test_select_candidates_logs_unusable_sources():
    entries = small_pool().entries
    loader = lambda e: None
    cands, events = select_candidates(rng_(0), entries, (2, 2), loader)
    assert cands == []
    assert len(events) == 2
    assert all(e.dropped and e.drop_reason == "source unusable" for e in events)


# ---------------------------------------------------------------- placement

def test_choose_position_random_one_pixel_candidate():
    xs, ys = set(), set()
    for seed in range(400):
        x, y = choose_position_random(rng_(seed), (10, 10), (1, 1))
        assert 0 <= x <= 9 and 0 <= y <= 9
        xs.add(x)
        ys.add(y)
    assert xs == set(range(10)) and ys == set(range(10))


def test_choose_position_random_center_stays_inside():
    for seed in range(200):
        r = rng_(seed)
        ch, cw = int(r.integers(1, 60)), int(r.integers(1, 60))
        x, y = choose_position_random(r, (48, 64), (ch, cw))
        assert 0 <= x + cw // 2 <= 63
        assert 0 <= y + ch // 2 <= 47


def test_choose_position_random_candidate_as_large_as_dest():
    x, y = choose_position_random(rng_(0), (10, 10), (10, 10))
    assert -5 <= x <= 4 and -5 <= y <= 4


def test_choose_position_targeted_zero_expand_centers_in_bbox():
    boxes = [(10.0, 10.0, 20.0, 20.0)]
    for seed in range(300):
        x, y = choose_position_targeted(rng_(seed), boxes, (100, 100), (8, 8), 0.0)
        cx, cy = x + 4, y + 4
        assert 10 <= cx <= 30 and 10 <= cy <= 30


def test_choose_position_targeted_expansion_widens_region():
    boxes = [(40.0, 40.0, 20.0, 20.0)]
    centers = set()
    for seed in range(500):
        x, y = choose_position_targeted(rng_(seed), boxes, (200, 200), (2, 2), 0.3)
        centers.add((x + 1, y + 1))
    xs = [c[0] for c in centers]
    assert min(xs) == 34 and max(xs) == 66  # 40 - 6 .. 60 + 6


def test_choose_position_targeted_fallback_matches_random_stream():
    for seed in range(50):
        a = choose_position_targeted(rng_(seed), [], (60, 80), (9, 9), 0.3)
        b = choose_position_random(rng_(seed), (60, 80), (9, 9))
        assert a == b


def test_choose_position_targeted_region_clipped_to_canvas():
    boxes = [(90.0, 90.0, 30.0, 30.0)]  # spills past a 100x100 canvas
    for seed in range(200):
        x, y = choose_position_targeted(rng_(seed), boxes, (100, 100), (4, 4), 0.5)
        assert 0 <= x + 2 <= 99 and 0 <= y + 2 <= 99


# -------------------------------------------------------------- scale aware

def test_scale_aware_factor_simple_ratio():
    f = scale_aware_factor(rng_(0), [100.0], 50.0, (1.0, 1.0))
    assert f == pytest.approx(2.0)


def test_scale_aware_factor_no_instances_is_identity():
    r = rng_(7)
    before = r.bit_generator.state["state"]["state"]
    assert scale_aware_factor(r, [], 50.0, (0.9, 1.1)) == 1.0
    assert r.bit_generator.state["state"]["state"] == before  # no draw consumed


def test_scale_aware_factor_jitter_window():
    for seed in range(100):
        f = scale_aware_factor(rng_(seed), [60.0], 30.0, (0.9, 1.1))
        assert 2.0 * 0.9 <= f <= 2.0 * 1.1


# ---------------------------------------------------- ground truth rewriting

def _tracked_square(ann_id, y0, x0, side, hw=(40, 40)):
    m = np.zeros(hw, dtype=bool)
    m[y0 : y0 + side, x0 : x0 + side] = True
    area = int(m.sum())
    return TrackedInstance(ann_id=ann_id, category_id=1, mask=m, area=area, start_area=area)


def test_update_ground_truth_disjoint_paste_changes_nothing():
    t = _tracked_square(1, 0, 0, 10)
    paste = np.zeros((40, 40), dtype=bool)
    paste[20:30, 20:30] = True
    survivors, removed = update_ground_truth([t], paste, 0.1, 16)
    assert removed == []
    assert not survivors[0].dirty
    assert survivors[0].area == 100


def test_update_ground_truth_heavy_occlusion_removes():
    t = _tracked_square(1, 0, 0, 10)
    paste = np.zeros((40, 40), dtype=bool)
    paste[0:10, 0:10] = True
    paste[5, 5] = False  # leave 1 px visible: fraction 0.01 < 0.1
    survivors, removed = update_ground_truth([t], paste, 0.1, 16)
    assert removed == [1] and survivors == []


def test_update_ground_truth_partial_occlusion_rewrites():
    t = _tracked_square(1, 0, 0, 10)
    paste = np.zeros((40, 40), dtype=bool)
    paste[0:10, 0:5] = True  # covers half
    survivors, removed = update_ground_truth([t], paste, 0.1, 16)
    assert removed == []
    s = survivors[0]
    assert s.dirty and s.area == 50
    assert not (s.mask & paste).any()


def test_update_ground_truth_min_visible_px_floor():
    t = _tracked_square(1, 0, 0, 10)
    paste = np.zeros((40, 40), dtype=bool)
    paste[0:10, 0:10] = True
    paste[0, 0:12] = False  # 10 px visible, fraction 0.1 passes but px floor fails
    survivors, removed = update_ground_truth([t], paste, 0.1, 16)
    assert removed == [1]


def test_update_ground_truth_pasted_held_to_min_area():
    t = _tracked_square(1, 0, 0, 10)
    t.pasted = True
    paste = np.zeros((40, 40), dtype=bool)
    paste[0:10, 0:6] = True  # 40 px left, fraction 0.4
    survivors, removed = update_ground_truth([t], paste, 0.1, 16, pasted_min_area=50)
    assert removed == [1]


# ------------------------------------------------------------- full augment

@pytest.fixture(scope="module")
def augmenter(blob_fixture):
    _ann_path, images_dir, dataset = blob_fixture
    config = dataclasses.replace(OcpConfig(), p_cp=1.0, seed=9)
    return Augmenter(dataset, images_dir, config)


def test_augment_invariants_over_many_samples(augmenter):
    dataset = augmenter.dataset
    grouped = dataset.annotations_by_image()
    checked_pastes = 0
    for epoch in range(4):
        for rec in dataset.images:
            sample = augmenter.augment_id(rec.id, epoch=epoch)
            check_sample(sample, grouped[rec.id], augmenter.config,
                         (rec.height, rec.width))
            checked_pastes += len(pasted_ids_of(sample))
    assert checked_pastes > 20  # the pipeline actually pasted things


def test_augment_is_deterministic(augmenter):
    rec = augmenter.dataset.images[0]
    a = augmenter.augment_id(rec.id, epoch=1)
    b = augmenter.augment_id(rec.id, epoch=1)
    assert np.array_equal(a.image, b.image)
    assert a.annotations == b.annotations
    assert a.provenance.to_dict() == b.provenance.to_dict()


def test_augment_differs_across_epochs(augmenter):
    rec = augmenter.dataset.images[0]
    a = augmenter.augment_id(rec.id, epoch=0)
    b = augmenter.augment_id(rec.id, epoch=1)
    assert a.provenance.to_dict() != b.provenance.to_dict()


def test_augment_p_cp_zero_is_identity(blob_fixture):
    _ann_path, images_dir, dataset = blob_fixture
    aug = Augmenter(dataset, images_dir, dataclasses.replace(OcpConfig(), p_cp=0.0))
    grouped = dataset.annotations_by_image()
    for rec in dataset.images[:4]:
        image, anns = aug.load_base(rec.id)
        sample = aug.augment_image(image, anns, image_id=rec.id)
        assert sample.image is image  # zero copy
        assert sample.annotations == anns
        assert not sample.provenance.applied
        assert sample.provenance.notes == ["skipped by p_cp gate"]
        assert grouped[rec.id] == anns


def test_augment_zero_paste_range_is_identity(blob_fixture):
    _ann_path, images_dir, dataset = blob_fixture
    cfg = dataclasses.replace(OcpConfig(), p_cp=1.0, r_paste=(0, 0))
    aug = Augmenter(dataset, images_dir, cfg)
    rec = dataset.images[0]
    image, anns = aug.load_base(rec.id)
    sample = aug.augment_image(image, anns, image_id=rec.id)
    assert sample.image is image
    assert sample.annotations == anns
    assert sample.provenance.applied
    assert not pasted_ids_of(sample)


def test_augment_provenance_records_pastes(augmenter):
    rec = augmenter.dataset.images[1]
    sample = augmenter.augment_id(rec.id)
    prov = sample.provenance
    assert prov.image_id == rec.id
    assert prov.applied and 0.0 <= prov.p_draw < 1.0
    executed = [e for e in prov.pastes if not e.dropped]
    for e in executed:
        assert e.position is not None and e.placed_area > 0
        assert e.new_annotation_id is not None
        assert set(e.jitter) == {"saturation", "contrast", "brightness",
                                 "sharpness", "scale", "rotation"}
    # donor must never be the base image itself
    assert all(e.source_image_id != rec.id for e in prov.pastes)


def test_augment_fresh_ids_do_not_collide(augmenter):
    rec = augmenter.dataset.images[2]
    sample = augmenter.augment_id(rec.id)
    base_ids = {a.id for a in augmenter.dataset.annotations_by_image()[rec.id]}
    for pid in pasted_ids_of(sample):
        assert pid not in base_ids


def test_pasted_annotations_carry_compressed_rle(augmenter):
    for rec in augmenter.dataset.images:
        sample = augmenter.augment_id(rec.id, epoch=2)
        pasted = pasted_ids_of(sample)
        for ann in sample.annotations:
            if ann.id in pasted:
                seg = ann.segmentation
                assert seg.compressed
                assert seg.size == (rec.height, rec.width)
        if pasted:
            break


def test_blend_random_draws_parameters(blob_fixture):
    _ann_path, images_dir, dataset = blob_fixture
    cfg = dataclasses.replace(
        preset("blend-random"), p_cp=1.0, n_basket=3, r_paste=(2, 3), seed=5
    )
    aug = Augmenter(dataset, images_dir, cfg)
    kernels = set()
    for rec in dataset.images:
        sample = aug.augment_id(rec.id)
        for e in sample.provenance.pastes:
            if e.blend is not None:
                assert e.blend["kernel"] % 2 == 1
                assert 3 <= e.blend["kernel"] <= 9
                assert 0.5 <= e.blend["sigma"] <= 3.0
                kernels.add(e.blend["kernel"])
    assert len(kernels) >= 2


def test_scale_aware_pastes_track_destination_sizes(blob_fixture):
    _ann_path, images_dir, dataset = blob_fixture
    cfg = dataclasses.replace(
        OcpConfig(), p_cp=1.0, scale_aware=True, placement="random",
        jitter=disabled_jitter(), r_paste=(1, 1), seed=11,
    )
    aug = Augmenter(dataset, images_dir, cfg)
    grouped = dataset.annotations_by_image()
    ratios = []
    for rec in dataset.images:
        sample = aug.augment_id(rec.id)
        executed = [e for e in sample.provenance.pastes if not e.dropped]
        if not executed:
            continue
        dest_sides = [np.sqrt(a.area) for a in grouped[rec.id]]
        for e in executed:
            pasted = next(a for a in sample.annotations if a.id == e.new_annotation_id)
            ratios.append(np.sqrt(pasted.area) / np.mean(dest_sides))
    # pasted sizes cluster around the destination's own instance sizes
    assert ratios and 0.5 <= float(np.median(ratios)) <= 1.5


def test_half_off_canvas_paste_stores_inbounds_area(blob_fixture):
    _ann_path, images_dir, dataset = blob_fixture
    cfg = dataclasses.replace(
        OcpConfig(), p_cp=1.0, placement="random", jitter=disabled_jitter(),
        min_size_ratio=0.0, r_paste=(3, 3), seed=21,
    )
    aug = Augmenter(dataset, images_dir, cfg)
    clipped_seen = 0
    for epoch in range(6):
        for rec in dataset.images:
            sample = aug.augment_id(rec.id, epoch=epoch)
            for e in sample.provenance.pastes:
                if e.dropped or e.new_annotation_id is None:
                    continue
                ann = next((a for a in sample.annotations if a.id == e.new_annotation_id), None)
                if ann is None:
                    continue  # later paste removed it again
                m = annotation_mask(ann, rec.height, rec.width)
                x, y = e.position
                if x < 0 or y < 0:
                    clipped_seen += 1
                # stored area equals the raster and never exceeds what was placed
                assert int(m.sum()) == ann.area <= e.placed_area
    assert clipped_seen > 0  # the property above was exercised on clipped pastes


def test_augment_does_not_mutate_inputs(augmenter):
    rec = augmenter.dataset.images[3]
    image, anns = augmenter.load_base(rec.id)
    before_img = image.copy()
    before_anns = [dataclasses.replace(a) for a in anns]
    augmenter.augment_image(image, anns, image_id=rec.id)
    assert np.array_equal(image, before_img)
    assert anns == before_anns
