import json

import pytest

from ocpaste.synthetic import make_blob_dataset


@pytest.fixture(scope="session")
def bench_fixture(tmp_path_factory):
    """10 images at 640x480, the size the latency and parity contracts name."""
    root = tmp_path_factory.mktemp("bindings_bench")
    ann_path, images_dir, dataset = make_blob_dataset(
        root, n_images=10, size=(480, 640), instances_per_image=(1, 3), seed=500)
    doc = json.loads(ann_path.read_text())
    return ann_path, images_dir, dataset, doc


@pytest.fixture(scope="session")
def tiny_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("bindings_tiny")
    ann_path, images_dir, dataset = make_blob_dataset(
        root, n_images=4, size=(120, 160), radius=(10, 24), seed=501)
    doc = json.loads(ann_path.read_text())
    return ann_path, images_dir, dataset, doc
