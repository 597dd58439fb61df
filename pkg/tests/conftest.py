import pytest

from ocpaste.synthetic import make_blob_dataset


@pytest.fixture(scope="session")
def blob_fixture(tmp_path_factory):
    """Small shared synthetic dataset: 12 images, 1-3 blobs each."""
    root = tmp_path_factory.mktemp("blobs")
    ann_path, images_dir, dataset = make_blob_dataset(
        root, n_images=12, size=(480, 640), instances_per_image=(1, 3), seed=100
    )
    return ann_path, images_dir, dataset
