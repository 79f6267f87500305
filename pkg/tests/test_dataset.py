import filecmp
import os
import shutil

import numpy as np
import pytest
from PIL import Image

from pyslvm.data import DLRSD_CLASSES, FIXTURE_CLASSES, LabeledImage, load_dataset, make_fixture, read_classes
from pyslvm.errors import IngestionError, LabelValidationError

from helpers import FIXTURE_IMAGES, FIXTURE_SIZE


def test_fixture_loads(dataset, fixture_root):
    assert len(dataset) == FIXTURE_IMAGES
    assert [item.id for item in dataset] == sorted(item.id for item in dataset)
    assert read_classes(fixture_root) == list(FIXTURE_CLASSES)
    for item in dataset:
        assert item.image.shape == (FIXTURE_SIZE, FIXTURE_SIZE, 3)
        assert item.image.dtype == np.float32
        assert 0. <= item.image.min() and item.image.max() <= 1.
        assert item.label.shape == item.image.shape[:2]
        assert item.label.max() < len(FIXTURE_CLASSES)
        # at least one shape besides the background
        assert item.contains(0) and len(item.classes) >= 2


def test_arrays_are_read_only(dataset):
    with pytest.raises(ValueError):
        dataset[0].label[0, 0] = 1


def test_binary_mask(dataset):
    item = dataset[0]
    c = max(item.classes)
    mask = item.binary_mask(c)
    assert set(np.unique(mask)) <= {0, 1}
    assert mask.sum() == (item.label == c).sum()


def test_labeled_image_shape_mismatch():
    with pytest.raises(LabelValidationError):
        LabeledImage(np.zeros((4, 4, 3), np.float32), np.zeros((4, 5), np.int64), 'x')


def _copy(fixture_root, tmp_path):
    root = tmp_path / 'copy'
    shutil.copytree(fixture_root, root)
    return root


def test_missing_counterpart_names_the_id(fixture_root, tmp_path):
    root = _copy(fixture_root, tmp_path)
    os.remove(root / 'labels' / '0003.png')
    with pytest.raises(IngestionError, match='0003'):
        load_dataset(str(root))


def test_label_out_of_range(fixture_root, tmp_path):
    root = _copy(fixture_root, tmp_path)
    label = np.zeros((FIXTURE_SIZE, FIXTURE_SIZE), dtype=np.uint8)
    label[0, 0] = len(FIXTURE_CLASSES)
    Image.fromarray(label).save(root / 'labels' / '0000.png')
    with pytest.raises(LabelValidationError):
        load_dataset(str(root))


def test_missing_class_list(fixture_root, tmp_path):
    root = _copy(fixture_root, tmp_path)
    os.remove(root / 'classes.txt')
    with pytest.raises(IngestionError):
        load_dataset(str(root))


def test_fixture_is_byte_identical(tmp_path):
    a = make_fixture(str(tmp_path / 'a'), seed=3, n_images=5, size=32)
    b = make_fixture(str(tmp_path / 'b'), seed=3, n_images=5, size=32)
    c = make_fixture(str(tmp_path / 'c'), seed=4, n_images=5, size=32)
    for sub in ('images', 'labels'):
        names = sorted(os.listdir(os.path.join(a, sub)))
        assert len(names) == 5
        match, mismatch, errors = filecmp.cmpfiles(os.path.join(a, sub), os.path.join(b, sub), names, shallow=False)
        assert not mismatch and not errors
    assert not filecmp.cmp(os.path.join(a, 'images', '0000.png'), os.path.join(c, 'images', '0000.png'),
                           shallow=False)


def test_dlrsd_classes():
    assert len(DLRSD_CLASSES) == 17
    assert list(DLRSD_CLASSES) == sorted(DLRSD_CLASSES)
