import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pyslvm.data import Transform, apply_transform, augment, draw_transform, invert_transform, resize_label
from pyslvm.errors import ShapeError


def test_resize_label_oracle(rng):
    mask = rng.integers(0, 5, size=(12, 9))
    out = resize_label(mask, (5, 4))
    for i in range(5):
        for j in range(4):
            assert out[i, j] == mask[(i * 12) // 5, (j * 9) // 4]


def test_resize_label_stays_binary(rng):
    mask = (rng.random((256, 256)) > 0.7).astype(np.uint8)
    out = resize_label(mask, (16, 16))
    assert out.shape == (16, 16)
    assert set(np.unique(out)) <= {0, 1}


def test_resize_label_invalid_target():
    with pytest.raises(ShapeError):
        resize_label(np.zeros((4, 4)), (0, 4))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, (5, 7, 3), elements=st.floats(0, 1, width=32)),
       st.booleans(), st.booleans(), st.integers(0, 3))
def test_invert_transform(image, hflip, vflip, rotations):
    transform = Transform(hflip, vflip, rotations)
    assert np.array_equal(invert_transform(apply_transform(image, transform), transform), image)


def test_augment_resizes(rng):
    image = rng.random((20, 20, 3)).astype(np.float32)
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[5:15, 5:15] = 1
    out_image, out_mask = augment(image, mask, seed=0, size=40)
    assert out_image.shape == (40, 40, 3) and out_mask.shape == (40, 40)
    assert out_mask.sum() == 4 * mask.sum()
    with pytest.raises(ShapeError):
        augment(image, mask[:10], seed=0)


def test_identity_draw_returns_input_unchanged(rng):
    seed = next(s for s in range(100) if draw_transform(s).is_identity)
    image = rng.random((12, 12, 3)).astype(np.float32)
    mask = (rng.random((12, 12)) > 0.5).astype(np.uint8)
    for size in (None, 12):
        out_image, out_mask = augment(image, mask, seed=seed, size=size)
        np.testing.assert_array_equal(out_image, image)
        np.testing.assert_array_equal(out_mask, mask)
    np.testing.assert_array_equal(apply_transform(image, Transform()), image)
