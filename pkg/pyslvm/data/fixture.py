import os

import gin
import numpy as np
from PIL import Image

from pyslvm.data.dataset import CLASSES_FILE, IMAGE_EXT, IMAGES_DIR, LABELS_DIR

FIXTURE_CLASSES = ('background', 'circle', 'square', 'triangle')
BACKGROUND_COLOR = np.array([0.45, 0.42, 0.35])
SHAPE_COLORS = {1: np.array([0.85, 0.20, 0.20]),
                2: np.array([0.20, 0.70, 0.30]),
                3: np.array([0.20, 0.30, 0.85])}


def _shape_mask(class_id, size, cy, cx, r):
    yy, xx = np.mgrid[:size, :size]
    if class_id == 1:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
    elif class_id == 2:
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    else:
        # apex on top, base at cy + r
        return (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) * 2 <= yy - (cy - r))


def _draw_sample(rng, size):
    texture = rng.normal(0., 0.06, size=(size, size, 1)) + rng.normal(0., 0.03, size=(size, size, 3))
    image = BACKGROUND_COLOR + texture
    label = np.zeros((size, size), dtype=np.uint8)

    n_shapes = int(rng.integers(1, 3))
    shape_classes = rng.choice(sorted(SHAPE_COLORS), size=n_shapes, replace=False)
    halves = rng.permutation(2)
    for class_id, half in zip(shape_classes, halves):
        r = int(rng.integers(size // 8, size // 5 + 1))
        cy = int(rng.integers(r, size - r))
        # each shape lives in its own half of the image, so shapes never overlap
        lo, hi = half * size // 2 + r, (half + 1) * size // 2 - r
        cx = int(rng.integers(lo, max(hi, lo + 1)))
        mask = _shape_mask(int(class_id), size, cy, cx, r)
        color = SHAPE_COLORS[int(class_id)] + rng.normal(0., 0.04, size=3)
        image[mask] = color + rng.normal(0., 0.03, size=(int(mask.sum()), 3))
        label[mask] = class_id
    return np.clip(image, 0., 1.), label


@gin.configurable
def make_fixture(out_dir: str, seed: int = 0, n_images: int = 60, size: int = 64) -> str:
    """Writes a synthetic dataset of colored shapes on textured backgrounds.

    The layout matches load_dataset (images/, labels/, classes.txt); identical arguments produce
    byte-identical files.

    Args:
        out_dir: dataset root to create.
        seed: (Optional) generator seed. Defaults to 0.
        n_images: (Optional) number of images. Defaults to 60.
        size: (Optional) image side length. Defaults to 64.
    Returns:
        out_dir
    """
    for sub in (IMAGES_DIR, LABELS_DIR):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    with open(os.path.join(out_dir, CLASSES_FILE), 'w', encoding='utf-8') as f:
        f.write('\n'.join(FIXTURE_CLASSES) + '\n')

    rng = np.random.default_rng(seed)
    for i in range(n_images):
        image, label = _draw_sample(rng, size)
        image_id = f'{i:04d}'
        Image.fromarray(np.round(image * 255).astype(np.uint8)).save(
            os.path.join(out_dir, IMAGES_DIR, image_id + IMAGE_EXT))
        Image.fromarray(label).save(os.path.join(out_dir, LABELS_DIR, image_id + IMAGE_EXT))
    return out_dir
