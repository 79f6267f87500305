from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import tensorflow as tf

from pyslvm.errors import ShapeError

DEFAULT_SIZE = 256


@dataclass(frozen=True)
class Transform:
    """Geometric transform: optional horizontal flip, then vertical flip, then k 90-degree rotations."""
    hflip: bool = False
    vflip: bool = False
    rotations: int = 0

    @property
    def is_identity(self) -> bool:
        return not self.hflip and not self.vflip and self.rotations % 4 == 0


def draw_transform(seed: int) -> Transform:
    rng = np.random.default_rng(seed)
    hflip, vflip = rng.random(2) < 0.5
    return Transform(hflip=bool(hflip), vflip=bool(vflip), rotations=int(rng.integers(4)))


def apply_transform(array: np.ndarray, transform: Transform) -> np.ndarray:
    """Applies transform on the first two axes of array (HxW or HxWxC)."""
    if transform.hflip:
        array = array[:, ::-1]
    if transform.vflip:
        array = array[::-1]
    array = np.rot90(array, k=transform.rotations % 4, axes=(0, 1))
    return np.ascontiguousarray(array)


def invert_transform(array: np.ndarray, transform: Transform) -> np.ndarray:
    array = np.rot90(array, k=-(transform.rotations % 4), axes=(0, 1))
    if transform.vflip:
        array = array[::-1]
    if transform.hflip:
        array = array[:, ::-1]
    return np.ascontiguousarray(array)


def resize_image(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an HxWx3 image."""
    if tuple(image.shape[:2]) == tuple(size):
        return image
    resized = tf.image.resize(image, size, method='bilinear')
    return np.clip(resized.numpy(), 0., 1.).astype(image.dtype)


def resize_label(mask: np.ndarray, target: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize: output[i, j] = mask[floor(i * H / h), floor(j * W / w)].

    Works for binary masks and for class-id label maps alike.
    """
    h, w = target
    if h < 1 or w < 1:
        raise ShapeError(f'target size must be positive, got {target}')
    height, width = mask.shape[:2]
    rows = (np.arange(h) * height) // h
    cols = (np.arange(w) * width) // w
    return mask[np.ix_(rows, cols)]


def augment(image: np.ndarray,
            mask: np.ndarray,
            seed: int,
            size: Optional[int] = DEFAULT_SIZE) -> Tuple[np.ndarray, np.ndarray]:
    """Random flip/rotation shared by image and mask, followed by a resize to size x size.

    Args:
        image: HxWx3 image.
        mask: HxW mask (or label map).
        seed: seed of the random transform.
        size: (Optional) output side length; None keeps the input size. Defaults to 256.
    """
    if image.shape[:2] != mask.shape[:2]:
        raise ShapeError(f'image {image.shape[:2]} and mask {mask.shape[:2]} sizes differ')
    transform = draw_transform(seed)
    image, mask = apply_transform(image, transform), apply_transform(mask, transform)
    if size is not None and image.shape[:2] != (size, size):
        image = resize_image(image, (size, size))
        mask = resize_label(mask, (size, size))
    return image, mask
