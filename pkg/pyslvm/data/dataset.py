import os
from dataclasses import dataclass, field
from typing import FrozenSet, List

import numpy as np
from PIL import Image

from pyslvm.errors import IngestionError, LabelValidationError

IMAGES_DIR = 'images'
LABELS_DIR = 'labels'
CLASSES_FILE = 'classes.txt'
IMAGE_EXT = '.png'

# alphabetical order, so that fold 3 of a (4, 4, 4, 5) split is sea, ship, tank, tree, water
DLRSD_CLASSES = ('airplane', 'bare soil', 'building', 'car', 'chaparral', 'court', 'dock', 'field', 'grass',
                 'mobile home', 'pavement', 'sand', 'sea', 'ship', 'tank', 'tree', 'water')


@dataclass(frozen=True)
class LabeledImage:
    """An image with its pixel-level class labels.

    Arrays are made read-only at construction time, so a loaded dataset can be shared between workers.
    """
    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    label: np.ndarray  # H x W, non-negative class ids
    id: str
    classes: FrozenSet[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[-1] != 3:
            raise LabelValidationError(f'{self.id}: image must be HxWx3, got {self.image.shape}')
        if self.label.shape != self.image.shape[:2]:
            raise LabelValidationError(f'{self.id}: label shape {self.label.shape} '
                                       f'does not match image shape {self.image.shape[:2]}')
        self.image.setflags(write=False)
        self.label.setflags(write=False)
        object.__setattr__(self, 'classes', frozenset(int(c) for c in np.unique(self.label)))

    @property
    def shape(self):
        return self.label.shape

    def contains(self, class_id: int) -> bool:
        return class_id in self.classes

    def binary_mask(self, class_id: int) -> np.ndarray:
        return (self.label == class_id).astype(np.uint8)


def read_classes(root_path: str) -> List[str]:
    """Reads the class list of a dataset root; line number is class id."""
    path = os.path.join(root_path, CLASSES_FILE)
    if not os.path.isfile(path):
        raise IngestionError(f'missing class list {path}')
    with open(path, 'r', encoding='utf-8') as f:
        names = [line.strip() for line in f]
    while names and not names[-1]:
        names.pop()
    if not names or any(not n for n in names):
        raise IngestionError(f'malformed class list {path}')
    return names


def read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert('RGB'), dtype=np.float32) / 255.
    except OSError as e:
        raise IngestionError(f'unable to read image {path}: {e}') from e


def read_label(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ('L', 'P', 'I', 'I;16'):
                raise IngestionError(f'label {path} must be single-channel, got mode {im.mode}')
            return np.asarray(im, dtype=np.int64)
    except OSError as e:
        raise IngestionError(f'unable to read label {path}: {e}') from e


def _list_ids(directory: str) -> set:
    if not os.path.isdir(directory):
        raise IngestionError(f'missing directory {directory}')
    return {name[:-len(IMAGE_EXT)] for name in os.listdir(directory) if name.endswith(IMAGE_EXT)}


def load_dataset(root_path: str) -> List[LabeledImage]:
    """Loads every image/label pair found under root_path.

    Args:
        root_path: directory with images/<id>.png, labels/<id>.png and classes.txt.
    Returns:
        list of LabeledImage, sorted by id.
    Raises:
        IngestionError: if an image has no label (or vice versa), or a file cannot be read.
        LabelValidationError: if a label value is not a valid class id.
    """
    n_classes = len(read_classes(root_path))
    image_ids = _list_ids(os.path.join(root_path, IMAGES_DIR))
    label_ids = _list_ids(os.path.join(root_path, LABELS_DIR))
    orphans = sorted(image_ids ^ label_ids)
    if orphans:
        raise IngestionError(f'missing counterpart file for id(s): {", ".join(orphans)}')

    dataset = []
    for image_id in sorted(image_ids):
        image = read_image(os.path.join(root_path, IMAGES_DIR, image_id + IMAGE_EXT))
        label = read_label(os.path.join(root_path, LABELS_DIR, image_id + IMAGE_EXT))
        if label.size and (label.min() < 0 or label.max() >= n_classes):
            raise LabelValidationError(f'{image_id}: label values must lie in [0, {n_classes}), '
                                       f'found [{label.min()}, {label.max()}]')
        dataset.append(LabeledImage(image=image, label=label, id=image_id))
    return dataset
