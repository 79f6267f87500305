import hashlib
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import gin
import numpy as np

from pyslvm.data.augment import augment, resize_image, resize_label
from pyslvm.data.dataset import LabeledImage
from pyslvm.data.folds import FoldSplit
from pyslvm.errors import DataError, ProtocolError, SamplingError

MAX_SEED = 2 ** 31 - 1


@dataclass(frozen=True)
class Episode:
    """One few-shot task: K support (image, mask) pairs and a query, all for target_class."""
    target_class: int
    supports: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    query_image: np.ndarray
    query_mask: np.ndarray
    seed: int
    support_ids: Tuple[str, ...] = ()
    query_id: str = ''

    @property
    def shots(self) -> int:
        return len(self.supports)

    @property
    def image_shape(self) -> Tuple[int, int]:
        return tuple(self.query_mask.shape)

    @property
    def support_images(self) -> np.ndarray:
        return np.stack([image for image, _ in self.supports])

    @property
    def support_masks(self) -> np.ndarray:
        return np.stack([mask for _, mask in self.supports])


def eligible_ids(dataset: Sequence[LabeledImage], class_id: int) -> List[int]:
    """Indexes of images containing at least one pixel of class_id."""
    return [i for i, item in enumerate(dataset) if item.contains(class_id)]


def _check_class(split: FoldSplit, target_class: int, phase: str):
    if phase == 'test':
        allowed = split.test_classes
    elif phase == 'train':
        allowed = split.train_classes
    else:
        raise ValueError(f'unknown phase {phase}, use "train" or "test"')
    if target_class not in allowed:
        raise ProtocolError(f'class {target_class} is not a {phase} class of fold {split.fold_index}')


def sample_episode(dataset: Sequence[LabeledImage],
                   split: FoldSplit,
                   target_class: int,
                   k: int,
                   seed: int,
                   phase: str = 'test',
                   augmentation: bool = False,
                   size: Optional[int] = None) -> Episode:
    """Samples a K-shot episode for target_class. The result only depends on the arguments.

    Args:
        dataset: the loaded dataset.
        split: fold split used to validate target_class.
        target_class: class to segment.
        k: number of support pairs.
        seed: episode seed.
        phase: (Optional) 'test' if target_class must belong to the held-out fold, 'train' if it must
          belong to a training fold. Defaults to 'test'.
        augmentation: (Optional) if True, applies a random flip/rotation to every image. Defaults to False.
        size: (Optional) side length images are resized to. Defaults to None (keep size).
    Raises:
        SamplingError: if fewer than k + 1 images contain target_class.
        ProtocolError: if target_class is not allowed in this phase.
    """
    if k < 1:
        raise SamplingError(f'shots must be at least 1, got {k}')
    _check_class(split, target_class, phase)
    eligible = eligible_ids(dataset, target_class)
    if len(eligible) < k + 1:
        raise SamplingError(f'class {target_class}: {k}-shot episode needs {k + 1} images, '
                            f'only {len(eligible)} available')

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(eligible), size=k + 1, replace=False)
    aug_seeds = rng.integers(0, MAX_SEED, size=k + 1)

    pairs = []
    for idx, aug_seed in zip(chosen, aug_seeds):
        item = dataset[eligible[idx]]
        image, mask = item.image, item.binary_mask(target_class)
        if augmentation:
            image, mask = augment(image, mask, seed=int(aug_seed), size=size)
        elif size is not None:
            image, mask = resize_image(image, (size, size)), resize_label(mask, (size, size))
        if not mask.any():
            raise SamplingError(f'class {target_class}: foreground of {item.id} vanished after resizing')
        pairs.append((image, mask))

    ids = [dataset[eligible[idx]].id for idx in chosen]
    return Episode(target_class=int(target_class),
                   supports=tuple(pairs[:k]),
                   query_image=pairs[k][0],
                   query_mask=pairs[k][1],
                   seed=int(seed),
                   support_ids=tuple(ids[:k]),
                   query_id=ids[k])


@dataclass(frozen=True)
class RegistryEntry:
    fold: int
    shot: int
    class_id: int
    seed: int

    def to_line(self) -> str:
        return f'{self.fold},{self.shot},{self.class_id},{self.seed}'


@gin.configurable
def build_registry(split: FoldSplit, shots: int, n_episodes: int = 1000, seed: int = 0) -> List[RegistryEntry]:
    """Fixed list of evaluation episodes for the held-out fold; classes are visited round robin."""
    classes = sorted(split.test_classes)
    seeds = np.random.default_rng(seed).integers(0, MAX_SEED, size=n_episodes)
    return [RegistryEntry(split.fold_index, shots, classes[i % len(classes)], int(s))
            for i, s in enumerate(seeds)]


def write_registry(entries: Sequence[RegistryEntry], path: str):
    dirname = os.path.dirname(path)
    if dirname and not os.path.isdir(dirname):
        os.makedirs(dirname)
    with open(path, 'w', encoding='utf-8') as f:
        for entry in entries:
            f.write(entry.to_line() + '\n')


def read_registry(path: str) -> List[RegistryEntry]:
    """Reads "fold,shot,class_id,seed" lines; blank lines and lines starting with # are skipped."""
    if not os.path.isfile(path):
        raise DataError(f'missing episode registry {path}')
    entries = []
    with open(path, 'r', encoding='utf-8') as f:
        for n, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            try:
                fold, shot, class_id, seed = (int(v) for v in line.split(','))
            except ValueError as e:
                raise DataError(f'{path}:{n}: malformed registry line "{line}"') from e
            entries.append(RegistryEntry(fold, shot, class_id, seed))
    return entries


def registry_digest(entries: Sequence[RegistryEntry]) -> str:
    text = ''.join(entry.to_line() + '\n' for entry in entries)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()
