from dataclasses import dataclass
from typing import FrozenSet, Optional, Sequence, Tuple

from pyslvm.errors import ConfigError, ProtocolError


@dataclass(frozen=True)
class FoldSplit:
    """Class-level cross-validation split: one fold is held out for testing, the others train the model."""
    folds: Tuple[FrozenSet[int], ...]
    fold_index: int
    class_names: Optional[Tuple[str, ...]] = None

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    @property
    def test_classes(self) -> FrozenSet[int]:
        return self.folds[self.fold_index]

    @property
    def train_classes(self) -> FrozenSet[int]:
        return frozenset().union(*(f for i, f in enumerate(self.folds) if i != self.fold_index))

    def fold_of(self, class_id: int) -> int:
        for i, fold in enumerate(self.folds):
            if class_id in fold:
                return i
        raise ProtocolError(f'class {class_id} does not belong to any fold')

    def with_fold(self, fold_index: int) -> 'FoldSplit':
        """Returns the same partition with a different held-out fold."""
        if not 0 <= fold_index < self.n_folds:
            raise ConfigError(f'fold index {fold_index} out of range for {self.n_folds} folds')
        return FoldSplit(self.folds, fold_index, self.class_names)

    def name_of(self, class_id: int) -> str:
        if self.class_names is None:
            return str(class_id)
        return self.class_names[class_id]


def partition_folds(class_ids: Sequence[int],
                    fold_sizes: Sequence[int],
                    fold_index: int = 0,
                    class_names: Optional[Sequence[str]] = None) -> FoldSplit:
    """Assigns classes to consecutive folds.

    Args:
        class_ids: class ids to partition.
        fold_sizes: number of classes in each fold, must sum to len(class_ids).
        fold_index: (Optional) fold held out for testing. Defaults to 0.
        class_names: (Optional) class names indexed by class id. If provided, classes are assigned in
          alphabetical name order, otherwise in the given order. Defaults to None.
    Raises:
        ConfigError: on size mismatch, duplicated ids or an out-of-range fold index.
    """
    class_ids = [int(c) for c in class_ids]
    if len(set(class_ids)) != len(class_ids):
        raise ConfigError(f'duplicated class ids in {class_ids}')
    if any(s < 1 for s in fold_sizes):
        raise ConfigError(f'fold sizes must be positive, got {list(fold_sizes)}')
    if sum(fold_sizes) != len(class_ids):
        raise ConfigError(f'fold sizes {list(fold_sizes)} sum to {sum(fold_sizes)}, '
                          f'but there are {len(class_ids)} classes')
    if not 0 <= fold_index < len(fold_sizes):
        raise ConfigError(f'fold index {fold_index} out of range for {len(fold_sizes)} folds')

    if class_names is not None:
        class_names = tuple(class_names)
        ordered = sorted(class_ids, key=lambda c: (class_names[c], c))
    else:
        ordered = class_ids
    folds, start = [], 0
    for size in fold_sizes:
        folds.append(frozenset(ordered[start:start + size]))
        start += size
    return FoldSplit(tuple(folds), fold_index, class_names)
