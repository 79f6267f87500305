from pyslvm.data.dataset import LabeledImage, load_dataset, read_classes, DLRSD_CLASSES
from pyslvm.data.folds import FoldSplit, partition_folds
from pyslvm.data.augment import Transform, augment, draw_transform, apply_transform, invert_transform, resize_label
from pyslvm.data.episode import (Episode, RegistryEntry, sample_episode, eligible_ids, build_registry,
                                 write_registry, read_registry, registry_digest)
from pyslvm.data.fixture import make_fixture, FIXTURE_CLASSES
