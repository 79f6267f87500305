import numpy as np
import pytest

from pyslvm.data import load_dataset, make_fixture, partition_folds, read_classes
from pyslvm.embeddings import SurrogateProvider, build_surrogate_encoder
from pyslvm.utils.training_utils import TrainConfig

from helpers import FIXTURE_IMAGES, FIXTURE_SIZE


@pytest.fixture(scope='session')
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp('fixture')
    return make_fixture(str(root), seed=0, n_images=FIXTURE_IMAGES, size=FIXTURE_SIZE)


@pytest.fixture(scope='session')
def dataset(fixture_root):
    return load_dataset(fixture_root)


@pytest.fixture(scope='session')
def split(fixture_root):
    # background is class 0 and shares fold 0 with circle; square and triangle are held out
    return partition_folds(range(4), (2, 2), fold_index=1, class_names=read_classes(fixture_root))


@pytest.fixture(scope='session')
def encoder():
    return build_surrogate_encoder(seed=0)


@pytest.fixture
def provider(encoder):
    return SurrogateProvider(encoder)


@pytest.fixture
def tiny_config(fixture_root):
    return TrainConfig(batch_size=2, lr=0.001, epochs=2, episodes_per_epoch=3, image_size=FIXTURE_SIZE,
                       fold_sizes=(2, 2), fold_index=1, n_eval_episodes=6, data_root=fixture_root, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
