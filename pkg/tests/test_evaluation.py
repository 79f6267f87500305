from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pyslvm.data import RegistryEntry, build_registry, make_fixture, load_dataset, partition_folds, read_classes
from pyslvm.data import registry_digest, sample_episode
from pyslvm.errors import ProtocolError, ShapeError
from pyslvm.utils.evaluation_utils import (ABLATION_FLAGS, MetricsReport, binary_iou, combine_reports, evaluate,
                                           export_masks, mask_file_name, read_mask_png, run_ablation,
                                           run_ablation_folds)
from pyslvm.utils.report_utils import format_table
from pyslvm.utils.training_utils import TrainConfig

from helpers import EmptyModel, NoisyModel, OracleModel


def test_binary_iou_examples():
    target = np.zeros((4, 4), dtype=bool)
    target[0, :4] = True
    pred = np.zeros((4, 4), dtype=bool)
    pred[0, :2] = True
    pred[3, 2:] = True
    assert binary_iou(pred, target) == pytest.approx(2 / 6)
    assert binary_iou(target, target) == 1.
    assert binary_iou(target, ~target) == 0.
    assert binary_iou(np.zeros((2, 2)), np.zeros((2, 2))) is None
    with pytest.raises(ShapeError):
        binary_iou(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(bool, (5, 5)), arrays(bool, (5, 5)))
def test_binary_iou_is_symmetric(a, b):
    iou = binary_iou(a, b)
    assert iou == binary_iou(b, a)
    if iou is not None:
        assert 0. <= iou <= 1.
        assert (iou == 1.) == bool(np.array_equal(a, b))


@pytest.fixture
def registry(split):
    return build_registry(split, 1, n_episodes=12, seed=0)


def test_oracle_and_empty_models(dataset, split, registry):
    report = evaluate(OracleModel(), dataset, split, registry, 1)
    assert report.per_class_iou == {2: 1., 3: 1.}
    assert report.fold_miou == {1: 1.}
    assert report.mean_miou == 1.
    assert report.episode_registry_digest == registry_digest(registry)
    assert report.flags == (True, True, True)

    empty = evaluate(EmptyModel(), dataset, split, registry, 1, ablation_flags=dict(apl=False, pgml=False, fsla=False))
    assert empty.per_class_iou == {2: 0., 3: 0.}
    assert empty.mean_miou == 0.
    assert empty.flags == (False, False, False)


@pytest.mark.parametrize('n_episodes,seed', [(1, 0), (2, 1), (7, 2), (20, 3)])
def test_evaluate_matches_confusion_matrix_oracle(dataset, split, n_episodes, seed):
    registry = build_registry(split, 1, n_episodes=n_episodes, seed=seed)
    by_class = defaultdict(list)
    for entry in registry:
        episode = sample_episode(dataset, split, entry.class_id, 1, entry.seed)
        pred = np.random.default_rng(entry.seed).random(episode.image_shape) >= 0.5
        gt = episode.query_mask.astype(bool)
        confusion = np.zeros((2, 2), dtype=int)
        for p, t in zip(pred.ravel(), gt.ravel()):
            confusion[int(t), int(p)] += 1
        tp, fp, fn = confusion[1, 1], confusion[0, 1], confusion[1, 0]
        by_class[entry.class_id].append(tp / (tp + fp + fn))
    expected = {c: float(np.mean(v)) for c, v in by_class.items()}

    report = evaluate(NoisyModel(), dataset, split, registry, 1, batch_size=3)
    assert report.per_class_iou.keys() == expected.keys()
    for c in expected:
        assert report.per_class_iou[c] == pytest.approx(expected[c], abs=1e-12)
    assert report.mean_miou == pytest.approx(np.mean(list(expected.values())), abs=1e-12)


def test_evaluate_is_deterministic(dataset, split, registry):
    assert evaluate(NoisyModel(), dataset, split, registry, 1) == evaluate(NoisyModel(), dataset, split, registry, 1)


@pytest.mark.parametrize('entry,shots', [(RegistryEntry(0, 1, 2, 7), 1),
                                         (RegistryEntry(1, 1, 1, 7), 1),
                                         (RegistryEntry(1, 1, 2, 7), 5)])
def test_registry_protocol_errors(dataset, split, entry, shots):
    with pytest.raises(ProtocolError):
        evaluate(OracleModel(), dataset, split, [entry], shots)


def test_combine_reports(split):
    first = MetricsReport({0: 0.5, 1: None}, {0: 0.5}, 0.5, 1, config_digest='a', episode_registry_digest='r0')
    second = MetricsReport({2: 0.2, 3: 0.4}, {1: 0.3}, 0.3, 1, config_digest='b', episode_registry_digest='r1')
    combined = combine_reports([first, second], split)
    assert combined.per_class_iou == {0: 0.5, 1: None, 2: 0.2, 3: 0.4}
    assert combined.fold_miou == pytest.approx({0: 0.5, 1: 0.3})
    assert combined.mean_miou == pytest.approx(0.4)
    assert combined.config_digest == 'a+b'
    assert combined.episode_registry_digest == 'r0+r1'
    with pytest.raises(ProtocolError):
        combine_reports([second, second], split)
    with pytest.raises(ProtocolError):
        combine_reports([first, MetricsReport({2: 0.2}, {1: 0.2}, 0.2, 5)], split)
    with pytest.raises(ValueError):
        combine_reports([], split)


def test_export_masks(tmp_path, dataset, split):
    registry = build_registry(split, 1, n_episodes=10, seed=4)
    paths = export_masks(NoisyModel(), dataset, split, registry, str(tmp_path / 'masks'), 1)
    assert len(paths) == 10
    assert sorted(p.name for p in (tmp_path / 'masks').iterdir()) == sorted(mask_file_name(e) for e in registry)
    for entry, path in zip(registry, paths):
        episode = sample_episode(dataset, split, entry.class_id, 1, entry.seed)
        expected = NoisyModel().predict([episode])[0] >= 0.5
        np.testing.assert_array_equal(read_mask_png(path), expected)


def test_ablation_shares_the_registry(tiny_config, dataset, split, provider):
    reports = run_ablation(tiny_config, dataset, split, provider=provider, verbose=False)
    assert [r.flags for r in reports] == list(ABLATION_FLAGS)
    assert len({r.episode_registry_digest for r in reports}) == 1
    assert len({r.config_digest for r in reports}) == 4
    for report in reports:
        assert set(report.per_class_iou) == {2, 3}
        assert 0. <= report.mean_miou <= 1.


def test_ablation_is_deterministic(tiny_config, dataset, split, provider):
    flags = [(True, True, True)]
    first = run_ablation(tiny_config, dataset, split, flags=flags, provider=provider, verbose=False)
    second = run_ablation(tiny_config, dataset, split, flags=flags, provider=provider, verbose=False)
    assert first == second


def test_ablation_over_all_folds_fills_every_fold(tiny_config, dataset, split, provider):
    flags = [ABLATION_FLAGS[0], ABLATION_FLAGS[-1]]
    reports = run_ablation_folds(tiny_config.replace(epochs=1), dataset, split, flags=flags, provider=provider,
                                 verbose=False)
    assert [r.flags for r in reports] == flags
    assert len({r.episode_registry_digest for r in reports}) == 1
    for report in reports:
        assert set(report.per_class_iou) == {0, 1, 2, 3}
        assert set(report.fold_miou) == {0, 1}
        assert all(miou is not None for miou in report.fold_miou.values())
        assert report.mean_miou == pytest.approx(np.mean(list(report.fold_miou.values())))
    rows = format_table(reports, n_folds=split.n_folds).splitlines()
    assert rows[0].split()[3:] == ['Fold-0', 'Fold-1', 'Mean']
    assert all('-' not in row.split() for row in rows[1:])


@pytest.mark.slow
def test_full_model_beats_the_constant_prior(tmp_path_factory):
    root = make_fixture(str(tmp_path_factory.mktemp('desk')), seed=0)
    dataset = load_dataset(root)
    split = partition_folds(range(4), (2, 2), fold_index=1, class_names=read_classes(root))
    config = TrainConfig(batch_size=8, lr=0.001, epochs=20, episodes_per_epoch=32, image_size=64,
                         fold_sizes=(2, 2), fold_index=1, n_eval_episodes=100)
    all_off, full = run_ablation(config, dataset, split, flags=[ABLATION_FLAGS[0], ABLATION_FLAGS[-1]],
                                 verbose=False)
    assert full.mean_miou >= all_off.mean_miou + 0.05
