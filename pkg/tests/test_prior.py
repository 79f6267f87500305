import numpy as np
import pytest
import tensorflow as tf
from PIL import Image

from pyslvm.errors import DegenerateSupportError, ShapeError
from pyslvm.layers import (PriorMask, aggregate_shots, constant_prior, episode_prior, export_prior_png, fuse,
                           mask_weight_features, normalize_prior, prior_map)


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return 0. if na == 0 or nb == 0 else float(a @ b / (na * nb))


def max_oracle(query, support):
    h, w, c = query.shape
    flat = support.reshape(-1, c)
    return np.array([[max(_cos(query[i, j], v) for v in flat) for j in range(w)] for i in range(h)])


def _random_features(rng):
    c = int(rng.integers(1, 9))
    h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    while h * w > 64:
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    sh, sw = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    query = rng.normal(size=(h, w, c))
    support = rng.normal(size=(sh, sw, c)) * (rng.random((sh, sw, 1)) > 0.3)
    return query, support


def test_prior_map_matches_all_pairs_oracle(rng):
    for _ in range(100):
        query, support = _random_features(rng)
        raw = prior_map(tf.constant(query), tf.constant(support)).numpy()
        np.testing.assert_allclose(raw, max_oracle(query, support), atol=1e-6)


def test_prior_map_mean_reduction(rng):
    query, support = rng.normal(size=(3, 4, 5)), rng.normal(size=(2, 2, 5))
    prototype = support.reshape(-1, 5).sum(axis=0)
    expected = np.array([[_cos(query[i, j], prototype) for j in range(4)] for i in range(3)])
    raw = prior_map(tf.constant(query), tf.constant(support), reduction='mean').numpy()
    np.testing.assert_allclose(raw, expected, atol=1e-6)
    with pytest.raises(ValueError):
        prior_map(tf.constant(query), tf.constant(support), reduction='median')


def test_prior_map_batched(rng):
    query, support = rng.normal(size=(2, 3, 3, 4)), rng.normal(size=(2, 2, 2, 4))
    raw = prior_map(tf.constant(query), tf.constant(support)).numpy()
    assert raw.shape == (2, 3, 3)
    for b in range(2):
        np.testing.assert_allclose(raw[b], max_oracle(query[b], support[b]), atol=1e-6)


def test_prior_map_channel_mismatch():
    with pytest.raises(ShapeError):
        prior_map(tf.zeros((2, 2, 3)), tf.zeros((2, 2, 4)))


@pytest.mark.parametrize('scale', [1e-3, 0.5, 7., 1e3])
def test_prior_map_ignores_query_scale(rng, scale):
    query, support = rng.normal(size=(4, 3, 6)), rng.normal(size=(3, 3, 6))
    raw = prior_map(tf.constant(query), tf.constant(support)).numpy()
    scaled = prior_map(tf.constant(scale * query), tf.constant(support)).numpy()
    np.testing.assert_allclose(scaled, raw, atol=1e-9)


def test_identical_features_give_one(rng):
    features = rng.normal(size=(3, 3, 6))
    raw = prior_map(tf.constant(features), tf.constant(features)).numpy()
    np.testing.assert_allclose(raw, 1., atol=1e-6)


def test_mask_weight_features(rng):
    features = rng.normal(size=(4, 4, 3))
    mask = (rng.random((8, 8)) > 0.5).astype(np.float64)
    mask[0, 0] = 1.
    weighted = mask_weight_features(tf.constant(features), tf.constant(mask)).numpy()
    soft = mask.reshape(4, 2, 4, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(weighted, features * soft[..., None], atol=1e-12)


def test_empty_support_mask():
    with pytest.raises(DegenerateSupportError):
        mask_weight_features(tf.ones((2, 2, 3)), tf.zeros((4, 4)))


def test_normalize_prior(rng):
    raw = tf.constant(rng.uniform(-1, 1, size=(5, 5)))
    normalized = normalize_prior(raw).numpy()
    assert normalized.min() == pytest.approx(0.)
    assert normalized.max() == pytest.approx(1., abs=1e-6)
    np.testing.assert_array_equal(normalize_prior(tf.fill((3, 3), 0.2)).numpy(), np.full((3, 3), 0.5, np.float32))


def test_aggregate_shots_is_elementwise_mean(rng):
    priors = []
    for _ in range(3):
        raw = tf.constant(rng.uniform(-1, 1, size=(4, 4)))
        priors.append(PriorMask(raw=raw, normalized=normalize_prior(raw), target_class=2))
    fused = aggregate_shots(priors)
    np.testing.assert_allclose(fused.normalized.numpy(), np.mean([p.normalized.numpy() for p in priors], axis=0))
    assert fused.target_class == 2
    assert aggregate_shots(priors[:1]) is priors[0]
    with pytest.raises(ShapeError):
        aggregate_shots([priors[0], PriorMask(tf.zeros((2, 2)), tf.zeros((2, 2)))])


def test_aggregate_shots_ignores_shot_order(rng):
    priors = []
    for _ in range(5):
        raw = tf.constant(rng.uniform(-1, 1, size=(3, 4)))
        priors.append(PriorMask(raw=raw, normalized=normalize_prior(raw), target_class=1))
    fused = aggregate_shots(priors)
    for order in ([4, 3, 2, 1, 0], [2, 0, 4, 1, 3]):
        permuted = aggregate_shots([priors[i] for i in order])
        np.testing.assert_allclose(permuted.raw.numpy(), fused.raw.numpy(), atol=1e-12)
        np.testing.assert_allclose(permuted.normalized.numpy(), fused.normalized.numpy(), atol=1e-12)


def test_aggregate_shots_of_identical_priors(rng):
    raw = tf.constant(rng.uniform(-1, 1, size=(4, 4)))
    prior = PriorMask(raw=raw, normalized=normalize_prior(raw), target_class=3)
    fused = aggregate_shots([prior] * 5)
    np.testing.assert_allclose(fused.raw.numpy(), raw.numpy(), atol=1e-12)
    np.testing.assert_allclose(fused.normalized.numpy(), prior.normalized.numpy(), atol=1e-12)


def test_episode_prior_single_shot(rng):
    query = tf.constant(rng.normal(size=(1, 2, 2, 3)))
    support = tf.constant(rng.normal(size=(1, 1, 2, 2, 3)))
    masks = tf.constant(np.ones((1, 1, 4, 4)))
    prior = episode_prior(query, support, masks)
    expected = normalize_prior(prior_map(query, support[:, 0]))
    np.testing.assert_allclose(prior.normalized.numpy(), expected.numpy())


def test_fuse_appends_prior_channel(rng):
    mid = tf.constant(rng.normal(size=(2, 4, 4, 6)).astype(np.float32))
    raw = tf.constant(rng.uniform(-1, 1, size=(2, 2, 2)).astype(np.float32))
    fused = fuse(mid, PriorMask(raw, normalize_prior(raw))).tensor.numpy()
    assert fused.shape == (2, 4, 4, 7)
    np.testing.assert_array_equal(fused[..., :6], mid.numpy())
    assert 0. <= fused[..., 6].min() and fused[..., 6].max() <= 1.


def test_constant_prior():
    prior = constant_prior((2, 3, 3))
    np.testing.assert_array_equal(prior.normalized.numpy(), np.full((2, 3, 3), 0.5, np.float32))


def test_export_prior_png(rng, tmp_path):
    raw = tf.constant(rng.uniform(-1, 1, size=(6, 5)))
    prior = PriorMask(raw, normalize_prior(raw))
    path = str(tmp_path / 'prior.png')
    export_prior_png(prior, path)
    with Image.open(path) as img:
        assert img.mode == 'L'
        pixels = np.asarray(img)
    np.testing.assert_array_equal(pixels, np.round(prior.normalized.numpy() * 255).astype(np.uint8))
    with pytest.raises(ShapeError):
        export_prior_png(PriorMask(tf.zeros((1, 2, 2)), tf.zeros((1, 2, 2))), path)
