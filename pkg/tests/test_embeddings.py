import json
import os
import struct

import numpy as np
import pytest
import tensorflow as tf

from pyslvm.embeddings import (CacheProvider, FeaturePair, build_surrogate_encoder, decode_tensor, encode,
                               encode_tensor, is_valid_tensor_file, load_cached_embedding, read_tensor,
                               save_cached_embedding, verify_frozen, write_tensor)
from pyslvm.embeddings.provider import DEFAULT_MAX_CACHED
from pyslvm.errors import CacheFormatError, ShapeError


def test_encoder_shapes(encoder, rng):
    pair = encode(encoder, rng.random((64, 64, 3)).astype(np.float32), source_id='x')
    assert pair.high.shape == (4, 4, 128)
    assert pair.mid.shape == (8, 8, 64)
    assert pair.encoder_fingerprint == encoder.reference_fingerprint


def test_encoder_is_seeded(encoder):
    assert build_surrogate_encoder(seed=0).fingerprint == encoder.fingerprint
    assert build_surrogate_encoder(seed=1).fingerprint != encoder.fingerprint
    assert not encoder.network.trainable_weights


def test_encoder_rejects_small_images(encoder):
    with pytest.raises(ShapeError):
        encode(encoder, np.zeros((8, 8, 3), np.float32))
    with pytest.raises(ShapeError):
        encode(encoder, np.zeros((32, 32), np.float32))


def test_verify_frozen():
    encoder = build_surrogate_encoder(seed=0)
    reference = encoder.reference_fingerprint
    assert verify_frozen(encoder, reference)
    weights = encoder.parameters
    weights[0] = weights[0] + 1e-3
    encoder.network.set_weights(weights)
    assert not verify_frozen(encoder, reference)
    assert verify_frozen(encoder.network, encoder.fingerprint)


def test_feature_pair_validation():
    with pytest.raises(ShapeError):
        FeaturePair(high=np.zeros((2, 2)), mid=np.zeros((4, 4, 3)))
    with pytest.raises(ShapeError):
        FeaturePair(high=np.full((2, 2, 3), np.nan), mid=np.zeros((4, 4, 3)))
    with pytest.raises(ShapeError):
        FeaturePair(high=np.zeros((8, 8, 3)), mid=np.zeros((4, 4, 3)))


def test_tensor_container_layout(rng):
    array = rng.random((2, 3, 4)).astype(np.float32)
    data = encode_tensor(array)
    assert data[:4] == b'SLVM'
    assert struct.unpack_from('<HB', data, 4) == (1, 3)
    assert struct.unpack_from('<3I', data, 7) == (2, 3, 4)
    assert len(data) == 4 + 2 + 1 + 12 + 1 + 4 * array.size + 4
    assert np.array_equal(decode_tensor(data), array)


@pytest.mark.parametrize('corrupt, message', [
    (lambda d: b'XXXX' + d[4:], 'magic'),
    (lambda d: d[:4] + struct.pack('<H', 2) + d[6:], 'version'),
    (lambda d: d[:-9], 'truncated'),
    (lambda d: d + b'\x00', 'trailing'),
    (lambda d: d[:30] + bytes([d[30] ^ 0xFF]) + d[31:], 'checksum'),
    (lambda d: d[:19] + b'\x07' + d[20:], 'dtype'),
])
def test_tensor_container_errors(rng, corrupt, message):
    data = encode_tensor(rng.random((2, 3, 4)).astype(np.float32))
    with pytest.raises(CacheFormatError, match=message):
        decode_tensor(corrupt(data))


def test_expected_ndim(tmp_path, rng):
    path = str(tmp_path / 't.bin')
    write_tensor(path, rng.random((3, 3)))
    assert read_tensor(path).shape == (3, 3)
    with pytest.raises(CacheFormatError):
        read_tensor(path, expected_ndim=3)
    assert is_valid_tensor_file(path)
    assert not is_valid_tensor_file(path, expected_ndim=3)
    assert not is_valid_tensor_file(str(tmp_path / 'missing.bin'))


def test_cached_embedding_round_trip(encoder, dataset, tmp_path):
    pair = encode(encoder, dataset[0].image, source_id=dataset[0].id)
    prefix = str(tmp_path / dataset[0].id)
    save_cached_embedding(pair, prefix)
    assert os.path.isfile(prefix + '.high.bin') and os.path.isfile(prefix + '.mid.bin')
    loaded = load_cached_embedding(prefix)
    assert np.array_equal(loaded.high, pair.high) and np.array_equal(loaded.mid, pair.mid)


def test_cache_provider_matches_encoder(encoder, provider, dataset, tmp_path):
    items = dataset[:3]
    for item in items:
        save_cached_embedding(encode(encoder, item.image, source_id=item.id), str(tmp_path / item.id))
    with open(tmp_path / 'manifest.json', 'w') as f:
        json.dump({'digests': {'encoder': encoder.reference_fingerprint}}, f)
    cache = CacheProvider(str(tmp_path))
    assert cache.fingerprint == encoder.reference_fingerprint
    assert not cache.supports_augmentation
    images = np.stack([item.image for item in items])
    ids = [item.id for item in items]
    high, mid = cache.encode_batch(images, ids)
    expected_high, expected_mid = provider.encode_batch(images, ids)
    np.testing.assert_allclose(high.numpy(), expected_high.numpy(), atol=1e-6)
    np.testing.assert_allclose(mid.numpy(), expected_mid.numpy(), atol=1e-6)
    with pytest.raises(CacheFormatError):
        cache.encode_batch(images[:1], ['missing'])


def test_cache_provider_keeps_a_bounded_number_of_pairs(encoder, dataset, tmp_path):
    items = dataset[:4]
    for item in items:
        save_cached_embedding(encode(encoder, item.image, source_id=item.id), str(tmp_path / item.id))
    cache = CacheProvider(str(tmp_path), max_cached=2)
    first = cache.features(items[0].id)
    for item in items:
        cache.features(item.id)
    assert cache.cache_info().currsize == 2
    assert cache.cache_info().misses == 4
    assert cache.features(items[3].id) is cache.features(items[3].id)
    again = cache.features(items[0].id)
    assert again is not first
    assert np.array_equal(again.high, first.high) and np.array_equal(again.mid, first.mid)
    assert CacheProvider(str(tmp_path)).cache_info().maxsize == DEFAULT_MAX_CACHED


def test_surrogate_provider_stops_gradients(provider, rng):
    images = tf.constant(rng.random((1, 32, 32, 3)).astype(np.float32))
    with tf.GradientTape() as tape:
        tape.watch(images)
        high, _ = provider.encode_batch(images, [''])
        total = tf.reduce_sum(high)
    assert tape.gradient(total, images) is None
