import functools
import json
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import tensorflow as tf

from pyslvm.embeddings.cache import read_tensor, write_tensor
from pyslvm.errors import CacheFormatError, ShapeError
from pyslvm.networks import SurrogateEncoder

HIGH_SUFFIX = '.high.bin'
MID_SUFFIX = '.mid.bin'
CACHE_MANIFEST = 'manifest.json'
DEFAULT_MAX_CACHED = 256


@dataclass(frozen=True)
class FeaturePair:
    """High-level (E_H) and intermediate (E_M) feature maps of one image, both h x w x C."""
    high: np.ndarray
    mid: np.ndarray
    source_id: str = ''
    encoder_fingerprint: str = ''

    def __post_init__(self):
        if self.high.ndim != 3 or self.mid.ndim != 3:
            raise ShapeError(f'feature maps must be h x w x C, got {self.high.shape} and {self.mid.shape}')
        if self.high.shape[0] > self.mid.shape[0] or self.high.shape[1] > self.mid.shape[1]:
            raise ShapeError(f'high-level features {self.high.shape} are finer than intermediate {self.mid.shape}')
        if not (np.all(np.isfinite(self.high)) and np.all(np.isfinite(self.mid))):
            raise ShapeError(f'{self.source_id}: non-finite features')


class EncoderHandle:
    """A frozen encoder together with the fingerprint taken when it was built."""

    def __init__(self, network: SurrogateEncoder):
        self.network = network
        self.reference_fingerprint = network.fingerprint()

    @property
    def parameters(self):
        return self.network.get_weights()

    @property
    def fingerprint(self) -> str:
        """Digest of the current parameters."""
        return self.network.fingerprint()

    @property
    def config(self) -> dict:
        return self.network.get_config()


def build_surrogate_encoder(seed: int = 0, config: Optional[dict] = None) -> EncoderHandle:
    """Builds the seeded, frozen surrogate encoder (defaults: 4 stride-2 stages, E_M=64 ch, E_H=128 ch)."""
    config = dict(config or {})
    config['seed'] = seed
    return EncoderHandle(SurrogateEncoder(**config))


def encode(encoder: EncoderHandle, image: np.ndarray, source_id: str = '') -> FeaturePair:
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ShapeError(f'expected an HxWx3 image, got {image.shape}')
    out = encoder.network(tf.convert_to_tensor(image[np.newaxis]))
    return FeaturePair(high=out.high[0].numpy(), mid=out.mid[0].numpy(),
                       source_id=source_id, encoder_fingerprint=encoder.reference_fingerprint)


def verify_frozen(encoder, reference_fingerprint: str) -> bool:
    """True iff the current parameter digest of encoder (an EncoderHandle or a Network) equals the reference."""
    fingerprint = encoder.fingerprint
    if callable(fingerprint):
        fingerprint = fingerprint()
    return fingerprint == reference_fingerprint


def cache_paths(path_prefix: str) -> Tuple[str, str]:
    return path_prefix + HIGH_SUFFIX, path_prefix + MID_SUFFIX


def save_cached_embedding(pair: FeaturePair, path_prefix: str):
    """Writes <path_prefix>.high.bin and <path_prefix>.mid.bin."""
    high_path, mid_path = cache_paths(path_prefix)
    write_tensor(high_path, pair.high)
    write_tensor(mid_path, pair.mid)


def load_cached_embedding(path_prefix: str, encoder_fingerprint: str = '') -> FeaturePair:
    high_path, mid_path = cache_paths(path_prefix)
    high = read_tensor(high_path, expected_ndim=3)
    mid = read_tensor(mid_path, expected_ndim=3)
    try:
        return FeaturePair(high=high, mid=mid, source_id=os.path.basename(path_prefix),
                           encoder_fingerprint=encoder_fingerprint)
    except ShapeError as e:
        raise CacheFormatError(f'{path_prefix}: {e}') from e


class EmbeddingProvider(ABC):
    """Source of frozen image features for a batch of images."""

    supports_augmentation = True

    @abstractmethod
    def encode_batch(self, images: np.ndarray, ids: Sequence[str]) -> Tuple[tf.Tensor, tf.Tensor]:
        """Returns (high, mid) feature batches for images of shape (batch, H, W, 3)."""

    @property
    @abstractmethod
    def fingerprint(self) -> str:
        pass


class SurrogateProvider(EmbeddingProvider):

    def __init__(self, encoder: EncoderHandle):
        self.encoder = encoder

    def encode_batch(self, images, ids):
        out = self.encoder.network(tf.convert_to_tensor(images, dtype=tf.float32))
        return tf.stop_gradient(out.high), tf.stop_gradient(out.mid)

    @property
    def fingerprint(self) -> str:
        return self.encoder.fingerprint


class CacheProvider(EmbeddingProvider):
    """Reads features precomputed by an external encoder; images are looked up by id, so no augmentation.

    The last max_cached feature pairs read are kept in memory, None keeps every pair.
    """

    supports_augmentation = False

    def __init__(self, cache_dir: str, max_cached: Optional[int] = DEFAULT_MAX_CACHED):
        self.cache_dir = cache_dir
        manifest_path = os.path.join(cache_dir, CACHE_MANIFEST)
        if os.path.isfile(manifest_path):
            with open(manifest_path, 'r', encoding='utf-8') as f:
                self._fingerprint = json.load(f).get('digests', {}).get('encoder', '')
        else:
            self._fingerprint = ''
        self._features = functools.lru_cache(maxsize=max_cached)(self._read)

    def _read(self, image_id: str) -> FeaturePair:
        return load_cached_embedding(os.path.join(self.cache_dir, image_id), encoder_fingerprint=self._fingerprint)

    def features(self, image_id: str) -> FeaturePair:
        return self._features(image_id)

    def cache_info(self):
        return self._features.cache_info()

    def encode_batch(self, images, ids):
        pairs = [self.features(i) for i in ids]
        return (tf.constant(np.stack([p.high for p in pairs])),
                tf.constant(np.stack([p.mid for p in pairs])))

    @property
    def fingerprint(self) -> str:
        return self._fingerprint
