import hashlib
from abc import ABC, abstractmethod
from collections import namedtuple

import numpy as np
import tensorflow as tf

EncoderOutput = namedtuple('EncoderOutput', ('high', 'mid'))


def weights_fingerprint(weights) -> str:
    """SHA-256 digest of a list of arrays (shapes, dtypes and raw bytes, in order)."""
    digest = hashlib.sha256()
    for w in weights:
        w = np.ascontiguousarray(w)
        digest.update(repr(w.shape).encode('utf-8'))
        digest.update(w.dtype.str.encode('utf-8'))
        digest.update(w.tobytes())
    return digest.hexdigest()


class Network(tf.keras.layers.Layer, ABC):

    def __init__(self, name, trainable=True, dtype: str = 'float32'):
        super(Network, self).__init__(name=name, trainable=trainable, dtype=dtype)

    @abstractmethod
    def call(self, inputs, training=None, mask=None):
        pass

    @classmethod
    def from_config(cls, config):
        return cls(**config)

    @property
    def variables(self):
        if not self.built:
            raise ValueError("Network has not been built, unable to access variables.")
        return super(Network, self).variables

    @property
    def trainable_variables(self):
        if not self.built:
            raise ValueError("Network has not been built, unable to access variables.")
        return super(Network, self).trainable_variables

    def fingerprint(self) -> str:
        return weights_fingerprint(self.get_weights())

    def reseed(self, seed: int, zero_kernels: bool = False):
        """Deterministically re-initializes all weights from seed.

        Kernels are drawn from a Glorot uniform distribution with a numpy generator, biases are set to zero,
        so that the same seed gives bit-identical weights regardless of the tensorflow version.
        """
        rng = np.random.default_rng(seed)
        new_weights = []
        for w in self.get_weights():
            if w.ndim > 1 and not zero_kernels:
                receptive_field = int(np.prod(w.shape[:-2])) if w.ndim > 2 else 1
                fan_in, fan_out = w.shape[-2] * receptive_field, w.shape[-1] * receptive_field
                limit = np.sqrt(6. / (fan_in + fan_out))
                new_weights.append(rng.uniform(-limit, limit, size=w.shape).astype(w.dtype))
            else:
                new_weights.append(np.zeros_like(w))
        self.set_weights(new_weights)
