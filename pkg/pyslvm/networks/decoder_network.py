import gin
import tensorflow as tf

from pyslvm.networks.network import Network


@gin.configurable
class MaskDecoder(Network):
    """Frozen mask decoder: fusion conv blocks with 2x bilinear upsampling, ending in one logit channel.

    Takes the two gated embeddings (image branch and prior branch) and fuses them by channel concatenation.
    """

    def __init__(self,
                 embed_channels: int = 128,
                 block_params=(64, 32),
                 activation: str = 'tanh',
                 seed: int = 0,
                 dtype: str = 'float32',
                 do_init: bool = True,
                 name: str = 'MaskDecoder'):
        """Creates a frozen decoder.

        Args:
            embed_channels: (Optional) channels of each of the two input embeddings. Defaults to 128.
            block_params: (Optional) filters of each fusion block; every block is followed by a 2x upsampling.
              Defaults to (64, 32).
            activation: (Optional) activation of the fusion blocks. Defaults to 'tanh'.
            seed: (Optional) weight seed. Defaults to 0.
        """
        super(MaskDecoder, self).__init__(name=name, trainable=False, dtype=dtype)
        block_params = tuple(int(f) for f in block_params)
        self._config = {'embed_channels': embed_channels,
                        'block_params': block_params,
                        'activation': activation,
                        'seed': seed,
                        'dtype': dtype,
                        'do_init': do_init,
                        'name': name}
        self._embed_channels = embed_channels
        layers = []
        for filters in block_params:
            layers.append(tf.keras.layers.Conv2D(filters, 3, padding='same', activation=activation,
                                                 trainable=False, dtype=dtype))
            layers.append(tf.keras.layers.UpSampling2D(size=2, interpolation='bilinear', dtype=dtype))
        layers.append(tf.keras.layers.Conv2D(1, 1, activation=None, trainable=False, dtype=dtype))
        self._layers_seq = layers
        self.upsampling = 2 ** len(block_params)
        if do_init:
            dummy = tf.zeros((1, 1, 1, embed_channels), dtype=dtype)
            self((dummy, dummy))
            self.reseed(seed)

    @property
    def embed_channels(self) -> int:
        return self._embed_channels

    def call(self, inputs, training=False, mask=None):
        """Returns logits of shape (batch, upsampling * h, upsampling * w)."""
        gated_image, gated_prior = inputs
        x = tf.concat([tf.cast(gated_image, self.dtype), tf.cast(gated_prior, self.dtype)], axis=-1)
        for layer in self._layers_seq:
            x = layer(x)
        return x[..., 0]

    def get_config(self):
        return dict(self._config)
