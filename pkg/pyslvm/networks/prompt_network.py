import gin
import tensorflow as tf

from pyslvm.errors import ShapeError
from pyslvm.networks.network import Network


def downsample(x, size):
    """Average-pools a (batch, H, W, C) tensor to size; falls back to area resizing for uneven factors."""
    height, width = x.shape[-3], x.shape[-2]
    h, w = size
    if (height, width) == (h, w):
        return x
    if height % h == 0 and width % w == 0:
        factor = (height // h, width // w)
        return tf.nn.avg_pool2d(x, ksize=factor, strides=factor, padding='VALID')
    return tf.cast(tf.image.resize(x, size, method='area'), x.dtype)


@gin.configurable
class PromptLearner(Network):
    """The only trainable part of the model.

    It owns two heads: the indicator head, two 3x3 convolutions mapping the fused query features to one logit
    per high-level position, and the prior embedding head, a bias-free 1x1 lift of the prior mask to the
    channels of the image embedding.
    """

    def __init__(self,
                 fused_channels: int = 65,
                 embed_channels: int = 128,
                 hidden_units: int = 32,
                 activation: str = 'tanh',
                 prior_bias_scale: float = 4.0,
                 seed: int = 0,
                 zero_init: bool = False,
                 dtype: str = 'float32',
                 do_init: bool = True,
                 name: str = 'PromptLearner'):
        """Creates the prompt learner.

        Args:
            fused_channels: (Optional) channels of the fused query features (C_M + 1). Defaults to 65.
            embed_channels: (Optional) channels of the image embedding (C_H). Defaults to 128.
            hidden_units: (Optional) width of the hidden indicator convolution. Defaults to 32.
            activation: (Optional) hidden activation. Defaults to 'tanh'.
            prior_bias_scale: (Optional) the prior p enters the indicator logit as scale * (p - 0.5).
              Defaults to 4.0.
            seed: (Optional) weight seed. Defaults to 0.
            zero_init: (Optional) if True, every kernel starts at zero. Defaults to False.
            dtype: (Optional) network dtype. Defaults to 'float32'.
        """
        super(PromptLearner, self).__init__(name=name, trainable=True, dtype=dtype)
        self._config = {'fused_channels': fused_channels,
                        'embed_channels': embed_channels,
                        'hidden_units': hidden_units,
                        'activation': activation,
                        'prior_bias_scale': prior_bias_scale,
                        'seed': seed,
                        'zero_init': zero_init,
                        'dtype': dtype,
                        'do_init': do_init,
                        'name': name}
        self._fused_channels = fused_channels
        self._embed_channels = embed_channels
        self._prior_bias_scale = prior_bias_scale
        self._indicator_layers = [
            tf.keras.layers.Conv2D(hidden_units, 3, padding='same', activation=activation, dtype=dtype),
            tf.keras.layers.Conv2D(1, 3, padding='same', activation=None, dtype=dtype),
        ]
        self._prior_embedding = tf.keras.layers.Conv2D(embed_channels, 1, use_bias=False, dtype=dtype)
        if do_init:
            self((tf.zeros((1, 1, 1, fused_channels), dtype=dtype), tf.zeros((1, 1, 1), dtype=dtype)))
            self.reseed(seed, zero_kernels=zero_init)

    @property
    def indicator_weights(self):
        return [v for layer in self._indicator_layers for v in layer.trainable_variables]

    @property
    def prior_embed_weights(self):
        return list(self._prior_embedding.trainable_variables)

    def indicators(self, fused, prior):
        """Prompt indicators W in (0, 1).

        Args:
            fused: (batch, h_M, w_M, C_M + 1) fused query features.
            prior: (batch, h_H, w_H) normalized prior mask, which fixes the output resolution.
        Returns:
            (batch, h_H, w_H) tensor.
        """
        if fused.shape[-1] != self._fused_channels:
            raise ShapeError(f'expected {self._fused_channels} fused channels, got {fused.shape[-1]}')
        prior = tf.cast(prior, self.dtype)
        x = downsample(tf.cast(fused, self.dtype), (prior.shape[-2], prior.shape[-1]))
        for layer in self._indicator_layers:
            x = layer(x)
        logits = x[..., 0] + self._prior_bias_scale * (prior - 0.5)
        return tf.sigmoid(logits)

    def embed_prior(self, prior):
        """Per-pixel linear lift of the (batch, h, w) prior to (batch, h, w, C_H)."""
        return self._prior_embedding(tf.cast(prior, self.dtype)[..., tf.newaxis])

    def call(self, inputs, training=False, mask=None):
        fused, prior = inputs
        return self.indicators(fused, prior), self.embed_prior(prior)

    def get_config(self):
        return dict(self._config)


def derive_prompt_indicators(params: PromptLearner, fused, prior):
    """W = sigmoid(indicator_head(fused) + prior logit bias), see PromptLearner.indicators.

    prior may be a PriorMask or its normalized map.
    """
    return params.indicators(fused, getattr(prior, 'normalized', prior))


def embed_prior(params: PromptLearner, prior):
    return params.embed_prior(getattr(prior, 'normalized', prior))
