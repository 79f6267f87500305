import gin
import tensorflow as tf

from pyslvm.errors import ShapeError
from pyslvm.networks.network import Network, EncoderOutput


@gin.configurable
class SurrogateEncoder(Network):
    """Small frozen convolutional encoder standing in for a large pretrained image encoder.

    Every stage is a strided convolution; the output of stage `mid_stage` is the intermediate feature map E_M,
    the output of the last stage is the high-level feature map E_H.
    """

    def __init__(self,
                 conv_params=((16, 3, 2), (32, 3, 2), (64, 3, 2), (128, 3, 2)),
                 mid_stage: int = 2,
                 activation: str = 'tanh',
                 seed: int = 0,
                 dtype: str = 'float32',
                 do_init: bool = True,
                 name: str = 'SurrogateEncoder'):
        """Creates the encoder, initializes it from seed and freezes it.

        Args:
            conv_params: (Optional) Iterable of (filters, kernel_size, strides) tuples, one per stage.
              Defaults to four stride-2 stages with 16, 32, 64 and 128 filters.
            mid_stage: (Optional) 0-based index of the stage tapped for intermediate features. Defaults to 2.
            activation: (Optional) activation of every stage. Defaults to 'tanh'.
            seed: (Optional) weight seed. Defaults to 0.
            dtype: (Optional) network dtype. Defaults to 'float32'.
            do_init: (Optional) if True, builds and seeds the network. Defaults to True.
            name: (Optional) name of the network.
        """
        super(SurrogateEncoder, self).__init__(name=name, trainable=False, dtype=dtype)
        conv_params = tuple(tuple(int(v) for v in p) for p in conv_params)
        if not 0 <= mid_stage < len(conv_params) - 1:
            raise ValueError(f'mid_stage must tap a stage before the last one, got {mid_stage}')
        self._config = {'conv_params': conv_params,
                        'mid_stage': mid_stage,
                        'activation': activation,
                        'seed': seed,
                        'dtype': dtype,
                        'do_init': do_init,
                        'name': name}
        self._mid_stage = mid_stage
        self._stages = []
        for (filters, kernel_size, strides) in conv_params:
            self._stages.append(tf.keras.layers.Conv2D(filters=filters,
                                                       kernel_size=kernel_size,
                                                       strides=strides,
                                                       padding='same',
                                                       activation=activation,
                                                       trainable=False,
                                                       dtype=dtype))
        self.min_size = 1
        for (_, _, strides) in conv_params:
            self.min_size *= strides
        if do_init:
            self(tf.zeros((1, self.min_size, self.min_size, 3), dtype=dtype))
            self.reseed(seed)

    @property
    def mid_channels(self) -> int:
        return self._config['conv_params'][self._mid_stage][0]

    @property
    def high_channels(self) -> int:
        return self._config['conv_params'][-1][0]

    def call(self, inputs, training=False, mask=None) -> EncoderOutput:
        if inputs.shape[-3] < self.min_size or inputs.shape[-2] < self.min_size:
            raise ShapeError(f'encoder needs inputs of at least {self.min_size}x{self.min_size}, '
                             f'got {inputs.shape[-3]}x{inputs.shape[-2]}')
        x = tf.cast(inputs, self.dtype)
        mid = None
        for i, stage in enumerate(self._stages):
            x = stage(x)
            if i == self._mid_stage:
                mid = x
        return EncoderOutput(high=x, mid=mid)

    def get_config(self):
        return dict(self._config)
