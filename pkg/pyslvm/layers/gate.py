from dataclasses import dataclass
from typing import Tuple

import tensorflow as tf

from pyslvm.errors import ShapeError
from pyslvm.networks import MaskDecoder


@dataclass(frozen=True)
class PromptGate:
    w: tf.Tensor  # (..., h, w) in [0, 1]
    gated_image: tf.Tensor  # w * E(X)
    gated_prior: tf.Tensor  # (1 - w) * E(Y_P)


def gate(w, image_high, prior_embedding) -> PromptGate:
    image_high = tf.convert_to_tensor(image_high)
    prior_embedding = tf.cast(prior_embedding, image_high.dtype)
    w = tf.cast(w, image_high.dtype)
    if image_high.shape != prior_embedding.shape:
        raise ShapeError(f'image embedding {image_high.shape} and prior embedding {prior_embedding.shape} differ')
    if w.shape != image_high.shape[:-1]:
        raise ShapeError(f'indicator map {w.shape} does not match embedding {image_high.shape[:-1]}')
    w_ = w[..., tf.newaxis]
    return PromptGate(w=w, gated_image=w_ * image_high, gated_prior=(1. - w_) * prior_embedding)


def gate_and_decode(decoder: MaskDecoder, w, image_high, prior_embedding, output_size: Tuple[int, int]):
    """Decodes D(W * E(X), (1 - W) * E(Y_P)) and bilinearly upsamples the logits to output_size.

    Returns:
        (batch, H, W) logits.
    """
    if image_high.shape[-1] != decoder.embed_channels:
        raise ShapeError(f'decoder expects {decoder.embed_channels} channels, got {image_high.shape[-1]}')
    gated = gate(w, image_high, prior_embedding)
    logits = decoder((gated.gated_image, gated.gated_prior))
    logits = tf.image.resize(logits[..., tf.newaxis], output_size, method='bilinear')[..., 0]
    return tf.cast(logits, decoder.dtype)
