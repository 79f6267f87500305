"""Prior guided metric learning: a parameter-free prior mask computed from query and support features.

All functions accept a single sample (h x w x C features, H x W masks) or a leading batch axis.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import tensorflow as tf
from PIL import Image

from pyslvm.errors import DegenerateSupportError, ShapeError
from pyslvm.networks.prompt_network import downsample

COSINE_EPS = 1e-7
REDUCTIONS = ('max', 'mean')


@dataclass(frozen=True)
class PriorMask:
    raw: tf.Tensor  # cosine values in [-1, 1], (..., h_H, w_H)
    normalized: tf.Tensor  # min-max normalized raw, in [0, 1]
    target_class: Optional[int] = None


@dataclass(frozen=True)
class FusedQueryFeatures:
    tensor: tf.Tensor  # (..., h_M, w_M, C_M + 1), last channel is the upsampled normalized prior


def _with_batch(x):
    """Adds a batch axis to rank-3 features."""
    return x[tf.newaxis] if len(x.shape) == 3 else x


def mask_weight_features(support_high, support_mask):
    """Hadamard product of support features with the support mask average-pooled to their resolution.

    Args:
        support_high: (..., h, w, C) high-level support features.
        support_mask: (..., H, W) binary mask with at least one foreground pixel.
    Raises:
        DegenerateSupportError: if a mask has no foreground pixel.
    """
    support_high = tf.convert_to_tensor(support_high)
    mask = tf.cast(support_mask, support_high.dtype)
    mask_pixels = tf.reduce_sum(tf.reshape(mask, (-1, mask.shape[-2] * mask.shape[-1])), axis=-1)
    if bool(tf.reduce_any(mask_pixels <= 0)):
        raise DegenerateSupportError('support mask has no foreground pixel')
    single = len(support_high.shape) == 3
    features = _with_batch(support_high)
    soft_mask = downsample(tf.reshape(mask, (-1, mask.shape[-2], mask.shape[-1], 1)),
                           (features.shape[-3], features.shape[-2]))
    weighted = features * soft_mask
    return weighted[0] if single else weighted


def prior_map(query_high, weighted_support, reduction: str = 'max'):
    """Pixel-wise cosine association between query features and mask-weighted support features.

    With reduction 'max', raw[q] = max over support pixels s of cosine(query[q], support[s]); with 'mean',
    every query pixel is compared against the mask-weighted support prototype (sum over support pixels).
    Zero vectors have cosine 0.

    Returns:
        (..., h, w) map with values in [-1, 1].
    """
    query_high = tf.convert_to_tensor(query_high)
    weighted_support = tf.cast(weighted_support, query_high.dtype)
    if query_high.shape[-1] != weighted_support.shape[-1]:
        raise ShapeError(f'channel mismatch: query {query_high.shape[-1]}, support {weighted_support.shape[-1]}')
    if reduction not in REDUCTIONS:
        raise ValueError(f'unknown reduction {reduction}, use one of {REDUCTIONS}')
    single = len(query_high.shape) == 3
    q, s = _with_batch(query_high), _with_batch(weighted_support)
    h, w, c = q.shape[-3], q.shape[-2], q.shape[-1]
    q = tf.reshape(q, (-1, h * w, c))
    s = tf.reshape(s, (-1, s.shape[-3] * s.shape[-2], c))
    if reduction == 'mean':
        s = tf.reduce_sum(s, axis=1, keepdims=True)
    q = tf.math.divide_no_nan(q, tf.norm(q, axis=-1, keepdims=True))
    s = tf.math.divide_no_nan(s, tf.norm(s, axis=-1, keepdims=True))
    cosine = tf.matmul(q, s, transpose_b=True)
    raw = tf.clip_by_value(tf.reduce_max(cosine, axis=-1), -1., 1.)
    raw = tf.reshape(raw, (-1, h, w))
    return raw[0] if single else raw


def normalize_prior(raw, eps: float = COSINE_EPS):
    """Per-map min-max normalization (raw - min) / (max - min + eps); constant maps become 0.5."""
    raw = tf.convert_to_tensor(raw)
    lo = tf.reduce_min(raw, axis=(-2, -1), keepdims=True)
    hi = tf.reduce_max(raw, axis=(-2, -1), keepdims=True)
    spread = hi - lo
    normalized = (raw - lo) / (spread + eps)
    return tf.where(spread > 0, normalized, tf.fill(tf.shape(raw), tf.constant(0.5, raw.dtype)))


def aggregate_shots(priors: Sequence[PriorMask]) -> PriorMask:
    """Fuses K single-shot priors by elementwise mean (of normalized maps and of raw maps)."""
    if not priors:
        raise ValueError('at least one prior is required')
    shapes = {tuple(p.normalized.shape) for p in priors}
    if len(shapes) > 1:
        raise ShapeError(f'prior shapes differ: {sorted(shapes)}')
    classes = {p.target_class for p in priors}
    if len(classes) > 1:
        raise ValueError(f'priors target different classes: {classes}')
    if len(priors) == 1:
        return priors[0]
    return PriorMask(raw=tf.add_n([p.raw for p in priors]) / len(priors),
                     normalized=tf.add_n([p.normalized for p in priors]) / len(priors),
                     target_class=priors[0].target_class)


def fuse(query_mid, prior: PriorMask) -> FusedQueryFeatures:
    """Appends the normalized prior, bilinearly resized to the intermediate resolution, as a last channel."""
    query_mid = tf.convert_to_tensor(query_mid)
    single = len(query_mid.shape) == 3
    mid = _with_batch(query_mid)
    normalized = tf.reshape(tf.cast(prior.normalized, mid.dtype),
                            (-1, prior.normalized.shape[-2], prior.normalized.shape[-1], 1))
    upsampled = tf.cast(tf.image.resize(normalized, (mid.shape[-3], mid.shape[-2]), method='bilinear'), mid.dtype)
    fused = tf.concat([mid, upsampled], axis=-1)
    return FusedQueryFeatures(fused[0] if single else fused)


def episode_prior(query_high, support_high, support_masks, reduction: str = 'max',
                  target_class: Optional[int] = None) -> PriorMask:
    """Prior mask Y_P of a batch of K-shot episodes.

    Args:
        query_high: (batch, h, w, C) query features.
        support_high: (batch, K, h, w, C) support features.
        support_masks: (batch, K, H, W) support masks.
    """
    priors = []
    for shot in range(support_high.shape[1]):
        weighted = mask_weight_features(support_high[:, shot], support_masks[:, shot])
        raw = prior_map(query_high, weighted, reduction=reduction)
        priors.append(PriorMask(raw=raw, normalized=normalize_prior(raw), target_class=target_class))
    return aggregate_shots(priors)


def constant_prior(shape, dtype=tf.float32, target_class: Optional[int] = None) -> PriorMask:
    """Prior without support guidance: a constant 0.5 map."""
    return PriorMask(raw=tf.zeros(shape, dtype=dtype), normalized=tf.fill(shape, tf.constant(0.5, dtype)),
                     target_class=target_class)


def export_prior_png(prior: PriorMask, path: str):
    """Writes the normalized prior of a single map as an 8-bit grayscale PNG."""
    normalized = np.asarray(prior.normalized)
    if normalized.ndim != 2:
        raise ShapeError(f'expected a single h x w prior, got {normalized.shape}')
    Image.fromarray(np.round(normalized * 255).astype(np.uint8)).save(path)
