from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import tensorflow as tf

from pyslvm.data.augment import resize_label
from pyslvm.errors import ShapeError
from pyslvm.networks.prompt_network import downsample

BCE_EPS = 1e-7

Scalar = Union[float, tf.Tensor]


@dataclass(frozen=True)
class LossBreakdown:
    self_guidance: Scalar
    fine_tune: Scalar
    total: Scalar

    def numpy(self) -> 'LossBreakdown':
        return LossBreakdown(float(self.self_guidance), float(self.fine_tune), float(self.total))


def _flatten_pairs(pred, target):
    pred = tf.convert_to_tensor(pred)
    target = tf.cast(target, pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f'prediction {pred.shape} and target {target.shape} shapes differ')
    if len(pred.shape) < 1 or pred.shape[0] == 0:
        raise ShapeError('at least one prediction is required')
    n = pred.shape[0]
    return tf.reshape(pred, (n, -1)), tf.reshape(target, (n, -1))


def cosine_loss(pred, target):
    """L = 1/N * sum_i (1 - <Y_i, T_i> / (|Y_i| |T_i|)), each of the N items flattened to a vector.

    A zero-norm prediction or target contributes a cosine of 0.
    """
    pred, target = _flatten_pairs(pred, target)
    dot = tf.reduce_sum(pred * target, axis=-1)
    norms = tf.norm(pred, axis=-1) * tf.norm(target, axis=-1)
    return tf.reduce_mean(1. - tf.math.divide_no_nan(dot, norms))


def fine_tune_loss(pred, target):
    """Mean pixel-wise binary cross-entropy, with predictions clipped to [1e-7, 1 - 1e-7]."""
    pred = tf.convert_to_tensor(pred)
    target = tf.cast(target, pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f'prediction {pred.shape} and target {target.shape} shapes differ')
    p = tf.clip_by_value(pred, BCE_EPS, 1. - BCE_EPS)
    return -tf.reduce_mean(target * tf.math.log(p) + (1. - target) * tf.math.log(1. - p))


def total_loss(ls: Scalar, lf: Scalar, alpha: float, beta: float, phase: int) -> LossBreakdown:
    """Weighted objective; in phase 1 the fine-tuning term is reported but not weighted."""
    if phase not in (1, 2):
        raise ValueError(f'phase must be 1 or 2, got {phase}')
    total = alpha * ls if phase == 1 else alpha * ls + beta * lf
    return LossBreakdown(self_guidance=ls, fine_tune=lf, total=total)


def self_guidance_target(query_masks: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Query masks resized (nearest neighbour) to the high-level feature resolution."""
    return np.stack([resize_label(mask, size) for mask in query_masks])


def self_guidance_loss(probs, query_masks: np.ndarray, size: Tuple[int, int]):
    """Cosine loss between the prediction average-pooled to size and the resized ground truth."""
    probs = tf.convert_to_tensor(probs)
    pooled = downsample(probs[..., tf.newaxis], size)[..., 0]
    return cosine_loss(pooled, self_guidance_target(query_masks, size))


def episode_losses(probs, query_masks: np.ndarray, size: Tuple[int, int],
                   alpha: float, beta: float, phase: int) -> LossBreakdown:
    """L_s at the high-level resolution, L_f at full resolution, combined according to phase."""
    ls = self_guidance_loss(probs, query_masks, size)
    lf = fine_tune_loss(probs, query_masks)
    return total_loss(ls, lf, alpha, beta, phase)
