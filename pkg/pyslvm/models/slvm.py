from collections import namedtuple
from typing import List, Optional, Sequence, Tuple

import gin
import numpy as np
import tensorflow as tf

from pyslvm.data.episode import Episode
from pyslvm.embeddings.provider import EmbeddingProvider
from pyslvm.errors import DivergenceError, FreezeViolationError, ShapeError
from pyslvm.layers.gate import gate_and_decode
from pyslvm.layers.prior import REDUCTIONS, PriorMask, constant_prior, episode_prior, fuse
from pyslvm.models.segmenter import FewShotSegmenter
from pyslvm.networks import MaskDecoder, PromptLearner, derive_prompt_indicators, embed_prior
from pyslvm.utils.losses import LossBreakdown, episode_losses

EpisodeFeatures = namedtuple('EpisodeFeatures',
                             ('query_high', 'query_mid', 'support_high', 'support_masks', 'output_size'))
ForwardOutput = namedtuple('ForwardOutput', ('probs', 'prior', 'logits', 'w'), defaults=(None, None))


def stack_episodes(episodes: Sequence[Episode]) -> Tuple[np.ndarray, List[str], int]:
    """Flattens a batch of episodes into one image batch: for each episode its K supports, then its query."""
    if not episodes:
        raise ValueError('empty episode batch')
    shots = {e.shots for e in episodes}
    shapes = {e.image_shape for e in episodes}
    if len(shots) > 1 or len(shapes) > 1:
        raise ShapeError(f'episodes of a batch must share shots and image size, got {shots} and {shapes}')
    images, ids = [], []
    for e in episodes:
        images.extend(e.support_images)
        images.append(e.query_image)
        ids.extend(e.support_ids or [''] * e.shots)
        ids.append(e.query_id)
    return np.stack(images).astype(np.float32), ids, shots.pop()


def forward(features: EpisodeFeatures,
            learner: PromptLearner,
            decoder: MaskDecoder,
            apl: bool = True,
            pgml: bool = True,
            prior_reduction: str = 'max') -> ForwardOutput:
    """Full prediction pipeline on encoded episodes.

    With pgml off the prior is a constant 0.5 map; with apl off the prediction is the prior thresholded at 0.5
    and upsampled (nearest) to the image size, no prompt learner is involved.
    """
    query_high = features.query_high
    if pgml:
        prior = episode_prior(query_high, features.support_high, features.support_masks,
                              reduction=prior_reduction)
    else:
        prior = constant_prior(tuple(query_high.shape[:-1]), dtype=query_high.dtype)
    if not apl:
        hard = tf.cast(prior.normalized >= 0.5, tf.float32)
        probs = tf.image.resize(hard[..., tf.newaxis], features.output_size, method='nearest')[..., 0]
        return ForwardOutput(probs=probs, prior=prior)
    fused = fuse(features.query_mid, prior)
    w = derive_prompt_indicators(learner, fused.tensor, prior)
    prior_embedding = embed_prior(learner, prior)
    logits = gate_and_decode(decoder, w, query_high, prior_embedding, features.output_size)
    return ForwardOutput(probs=tf.sigmoid(logits), prior=prior, logits=logits, w=w)


@gin.configurable
class SLVM(FewShotSegmenter):
    """Few-shot segmenter built on a frozen encoder and decoder.

    A parameter-free prior mask localizes the target class from the supports; the prompt learner turns it into
    per-pixel indicators that gate the image embedding against an embedding of the prior before decoding.
    Only the prompt learner is ever trained.
    """

    def __init__(self,
                 provider: EmbeddingProvider,
                 decoder: MaskDecoder,
                 prompt_learner: PromptLearner,
                 optimizer: Optional[tf.keras.optimizers.Optimizer] = None,
                 alpha: float = 1.0,
                 beta: float = 1.0,
                 apl: bool = True,
                 pgml: bool = True,
                 fsla: bool = True,
                 prior_reduction: str = 'max',
                 training: bool = True,
                 name: str = 'SLVM',
                 dtype: str = 'float32'):
        """Creates a SLVM segmenter.

        Args:
            provider: source of the frozen image features.
            decoder: frozen mask decoder.
            prompt_learner: the trainable indicator and prior embedding heads.
            optimizer: (Optional) tf optimizer used for training; it can also be set later with set_optimizer().
            alpha: (Optional) weight of the self-guidance loss. Defaults to 1.0.
            beta: (Optional) weight of the fine-tuning loss. Defaults to 1.0.
            apl: (Optional) if False, predictions are the thresholded prior and nothing is trained.
              Defaults to True.
            pgml: (Optional) if False, the prior is a constant 0.5 map. Defaults to True.
            fsla: (Optional) if False, the fine-tuning phase never starts. Defaults to True.
            prior_reduction: (Optional) 'max' or 'mean' reduction over support pixels. Defaults to 'max'.
        """
        super(SLVM, self).__init__(training=training, name=name, dtype=dtype)
        if prior_reduction not in REDUCTIONS:
            raise ValueError(f'unknown prior reduction {prior_reduction}, use one of {REDUCTIONS}')
        self._provider = provider
        self._decoder = decoder
        self._learner = prompt_learner
        self._optimizer = optimizer
        self._alpha = alpha
        self._beta = beta
        self._apl = apl
        self._pgml = pgml
        self._fsla = fsla
        self._prior_reduction = prior_reduction

        self.config.update({
            'alpha': alpha,
            'beta': beta,
            'apl': apl,
            'pgml': pgml,
            'fsla': fsla,
            'prior_reduction': prior_reduction
        })

    @property
    def provider(self) -> EmbeddingProvider:
        return self._provider

    @property
    def decoder(self) -> MaskDecoder:
        return self._decoder

    @property
    def prompt_learner(self) -> PromptLearner:
        return self._learner

    @property
    def optimizer(self):
        return self._optimizer

    def set_optimizer(self, optimizer: tf.keras.optimizers.Optimizer):
        self._optimizer = optimizer

    @property
    def flags(self) -> dict:
        return {'apl': self._apl, 'pgml': self._pgml, 'fsla': self._fsla}

    @property
    def apl(self) -> bool:
        return self._apl

    @property
    def fsla(self) -> bool:
        return self._fsla

    def episode_features(self, episodes: Sequence[Episode]) -> EpisodeFeatures:
        images, ids, shots = stack_episodes(episodes)
        high, mid = self._provider.encode_batch(images, ids)
        group = shots + 1
        high = tf.reshape(high, (len(episodes), group, *high.shape[1:]))
        mid = tf.reshape(mid, (len(episodes), group, *mid.shape[1:]))
        support_masks = np.stack([e.support_masks for e in episodes]).astype(np.float32)
        return EpisodeFeatures(query_high=high[:, -1],
                               query_mid=mid[:, -1],
                               support_high=high[:, :-1],
                               support_masks=tf.constant(support_masks),
                               output_size=episodes[0].image_shape)

    def forward(self, episodes: Sequence[Episode]) -> ForwardOutput:
        return forward(self.episode_features(episodes), self._learner, self._decoder,
                       apl=self._apl, pgml=self._pgml, prior_reduction=self._prior_reduction)

    def prior(self, episodes: Sequence[Episode]) -> PriorMask:
        return self.forward(episodes).prior

    def predict(self, episodes: Sequence[Episode]) -> np.ndarray:
        return self.forward(episodes).probs.numpy()

    def _phase(self, phase: int) -> int:
        # without fsla the fine-tuning phase never starts
        return phase if self._fsla else 1

    def _loss(self, episodes, phase: int) -> LossBreakdown:
        features = self.episode_features(episodes)
        out = forward(features, self._learner, self._decoder,
                      apl=self._apl, pgml=self._pgml, prior_reduction=self._prior_reduction)
        query_masks = np.stack([e.query_mask for e in episodes]).astype(np.float32)
        size = (features.query_high.shape[-3], features.query_high.shape[-2])
        return episode_losses(out.probs, query_masks, size, self._alpha, self._beta, self._phase(phase))

    def _train(self, episodes, phase: int, *args, **kwargs) -> LossBreakdown:
        assert self._training, 'called train function while in evaluation mode, call toggle_training() before'
        assert self._apl, 'nothing to train when prompt learning is disabled'
        if self._optimizer is None:
            raise ValueError('segmenter cannot be trained without optimizer')
        # compute loss
        with tf.GradientTape() as tape:
            losses = self._loss(episodes, phase)
        if not bool(tf.math.is_finite(losses.total)):
            raise DivergenceError(f'non-finite loss {float(losses.total)} in phase {self._phase(phase)}',
                                  step=self._train_step)
        # backward pass, only the prompt learner receives gradients
        variables_to_train = self._learner.trainable_variables
        grads = tape.gradient(losses.total, variables_to_train)
        grads_and_vars = [(g, v) for g, v in zip(grads, variables_to_train) if g is not None]
        self._optimizer.apply_gradients(grads_and_vars)

        return losses.numpy()

    def frozen_fingerprints(self) -> dict:
        return {'encoder': self._provider.fingerprint, 'decoder': self._decoder.fingerprint()}

    def verify_frozen(self, reference: dict):
        """Raises FreezeViolationError if the encoder or decoder digest differs from reference."""
        current = self.frozen_fingerprints()
        drifted = sorted(k for k, v in reference.items() if current.get(k) != v)
        if drifted:
            raise FreezeViolationError(f'frozen parameters changed: {", ".join(drifted)}')

    def _networks_config_and_weights(self):
        return [('prompt_learner', self._learner.get_config(), self._learner.get_weights())]

    @classmethod
    def load(cls, path: str, provider: EmbeddingProvider, decoder: MaskDecoder, **kwargs) -> 'SLVM':
        """Restores a segmenter saved with save(); provider and decoder must match the saved fingerprints."""
        manifest = cls.read_manifest(path)
        learner_config = dict(manifest['networks']['prompt_learner']['config'])
        learner = PromptLearner(**learner_config)
        learner.set_weights(cls.load_network_weights(path, manifest, 'prompt_learner'))
        segmenter_config = {k: v for k, v in manifest['segmenter'].items() if k not in ('name', 'dtype')}
        segmenter_config.update(kwargs)
        segmenter = cls(provider, decoder, learner, name=manifest['segmenter']['name'], **segmenter_config)
        frozen = manifest.get('frozen', {})
        # a cache provider may not know the encoder digest
        if not provider.fingerprint:
            frozen = {k: v for k, v in frozen.items() if k != 'encoder'}
        segmenter.verify_frozen(frozen)
        segmenter._train_step = manifest.get('train_step', 0)
        return segmenter

    def params_fingerprint(self) -> str:
        return self._learner.fingerprint()
