import abc
import json
import os
from typing import Dict, List, Optional

import numpy as np
import tensorflow as tf

import pyslvm.utils.json_utils as json_utils
from pyslvm.embeddings.cache import read_tensor, write_tensor
from pyslvm.errors import CacheFormatError

CHECKPOINT_MANIFEST = 'manifest.json'


class FewShotSegmenter(tf.Module, abc.ABC):
    """Abstract base class for all few-shot segmenters.

    The segmenter serves two purposes:
    * Training on batches of episodes, updating its trainable networks (train() method)
    * Predicting query masks of episodes (predict() method)
    """

    eps = 1e-8  # numerical stability

    def __init__(self,
                 training: bool = True,
                 name: str = 'FewShotSegmenter',
                 dtype: str = 'float32'):
        """Creates a segmenter.

        Args:
            training: (Optional) If True, segmenter is in training phase. Defaults to True.
            name: (Optional) Name of the segmenter.
            dtype: (Optional) dtype of the trainable networks. Defaults to 'float32'.
        """
        super(FewShotSegmenter, self).__init__(name=name)
        self._training = training
        self._config = {'name': name, 'dtype': dtype}
        self._train_step = 0
        self.dtype = dtype

    @property
    def train_step(self) -> int:
        return self._train_step

    @property
    def config(self) -> dict:
        return self._config

    @property
    def training(self) -> bool:
        return self._training

    def toggle_training(self, training: Optional[bool] = None) -> None:
        """Allows toggling between training and evaluation mode.

        Args:
            training: (Optional) If True, set to training mode; if False, set to evaluation mode;
              if None, toggles current mode. Defaults to None.
        """
        self._training = not self._training if training is None else training

    @abc.abstractmethod
    def predict(self, episodes) -> np.ndarray:
        """Returns query mask probabilities, shape (batch, H, W)."""

    @abc.abstractmethod
    def _loss(self, episodes, phase: int):
        """Computes loss."""

    @abc.abstractmethod
    def _train(self, episodes, phase: int, *args, **kwargs):
        """Performs one optimization step on a batch of episodes.

        Subclasses must implement this method.
        Returns:
            LossBreakdown of the step.
        """

    def train(self, episodes, phase: int = 1, *args, **kwargs):
        """Performs training step. Subclasses must not override this method, but must implement _train()."""
        losses = self._train(episodes, phase, *args, **kwargs)
        self._train_step += 1
        return losses

    @abc.abstractmethod
    def _networks_config_and_weights(self) -> List[tuple]:
        """ Returns a list of tuples (name, config, weights)
        for each network that the segmenter wants to be saved"""

    def frozen_fingerprints(self) -> Dict[str, str]:
        """Digests of the networks that must never change; saved alongside checkpoints."""
        return {}

    def save(self, path: str, extra: Optional[dict] = None) -> str:
        """Saves the trainable networks to directory path: one tensor file per weight plus a manifest.

        Args:
            path: checkpoint directory.
            extra: (Optional) additional JSON-serializable entries stored in the manifest.
        Returns:
            the manifest path.
        """
        if not os.path.isdir(path):
            os.makedirs(path)
        manifest = {'segmenter': self._config,
                    'train_step': self._train_step,
                    'frozen': self.frozen_fingerprints(),
                    'networks': {}}
        for net_name, net_config, net_weights in self._networks_config_and_weights():
            tensors = []
            for i, weights in enumerate(net_weights):
                file_name = f'{net_name}_weights{i:0>3}.bin'
                write_tensor(os.path.join(path, file_name), weights)
                tensors.append({'file': file_name, 'shape': list(weights.shape)})
            manifest['networks'][net_name] = {'config': net_config, 'tensors': tensors}
        if extra:
            manifest.update(extra)
        manifest_path = os.path.join(path, CHECKPOINT_MANIFEST)
        with open(manifest_path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=json_utils.get_json_type)
        return manifest_path

    @staticmethod
    def read_manifest(path: str) -> dict:
        manifest_path = os.path.join(path, CHECKPOINT_MANIFEST)
        if not os.path.isfile(manifest_path):
            raise CacheFormatError(f'missing checkpoint manifest {manifest_path}')
        with open(manifest_path, 'r', encoding='utf-8') as f:
            return json_utils.decode(f.read())

    @staticmethod
    def load_network_weights(path: str, manifest: dict, net_name: str) -> List[np.ndarray]:
        weights = []
        for tensor in manifest['networks'][net_name]['tensors']:
            array = read_tensor(os.path.join(path, tensor['file']))
            if list(array.shape) != list(tensor['shape']):
                raise CacheFormatError(f'{tensor["file"]}: shape {array.shape} differs from manifest {tensor["shape"]}')
            weights.append(array)
        return weights
