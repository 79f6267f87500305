import csv
import dataclasses
import hashlib
import math
import os
import random
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import gin
import numpy as np
import tensorflow as tf
from tensorflow.keras.optimizers import AdamW
from tqdm import tqdm

from pyslvm.data.dataset import LabeledImage
from pyslvm.data.episode import MAX_SEED, eligible_ids, sample_episode
from pyslvm.data.folds import FoldSplit
from pyslvm.embeddings.provider import CacheProvider, EmbeddingProvider, SurrogateProvider, build_surrogate_encoder
from pyslvm.errors import ConfigError, SamplingError
from pyslvm.layers.prior import REDUCTIONS
from pyslvm.models.slvm import SLVM
from pyslvm.networks import MaskDecoder, PromptLearner

DATA_ROOT_ENV = 'SLVM_DATA_ROOT'
SCHEDULERS = ('cosine', 'constant')
LOG_COLUMNS = ('step', 'epoch', 'phase', 'lr', 'loss_total', 'loss_s', 'loss_f')


@gin.configurable
@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    lr: float = 0.00025
    beta_1: float = 0.9
    weight_decay: float = 1e-4
    scheduler: str = 'cosine'
    epochs: int = 1000
    alpha: float = 1.0
    beta: float = 1.0
    phase_switch: float = 0.5
    seed: int = 0
    shots: int = 1
    episodes_per_epoch: int = 1000
    image_size: int = 256
    fold_sizes: Tuple[int, ...] = (4, 4, 4, 5)
    fold_index: int = 0
    encoder_seed: int = 0
    decoder_seed: int = 0
    learner_seed: int = 0
    augmentation: bool = True
    prior_reduction: str = 'max'
    apl: bool = True
    pgml: bool = True
    fsla: bool = True
    threshold: float = 0.5
    n_eval_episodes: int = 1000
    data_root: str = ''
    cache_dir: str = ''

    def validate(self) -> 'TrainConfig':
        """Raises ConfigError on the first invalid value."""
        checks = [
            (self.lr > 0, f'lr must be positive, got {self.lr}'),
            (0 < self.phase_switch < 1, f'phase_switch must be in (0, 1), got {self.phase_switch}'),
            (self.alpha >= 0 and self.beta >= 0, f'loss weights must be non-negative, got {self.alpha}, {self.beta}'),
            (self.batch_size >= 1, f'batch_size must be at least 1, got {self.batch_size}'),
            (self.epochs >= 1, f'epochs must be at least 1, got {self.epochs}'),
            (self.episodes_per_epoch >= 1, f'episodes_per_epoch must be at least 1, got {self.episodes_per_epoch}'),
            (self.shots >= 1, f'shots must be at least 1, got {self.shots}'),
            (self.image_size >= 16, f'image_size must be at least 16, got {self.image_size}'),
            (0 <= self.beta_1 < 1, f'beta_1 must be in [0, 1), got {self.beta_1}'),
            (self.weight_decay >= 0, f'weight_decay must be non-negative, got {self.weight_decay}'),
            (0 < self.threshold < 1, f'threshold must be in (0, 1), got {self.threshold}'),
            (self.n_eval_episodes >= 1, f'n_eval_episodes must be at least 1, got {self.n_eval_episodes}'),
            (self.prior_reduction in REDUCTIONS, f'prior_reduction must be one of {REDUCTIONS}'),
            (self.scheduler in SCHEDULERS, f'scheduler must be one of {SCHEDULERS}'),
            (len(self.fold_sizes) >= 2 and all(s >= 1 for s in self.fold_sizes),
             f'fold_sizes must hold at least two positive sizes, got {self.fold_sizes}'),
            (0 <= self.fold_index < len(self.fold_sizes), f'fold_index {self.fold_index} out of range'),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    @property
    def flags(self) -> dict:
        return {'apl': self.apl, 'pgml': self.pgml, 'fsla': self.fsla}

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.episodes_per_epoch / self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def switch_epoch(self) -> int:
        """First epoch of the fine-tuning phase."""
        return math.ceil(self.phase_switch * self.epochs)

    def phase_of(self, epoch: int) -> int:
        return 2 if self.fsla and epoch >= self.switch_epoch else 1

    def resolved_data_root(self) -> str:
        return self.data_root or os.environ.get(DATA_ROOT_ENV, '')

    def to_text(self) -> str:
        """Canonical flat key = value rendering, readable by load_config."""
        return ''.join(f'{f.name} = {getattr(self, f.name)!r}\n' for f in dataclasses.fields(self))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode('utf-8')).hexdigest()

    def replace(self, **changes) -> 'TrainConfig':
        return dataclasses.replace(self, **changes).validate()


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))


def parse_config(text: str, source: str = '<string>') -> TrainConfig:
    """Parses flat key = value text; keys are TrainConfig fields, values python literals bound through gin."""
    bindings = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError(f'{source}:{n}: expected "key = value", got "{line}"')
        key, value = (s.strip() for s in line.split('=', 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f'{source}:{n}: unknown key "{key}"')
        if not value:
            raise ConfigError(f'{source}:{n}: missing value for "{key}"')
        bindings.append(f'TrainConfig.{key} = {value}')
    with gin.unlock_config():
        gin.clear_config()
        try:
            gin.parse_config(bindings)
            config = TrainConfig()
        except (ValueError, SyntaxError, TypeError) as e:
            raise ConfigError(f'{source}: {e}') from e
        finally:
            gin.clear_config()
    if isinstance(config.fold_sizes, list):
        config = dataclasses.replace(config, fold_sizes=tuple(config.fold_sizes))
    return config.validate()


def load_config(path: str) -> TrainConfig:
    if not os.path.isfile(path):
        raise ConfigError(f'missing config file {path}')
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config(f.read(), source=path)


@gin.configurable
def get_optimizer(learning_rate=0.00025, total_steps=None, beta_1=0.9, weight_decay=1e-4, scheduler='cosine'):
    """AdamW; with the cosine scheduler the learning rate is annealed to zero over total_steps."""
    if scheduler == 'cosine' and total_steps:
        learning_rate = tf.keras.optimizers.schedules.CosineDecay(learning_rate, total_steps)
    return AdamW(learning_rate=learning_rate, beta_1=beta_1, weight_decay=weight_decay)


def learning_rate_at(optimizer, step: int) -> float:
    # recent keras optimizers expose the current value as learning_rate and keep the schedule aside
    lr = getattr(optimizer, '_learning_rate', None)
    if lr is None:
        lr = optimizer.learning_rate
    if isinstance(lr, tf.keras.optimizers.schedules.LearningRateSchedule):
        lr = lr(step)
    return float(lr)


def reset_random_seed(seed):
    os.environ['PYTHONHASHSEED'] = str(seed)
    random.seed(seed)
    np.random.seed(seed)
    tf.random.set_seed(seed)
    tf.config.experimental.enable_op_determinism()


@dataclass(frozen=True)
class LogRecord:
    step: int
    epoch: int
    phase: int
    lr: float
    loss_total: float
    loss_s: float
    loss_f: float

    def to_row(self) -> List[str]:
        return [str(self.step), str(self.epoch), str(self.phase), repr(self.lr),
                repr(self.loss_total), repr(self.loss_s), repr(self.loss_f)]


@dataclass
class TrainingLog:
    records: List[LogRecord] = field(default_factory=list)
    episode_classes: List[int] = field(default_factory=list)

    def append(self, record: LogRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def epoch_mean(self, epoch: int, column: str = 'loss_s') -> float:
        values = [getattr(r, column) for r in self.records if r.epoch == epoch]
        return float(np.mean(values)) if values else float('nan')

    def write_csv(self, path: str):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(LOG_COLUMNS)
            for record in self.records:
                writer.writerow(record.to_row())

    @classmethod
    def read_csv(cls, path: str) -> 'TrainingLog':
        log = cls()
        with open(path, 'r', newline='', encoding='utf-8') as f:
            for row in csv.DictReader(f):
                log.append(LogRecord(step=int(row['step']), epoch=int(row['epoch']), phase=int(row['phase']),
                                     lr=float(row['lr']), loss_total=float(row['loss_total']),
                                     loss_s=float(row['loss_s']), loss_f=float(row['loss_f'])))
        return log


def build_provider(config: TrainConfig) -> EmbeddingProvider:
    if config.cache_dir:
        return CacheProvider(config.cache_dir)
    return SurrogateProvider(build_surrogate_encoder(seed=config.encoder_seed))


def build_model(config: TrainConfig,
                provider: Optional[EmbeddingProvider] = None,
                training: bool = True) -> SLVM:
    """Builds the segmenter with the networks seeded from config; the optimizer is attached by train()."""
    if provider is None:
        provider = build_provider(config)
    decoder = MaskDecoder(seed=config.decoder_seed)
    learner_kwargs = {}
    if isinstance(provider, SurrogateProvider):
        network = provider.encoder.network
        if network.high_channels != decoder.embed_channels:
            raise ConfigError(f'encoder gives {network.high_channels} channels, decoder expects '
                              f'{decoder.embed_channels}')
        learner_kwargs['fused_channels'] = network.mid_channels + 1
    learner = PromptLearner(embed_channels=decoder.embed_channels, seed=config.learner_seed, **learner_kwargs)
    return SLVM(provider, decoder, learner, alpha=config.alpha, beta=config.beta,
                apl=config.apl, pgml=config.pgml, fsla=config.fsla, prior_reduction=config.prior_reduction,
                training=training)


def trainable_classes(dataset: Sequence[LabeledImage], split: FoldSplit, shots: int) -> List[int]:
    """Train-fold classes with enough images for a shots-shot episode."""
    return [c for c in sorted(split.train_classes) if len(eligible_ids(dataset, c)) >= shots + 1]


def train(config: TrainConfig,
          dataset: Sequence[LabeledImage],
          split: FoldSplit,
          model: Optional[SLVM] = None,
          verbose: bool = True) -> Tuple[SLVM, TrainingLog]:
    """Trains the prompt learner on episodes of the train-fold classes.

    Epochs before config.switch_epoch optimize alpha * L_s only, later ones alpha * L_s + beta * L_f.
    Encoder and decoder digests are compared before and after the run.

    Returns:
        the trained segmenter and its TrainingLog.
    Raises:
        SamplingError: if no train class has enough images.
        FreezeViolationError: if the encoder or decoder changed.
        DivergenceError: on a non-finite loss.
    """
    config.validate()
    reset_random_seed(config.seed)
    if model is None:
        model = build_model(config)
    if model.optimizer is None:
        model.set_optimizer(get_optimizer(config.lr, total_steps=config.total_steps, beta_1=config.beta_1,
                                          weight_decay=config.weight_decay, scheduler=config.scheduler))
    classes = trainable_classes(dataset, split, config.shots)
    if not classes:
        raise SamplingError(f'no train class of fold {split.fold_index} has {config.shots + 1} images')

    reference = model.frozen_fingerprints()
    log = TrainingLog()
    if not model.apl:
        if verbose:
            print('prompt learning disabled, nothing to train')
        model.verify_frozen(reference)
        return model, log

    augmentation = config.augmentation and model.provider.supports_augmentation
    size = config.image_size if model.provider.supports_augmentation else None
    rng = np.random.default_rng(config.seed)
    model.toggle_training(True)

    if verbose:
        print(f'{"*" * 42}\nSTARTING TRAINING\n{"*" * 42}')
    with tqdm(total=config.total_steps, disable=not verbose) as pbar:
        pbar.set_description('TRAINING')
        step = 0
        for epoch in range(config.epochs):
            phase = config.phase_of(epoch)
            if phase == 2:
                pbar.set_description('PHASE 2')
            remaining = config.episodes_per_epoch
            while remaining > 0:
                n = min(config.batch_size, remaining)
                remaining -= n
                episodes = []
                for _ in range(n):
                    target_class = int(rng.choice(classes))
                    episodes.append(sample_episode(dataset, split, target_class, config.shots,
                                                   seed=int(rng.integers(MAX_SEED)), phase='train',
                                                   augmentation=augmentation, size=size))
                    log.episode_classes.append(target_class)
                lr = learning_rate_at(model.optimizer, step)
                losses = model.train(episodes, phase=phase)
                log.append(LogRecord(step=step, epoch=epoch, phase=phase, lr=lr, loss_total=losses.total,
                                     loss_s=losses.self_guidance, loss_f=losses.fine_tune))
                step += 1
                pbar.update(1)
                pbar.set_postfix(loss=f'{losses.total:.4f}', loss_s=f'{losses.self_guidance:.4f}')

    model.verify_frozen(reference)
    model.toggle_training(False)
    return model, log
