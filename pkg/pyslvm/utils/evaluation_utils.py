import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from tqdm import tqdm

from pyslvm.data.dataset import LabeledImage
from pyslvm.data.episode import RegistryEntry, build_registry, registry_digest, sample_episode
from pyslvm.data.folds import FoldSplit
from pyslvm.errors import ProtocolError, ShapeError
from pyslvm.utils.training_utils import build_model, train

# (apl, pgml, fsla) rows of the component ablation
ABLATION_FLAGS = ((False, False, False), (True, False, False), (True, True, False), (True, True, True))
FLAG_NAMES = ('apl', 'pgml', 'fsla')


def binary_iou(pred: np.ndarray, target: np.ndarray) -> Optional[float]:
    """|pred & target| / |pred | target|, None when both masks are empty."""
    pred, target = np.asarray(pred).astype(bool), np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise ShapeError(f'prediction {pred.shape} and target {target.shape} shapes differ')
    union = np.logical_or(pred, target).sum()
    if union == 0:
        return None
    return float(np.logical_and(pred, target).sum() / union)


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


@dataclass(frozen=True)
class MetricsReport:
    per_class_iou: Dict[int, Optional[float]]
    fold_miou: Dict[int, Optional[float]]
    mean_miou: Optional[float]
    shots: int
    ablation_flags: Dict[str, bool] = field(default_factory=lambda: dict(zip(FLAG_NAMES, (True,) * 3)))
    config_digest: str = ''
    episode_registry_digest: str = ''

    @property
    def flags(self) -> Tuple[bool, bool, bool]:
        return tuple(bool(self.ablation_flags[k]) for k in FLAG_NAMES)


def aggregate(per_class_iou: Dict[int, Optional[float]], fold_of) -> Tuple[Dict[int, Optional[float]], Optional[float]]:
    """Fold mIoU as the unweighted mean of the defined class IoUs, mean mIoU as the unweighted mean over folds."""
    by_fold = defaultdict(list)
    for c in sorted(per_class_iou):
        by_fold[fold_of(c)].append(per_class_iou[c])
    fold_miou = {f: _mean(by_fold[f]) for f in sorted(by_fold)}
    return fold_miou, _mean(fold_miou.values())


def _check_registry(registry: Sequence[RegistryEntry], split: FoldSplit, shots: int):
    for entry in registry:
        if entry.fold != split.fold_index:
            raise ProtocolError(f'registry entry {entry.to_line()} belongs to fold {entry.fold}, '
                                f'evaluating fold {split.fold_index}')
        if entry.class_id not in split.test_classes:
            raise ProtocolError(f'registry entry {entry.to_line()} targets class {entry.class_id}, '
                                f'which is not a test class of fold {split.fold_index}')
        if entry.shot != shots:
            raise ProtocolError(f'registry entry {entry.to_line()} is {entry.shot}-shot, evaluating {shots}-shot')


def registry_episodes(dataset, split, registry, shots, image_size=None):
    for entry in registry:
        yield entry, sample_episode(dataset, split, entry.class_id, shots, entry.seed, phase='test',
                                    augmentation=False, size=image_size)


def predict_registry(model, dataset, split, registry, shots, image_size=None, batch_size=8, verbose=False):
    """Yields (entry, episode, probabilities) for every registry entry, predicting in batches."""
    batch = []
    with tqdm(total=len(registry), disable=not verbose) as pbar:
        pbar.set_description('EVALUATING')
        for item in registry_episodes(dataset, split, registry, shots, image_size):
            batch.append(item)
            if len(batch) == batch_size:
                yield from _predict_batch(model, batch)
                pbar.update(len(batch))
                batch = []
        if batch:
            yield from _predict_batch(model, batch)
            pbar.update(len(batch))


def _predict_batch(model, batch):
    probs = np.asarray(model.predict([episode for _, episode in batch]))
    for (entry, episode), p in zip(batch, probs):
        yield entry, episode, p


def evaluate(model,
             dataset: Sequence[LabeledImage],
             split: FoldSplit,
             registry: Sequence[RegistryEntry],
             shots: int,
             threshold: float = 0.5,
             image_size: Optional[int] = None,
             config_digest: str = '',
             ablation_flags: Optional[Dict[str, bool]] = None,
             batch_size: int = 8,
             verbose: bool = False) -> MetricsReport:
    """Scores a model on the registry episodes of the held-out fold.

    The IoU of a class is the mean, over its registry episodes, of binary_iou(prob >= threshold, gt); episodes
    with an undefined IoU are left out.

    Args:
        model: any object with predict(episodes) -> (batch, H, W) probabilities.
    Raises:
        ProtocolError: if a registry entry does not target a test class of split with the given shots.
    """
    _check_registry(registry, split, shots)
    if ablation_flags is None:
        ablation_flags = dict(getattr(model, 'flags', dict(zip(FLAG_NAMES, (True,) * 3))))
    scores = defaultdict(list)
    for entry, episode, probs in predict_registry(model, dataset, split, registry, shots, image_size,
                                                  batch_size=batch_size, verbose=verbose):
        scores[entry.class_id].append(binary_iou(probs >= threshold, episode.query_mask))
    per_class = {c: _mean(scores[c]) for c in sorted(scores)}
    fold_miou, mean_miou = aggregate(per_class, lambda c: split.fold_index)
    return MetricsReport(per_class_iou=per_class, fold_miou=fold_miou, mean_miou=mean_miou, shots=shots,
                         ablation_flags=dict(ablation_flags), config_digest=config_digest,
                         episode_registry_digest=registry_digest(registry))


def combine_reports(reports: Sequence[MetricsReport], split: FoldSplit) -> MetricsReport:
    """Merges single-fold reports into a cross-fold report; digests are joined in fold order."""
    if not reports:
        raise ValueError('no report to combine')
    shots = {r.shots for r in reports}
    if len(shots) > 1:
        raise ProtocolError(f'cannot combine reports of different shots {sorted(shots)}')
    per_class = {}
    for report in reports:
        overlap = set(per_class) & set(report.per_class_iou)
        if overlap:
            raise ProtocolError(f'classes {sorted(overlap)} are scored by more than one report')
        per_class.update(report.per_class_iou)
    per_class = dict(sorted(per_class.items()))
    fold_miou, mean_miou = aggregate(per_class, split.fold_of)
    return MetricsReport(per_class_iou=per_class, fold_miou=fold_miou, mean_miou=mean_miou, shots=shots.pop(),
                         ablation_flags=dict(reports[0].ablation_flags),
                         config_digest='+'.join(r.config_digest for r in reports),
                         episode_registry_digest='+'.join(r.episode_registry_digest for r in reports))


def run_ablation(config, dataset, split, registry=None, flags: Sequence[Tuple[bool, bool, bool]] = ABLATION_FLAGS,
                 provider=None, verbose: bool = True) -> List[MetricsReport]:
    """Trains and evaluates one model per (apl, pgml, fsla) triple with shared seeds and registry."""
    if registry is None:
        registry = build_registry(split, config.shots, n_episodes=config.n_eval_episodes, seed=config.seed)
    reports = []
    for apl, pgml, fsla in flags:
        run_config = config.replace(apl=apl, pgml=pgml, fsla=fsla)
        if verbose:
            print(f'ABLATION apl={int(apl)} pgml={int(pgml)} fsla={int(fsla)}')
        model = build_model(run_config, provider=provider)
        model, _ = train(run_config, dataset, split, model=model, verbose=verbose)
        reports.append(evaluate(model, dataset, split, registry, run_config.shots,
                                threshold=run_config.threshold, image_size=eval_image_size(run_config, model),
                                config_digest=run_config.digest, ablation_flags=run_config.flags))
    return reports


def run_folds(config, dataset, split: FoldSplit, provider=None, verbose: bool = True) -> Tuple[MetricsReport,
                                                                                                List[MetricsReport]]:
    """Trains and evaluates once per held-out fold, then combines the fold reports."""
    reports = []
    for fold_index in range(split.n_folds):
        fold_config = config.replace(fold_index=fold_index)
        fold_split = split.with_fold(fold_index)
        if verbose:
            print(f'FOLD {fold_index}: test classes {sorted(fold_split.test_classes)}')
        model, _ = train(fold_config, dataset, fold_split, model=build_model(fold_config, provider=provider),
                         verbose=verbose)
        registry = build_registry(fold_split, fold_config.shots, n_episodes=fold_config.n_eval_episodes,
                                  seed=fold_config.seed)
        reports.append(evaluate(model, dataset, fold_split, registry, fold_config.shots,
                                threshold=fold_config.threshold, image_size=eval_image_size(fold_config, model),
                                config_digest=fold_config.digest, ablation_flags=fold_config.flags))
    return combine_reports(reports, split), reports


def run_ablation_folds(config, dataset, split: FoldSplit,
                       flags: Sequence[Tuple[bool, bool, bool]] = ABLATION_FLAGS, provider=None,
                       verbose: bool = True) -> List[MetricsReport]:
    """Cross-fold ablation: every (apl, pgml, fsla) triple is trained and evaluated on each held-out fold.

    Each returned report combines the fold reports of one triple, so it carries every fold mIoU and their mean.
    Fold registries depend only on the config seed and are shared by all triples.
    """
    reports = []
    for apl, pgml, fsla in flags:
        if verbose:
            print(f'ABLATION apl={int(apl)} pgml={int(pgml)} fsla={int(fsla)}, all folds')
        combined, _ = run_folds(config.replace(apl=apl, pgml=pgml, fsla=fsla), dataset, split, provider=provider,
                                verbose=verbose)
        reports.append(combined)
    return reports


def eval_image_size(config, model) -> Optional[int]:
    """Cached features fix the image size to that of the stored images."""
    provider = getattr(model, 'provider', None)
    if provider is not None and not provider.supports_augmentation:
        return None
    return config.image_size


def mask_file_name(entry: RegistryEntry) -> str:
    return f'{entry.seed}_{entry.class_id}.png'


def write_mask_png(mask: np.ndarray, path: str):
    try:
        Image.fromarray(np.asarray(mask, dtype=bool)).save(path)
    except OSError as e:
        raise OSError(f'cannot write mask {path}: {e}') from e


def read_mask_png(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert('1'), dtype=bool)


def export_masks(model, dataset, split, registry, out_dir: str, shots: int, threshold: float = 0.5,
                 image_size: Optional[int] = None) -> List[str]:
    """Writes the thresholded prediction of every registry episode as a 1-bit PNG <seed>_<class>.png."""
    _check_registry(registry, split, shots)
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    paths = []
    for entry, _, probs in predict_registry(model, dataset, split, registry, shots, image_size):
        path = os.path.join(out_dir, mask_file_name(entry))
        write_mask_png(probs >= threshold, path)
        paths.append(path)
    return paths
