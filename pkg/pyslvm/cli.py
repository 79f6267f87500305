import hashlib
import json
import os
import sys
from argparse import ArgumentParser
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence, Tuple

import pyslvm.utils.json_utils as json_utils
from pyslvm.data import (build_registry, load_dataset, make_fixture, partition_folds, read_classes, read_registry,
                         registry_digest, write_registry)
from pyslvm.embeddings import (build_surrogate_encoder, cache_paths, encode, is_valid_tensor_file,
                               save_cached_embedding)
from pyslvm.embeddings.provider import CACHE_MANIFEST
from pyslvm.errors import ConfigError, SLVMError
from pyslvm.models import SLVM
from pyslvm.networks import MaskDecoder
from pyslvm.utils.evaluation_utils import (FLAG_NAMES, evaluate, eval_image_size, export_masks, run_ablation,
                                           run_ablation_folds, run_folds)
from pyslvm.utils.report_utils import format_report, format_table, write_report
from pyslvm.utils.training_utils import (DATA_ROOT_ENV, TrainConfig, build_model, build_provider, load_config,
                                         train)

MANIFEST = 'manifest.json'


@dataclass
class RunManifest:
    command: str
    config_path: str = ''
    seed: Optional[int] = None
    started: str = ''
    finished: str = ''
    output_paths: List[str] = field(default_factory=list)
    digests: Dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str, name: str = MANIFEST) -> str:
        path = os.path.join(out_dir, name)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=json_utils.get_json_type)
        return path

    @classmethod
    def read(cls, out_dir: str, name: str = MANIFEST) -> 'RunManifest':
        with open(os.path.join(out_dir, name), 'r', encoding='utf-8') as f:
            return cls(**json_utils.decode(f.read()))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def _start(command: str, out_dir: str, config_path: str = '', seed: Optional[int] = None) -> RunManifest:
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    return RunManifest(command=command, config_path=config_path, seed=seed, started=_now())


def _finish(manifest: RunManifest, out_dir: str, name: str = MANIFEST) -> RunManifest:
    manifest.finished = _now()
    manifest.output_paths = sorted(manifest.output_paths)
    manifest.write(out_dir, name)
    return manifest


def tree_digest(root: str, exclude: Sequence[str] = (MANIFEST,)) -> str:
    """SHA-256 over relative paths and contents of every file under root."""
    digest = hashlib.sha256()
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            if rel in exclude:
                continue
            digest.update(rel.replace(os.sep, '/').encode('utf-8'))
            with open(path, 'rb') as f:
                digest.update(f.read())
    return digest.hexdigest()


def parse_flags(text: str) -> Dict[str, bool]:
    """Comma-separated names of the enabled components, e.g. "apl,pgml"; "none" disables all."""
    names = [t.strip().lower() for t in text.split(',') if t.strip()]
    if names == ['none']:
        names = []
    unknown = sorted(set(names) - set(FLAG_NAMES))
    if unknown:
        raise ConfigError(f'unknown flags {unknown}, use a subset of {",".join(FLAG_NAMES)} or "none"')
    return {k: k in names for k in FLAG_NAMES}


def resolve_config(args) -> TrainConfig:
    """Loads --config and applies the command line overrides."""
    if not args.config:
        raise ConfigError('--config is required')
    config = load_config(args.config)
    changes = {}
    if getattr(args, 'seed', None) is not None:
        changes['seed'] = args.seed
    if getattr(args, 'data_root', None):
        changes['data_root'] = args.data_root
    if getattr(args, 'shots', None) is not None:
        changes['shots'] = args.shots
    if getattr(args, 'threshold', None) is not None:
        changes['threshold'] = args.threshold
    if getattr(args, 'flags', None) is not None:
        changes.update(parse_flags(args.flags))
    return config.replace(**changes) if changes else config


def _data_root(config: TrainConfig) -> str:
    root = config.resolved_data_root()
    if not root:
        raise ConfigError('no dataset root: set data_root in the config, pass --data-root or set SLVM_DATA_ROOT')
    return root


def load_split(config: TrainConfig):
    names = read_classes(_data_root(config))
    return partition_folds(range(len(names)), config.fold_sizes, config.fold_index, class_names=names)


def load_data(config: TrainConfig):
    split = load_split(config)
    return load_dataset(_data_root(config)), split


def _registry(args, config, split, out_dir, manifest):
    if getattr(args, 'registry', None):
        registry = read_registry(args.registry)
    else:
        registry = build_registry(split, config.shots, n_episodes=config.n_eval_episodes, seed=config.seed)
        path = os.path.join(out_dir, 'registry.txt')
        write_registry(registry, path)
        manifest.output_paths.append(path)
    manifest.digests['registry'] = registry_digest(registry)
    return registry


def _out_dir(args, command, config: Optional[TrainConfig] = None) -> str:
    if args.out:
        return args.out
    suffix = f'-{config.digest[:8]}' if config is not None else ''
    return os.path.join('output', f'{command}{suffix}')


def _load_model(args, config: TrainConfig) -> SLVM:
    provider = build_provider(config)
    if not args.checkpoint:
        if config.apl:
            raise ConfigError('--checkpoint is required unless prompt learning is disabled')
        return build_model(config, provider=provider, training=False)
    decoder = MaskDecoder(seed=config.decoder_seed)
    return SLVM.load(args.checkpoint, provider, decoder, training=False, **config.flags)


def fixture_manifest_location(out_dir: str) -> Tuple[str, str]:
    """Directory and file name of the fixture run manifest, <out>.manifest.json beside the dataset."""
    out_dir = os.path.normpath(os.path.abspath(out_dir))
    return os.path.dirname(out_dir), os.path.basename(out_dir) + '.' + MANIFEST


def cmd_make_fixture(args) -> RunManifest:
    out_dir = args.out or os.path.join('output', 'fixture')
    manifest = _start('make-fixture', out_dir, seed=args.seed)
    make_fixture(out_dir, seed=args.seed, n_images=args.n_images, size=args.size)
    manifest.output_paths.append(out_dir)
    manifest.digests['dataset'] = tree_digest(out_dir)
    print(f'fixture with {args.n_images} images written to {out_dir}')
    parent, name = fixture_manifest_location(out_dir)
    return _finish(manifest, parent, name)


def prepare_cache(dataset_root: str, out_dir: str, encoder_seed: int = 0) -> Tuple[List[str], str]:
    """Writes <id>.high.bin and <id>.mid.bin for every image; valid files of the same encoder are kept.

    Returns:
        the paths (re)written and the encoder fingerprint.
    """
    dataset = load_dataset(dataset_root)
    encoder = build_surrogate_encoder(seed=encoder_seed)
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    previous = ''
    manifest_path = os.path.join(out_dir, CACHE_MANIFEST)
    if os.path.isfile(manifest_path):
        with open(manifest_path, 'r', encoding='utf-8') as f:
            previous = json.load(f).get('digests', {}).get('encoder', '')
    same_encoder = previous == encoder.reference_fingerprint
    written = []
    for item in dataset:
        prefix = os.path.join(out_dir, item.id)
        paths = cache_paths(prefix)
        if same_encoder and all(is_valid_tensor_file(p, expected_ndim=3) for p in paths):
            continue
        save_cached_embedding(encode(encoder, item.image, source_id=item.id), prefix)
        written.extend(paths)
    return written, encoder.reference_fingerprint


def cmd_prepare_cache(args) -> RunManifest:
    if args.config:
        config = load_config(args.config)
        dataset_root = args.data_root or config.resolved_data_root()
        encoder_seed = config.encoder_seed
        out_dir = args.out or config.cache_dir
    else:
        dataset_root = args.data_root or os.environ.get(DATA_ROOT_ENV, '')
        encoder_seed = 0
        out_dir = args.out
    if args.seed is not None:
        encoder_seed = args.seed
    if not dataset_root:
        raise ConfigError('no dataset root: pass --data-root or --config, or set SLVM_DATA_ROOT')
    if not out_dir:
        raise ConfigError('--out is required')
    manifest = _start('prepare-cache', out_dir, config_path=args.config, seed=encoder_seed)
    written, fingerprint = prepare_cache(dataset_root, out_dir, encoder_seed)
    manifest.output_paths = written
    manifest.digests['encoder'] = fingerprint
    print(f'{len(written)} cache files written to {out_dir}')
    return _finish(manifest, out_dir)


def cmd_train(args) -> RunManifest:
    config = resolve_config(args)
    dataset, split = load_data(config)
    out_dir = _out_dir(args, 'train', config)
    manifest = _start('train', out_dir, config_path=args.config, seed=config.seed)
    config_path = os.path.join(out_dir, 'config.cfg')
    with open(config_path, 'w', encoding='utf-8') as f:
        f.write(config.to_text())
    model, log = train(config, dataset, split)
    log_path = os.path.join(out_dir, 'training_log.csv')
    log.write_csv(log_path)
    checkpoint = os.path.join(out_dir, 'checkpoint')
    model.save(checkpoint, extra={'config': config.to_text(), 'config_digest': config.digest})
    manifest.output_paths += [config_path, log_path, checkpoint]
    manifest.digests.update({'config': config.digest, 'params': model.params_fingerprint(),
                             **model.frozen_fingerprints()})
    print(f'{len(log)} training steps, checkpoint saved to {checkpoint}')
    return _finish(manifest, out_dir)


def cmd_eval(args) -> RunManifest:
    config = resolve_config(args)
    dataset, split = load_data(config)
    out_dir = _out_dir(args, 'eval', config)
    manifest = _start('eval', out_dir, config_path=args.config, seed=config.seed)
    model = _load_model(args, config)
    registry = _registry(args, config, split, out_dir, manifest)
    report = evaluate(model, dataset, split, registry, config.shots, threshold=config.threshold,
                      image_size=eval_image_size(config, model), config_digest=config.digest,
                      ablation_flags=config.flags, verbose=True)
    report_path = write_report(report, os.path.join(out_dir, 'report.txt'))
    manifest.output_paths.append(report_path)
    manifest.digests.update({'config': config.digest, 'params': model.params_fingerprint()})
    print(format_report(report), end='')
    return _finish(manifest, out_dir)


def cmd_ablate(args) -> RunManifest:
    config = resolve_config(args)
    if args.all_folds and args.registry:
        raise ConfigError('--registry holds a single fold and cannot be combined with --all-folds')
    dataset, split = load_data(config)
    out_dir = _out_dir(args, 'ablate', config)
    manifest = _start('ablate', out_dir, config_path=args.config, seed=config.seed)
    if args.all_folds:
        reports = run_ablation_folds(config, dataset, split)
        manifest.digests['registry'] = reports[0].episode_registry_digest
    else:
        registry = _registry(args, config, split, out_dir, manifest)
        reports = run_ablation(config, dataset, split, registry=registry)
    for report in reports:
        name = 'report_' + ''.join(str(int(flag)) for flag in report.flags) + '.txt'
        manifest.output_paths.append(write_report(report, os.path.join(out_dir, name)))
    table = format_table(reports, n_folds=split.n_folds if args.all_folds else None)
    table_path = os.path.join(out_dir, 'table.txt')
    with open(table_path, 'w', encoding='utf-8') as f:
        f.write(table)
    manifest.output_paths.append(table_path)
    manifest.digests['config'] = config.digest
    print(table, end='')
    return _finish(manifest, out_dir)


def cmd_crossval(args) -> RunManifest:
    config = resolve_config(args)
    dataset, split = load_data(config)
    out_dir = _out_dir(args, 'crossval', config)
    manifest = _start('crossval', out_dir, config_path=args.config, seed=config.seed)
    combined, reports = run_folds(config, dataset, split)
    for fold, report in enumerate(reports):
        manifest.output_paths.append(write_report(report, os.path.join(out_dir, f'report_fold{fold}.txt')))
    manifest.output_paths.append(write_report(combined, os.path.join(out_dir, 'report.txt')))
    manifest.digests.update({'config': config.digest, 'registry': combined.episode_registry_digest})
    print(format_table([combined], n_folds=split.n_folds), end='')
    return _finish(manifest, out_dir)


def cmd_export_masks(args) -> RunManifest:
    config = resolve_config(args)
    dataset, split = load_data(config)
    out_dir = _out_dir(args, 'masks', config)
    manifest = _start('export-masks', out_dir, config_path=args.config, seed=config.seed)
    model = _load_model(args, config)
    registry = _registry(args, config, split, out_dir, manifest)
    paths = export_masks(model, dataset, split, registry, out_dir, config.shots, threshold=config.threshold,
                         image_size=eval_image_size(config, model))
    manifest.output_paths += paths
    manifest.digests.update({'config': config.digest, 'params': model.params_fingerprint()})
    print(f'{len(paths)} masks written to {out_dir}')
    return _finish(manifest, out_dir)


def cmd_make_registry(args) -> RunManifest:
    config = resolve_config(args)
    split = load_split(config)
    out_dir = _out_dir(args, 'registry', config)
    manifest = _start('make-registry', out_dir, config_path=args.config, seed=config.seed)
    registry = _registry(args, config, split, out_dir, manifest)
    print(f'{len(registry)} episodes over classes {sorted(split.test_classes)}')
    return _finish(manifest, out_dir)


COMMANDS = {
    'make-fixture': cmd_make_fixture,
    'prepare-cache': cmd_prepare_cache,
    'make-registry': cmd_make_registry,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'crossval': cmd_crossval,
    'export-masks': cmd_export_masks,
}


def get_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='slvm', description='Few-shot segmentation with a frozen encoder and decoder')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add(name, help_text, config=True, shots=False, registry=False, checkpoint=False, flags=False,
            threshold=False):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('-o', '--out', type=str, default='', help='output directory')
        sub.add_argument('-s', '--seed', type=int, default=None, help='overrides the config seed')
        if config:
            sub.add_argument('-c', '--config', type=str, default='', help='path to flat key = value config file')
            sub.add_argument('--data-root', type=str, default='',
                             help='dataset root; falls back to the config, then to SLVM_DATA_ROOT')
        if shots:
            sub.add_argument('--shots', type=int, default=None, help='overrides the config shots')
        if registry:
            sub.add_argument('--registry', type=str, default='',
                             help='episode registry file; built from the config seed when omitted')
        if checkpoint:
            sub.add_argument('--checkpoint', type=str, default='', help='checkpoint directory saved by train')
        if flags:
            sub.add_argument('--flags', type=str, default=None,
                             help='enabled components among apl,pgml,fsla, or "none"')
        if threshold:
            sub.add_argument('--threshold', type=float, default=None, help='probability threshold, default 0.5')
        return sub

    fixture = add('make-fixture', 'write the synthetic shapes dataset', config=False)
    fixture.set_defaults(seed=0)
    fixture.add_argument('--n-images', type=int, default=60, help='number of images')
    fixture.add_argument('--size', type=int, default=64, help='image side length')
    add('prepare-cache', 'precompute encoder features of every image; --seed is the encoder seed')
    add('make-registry', 'write the evaluation episode registry', shots=True)
    add('train', 'train the prompt learner')
    add('eval', 'evaluate a checkpoint on the held-out fold', shots=True, registry=True, checkpoint=True,
        flags=True, threshold=True)
    ablate = add('ablate', 'train and evaluate every component ablation', shots=True, registry=True, threshold=True)
    ablate.add_argument('--all-folds', action='store_true',
                        help='train and evaluate every ablation on each held-out fold and report the mean')
    add('crossval', 'train and evaluate on every fold', shots=True, threshold=True)
    add('export-masks', 'write predicted masks as PNG files', shots=True, registry=True, checkpoint=True,
        flags=True, threshold=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = get_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except SLVMError as e:
        print(f'{type(e).__name__}: {e}', file=sys.stderr)
        return e.exit_code
    return 0
