"""Plain-text rendering of MetricsReport: one "key: value" line per field, keys in a fixed order.

Map fields are flattened as <field>.<key> lines sorted by key, IoUs are written with 4 decimals and undefined
IoUs as "undefined".
"""
import os
from typing import Dict, Optional, Sequence

from pyslvm.errors import DataError
from pyslvm.utils.evaluation_utils import FLAG_NAMES, MetricsReport

UNDEFINED = 'undefined'


def _iou(value: Optional[float]) -> str:
    return UNDEFINED if value is None else f'{value:.4f}'


def _parse_iou(value: str) -> Optional[float]:
    return None if value == UNDEFINED else float(value)


def format_report(report: MetricsReport) -> str:
    lines = [f'per_class_iou.{c}: {_iou(v)}' for c, v in sorted(report.per_class_iou.items())]
    lines += [f'fold_miou.{f}: {_iou(v)}' for f, v in sorted(report.fold_miou.items())]
    lines.append(f'mean_miou: {_iou(report.mean_miou)}')
    lines.append(f'shots: {report.shots}')
    lines += [f'ablation_flags.{k}: {str(bool(report.ablation_flags[k])).lower()}' for k in FLAG_NAMES]
    lines.append(f'config_digest: {report.config_digest}')
    lines.append(f'episode_registry_digest: {report.episode_registry_digest}')
    return '\n'.join(lines) + '\n'


def parse_report(text: str, source: str = '<string>') -> MetricsReport:
    per_class: Dict[int, Optional[float]] = {}
    fold_miou: Dict[int, Optional[float]] = {}
    flags: Dict[str, bool] = {}
    fields = {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(': ')
        if not sep:
            key, value = line.rstrip(':'), ''
        try:
            if key.startswith('per_class_iou.'):
                per_class[int(key.split('.', 1)[1])] = _parse_iou(value)
            elif key.startswith('fold_miou.'):
                fold_miou[int(key.split('.', 1)[1])] = _parse_iou(value)
            elif key.startswith('ablation_flags.'):
                if value not in ('true', 'false'):
                    raise ValueError(f'bad flag value "{value}"')
                flags[key.split('.', 1)[1]] = value == 'true'
            elif key in ('mean_miou', 'shots', 'config_digest', 'episode_registry_digest'):
                fields[key] = value
            else:
                raise ValueError(f'unknown key "{key}"')
        except ValueError as e:
            raise DataError(f'{source}:{n}: {e}') from e
    missing = [k for k in ('mean_miou', 'shots') if k not in fields] + [k for k in FLAG_NAMES if k not in flags]
    if missing:
        raise DataError(f'{source}: missing report keys {missing}')
    try:
        return MetricsReport(per_class_iou=per_class,
                             fold_miou=fold_miou,
                             mean_miou=_parse_iou(fields['mean_miou']),
                             shots=int(fields['shots']),
                             ablation_flags=flags,
                             config_digest=fields.get('config_digest', ''),
                             episode_registry_digest=fields.get('episode_registry_digest', ''))
    except ValueError as e:
        raise DataError(f'{source}: {e}') from e


def write_report(report: MetricsReport, path: str) -> str:
    dirname = os.path.dirname(path)
    try:
        if dirname and not os.path.isdir(dirname):
            os.makedirs(dirname)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(format_report(report))
    except OSError as e:
        raise OSError(f'cannot write report {path}: {e}') from e
    return path


def read_report(path: str) -> MetricsReport:
    if not os.path.isfile(path):
        raise DataError(f'missing report {path}')
    with open(path, 'r', encoding='utf-8') as f:
        return parse_report(f.read(), source=path)


def _percent(value: Optional[float]) -> str:
    return '-' if value is None else f'{100 * value:.2f}'


def format_table(reports: Sequence[MetricsReport], n_folds: Optional[int] = None) -> str:
    """One row per report: ablation flags, per-fold mIoU and mean, as percentages with 2 decimals."""
    if n_folds is None:
        n_folds = max((max(r.fold_miou) + 1 for r in reports if r.fold_miou), default=0)
    header = ['APL', 'PGML', 'FSLA'] + [f'Fold-{f}' for f in range(n_folds)] + ['Mean']
    rows = [header]
    for report in reports:
        rows.append(['x' if flag else '' for flag in report.flags]
                    + [_percent(report.fold_miou.get(f)) for f in range(n_folds)]
                    + [_percent(report.mean_miou)])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return '\n'.join('  '.join(cell.rjust(w) for cell, w in zip(row, widths)).rstrip() for row in rows) + '\n'
