"""
Dice evaluation of label masks: per lobe, averaged, and as a report table.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .constants import LOBE_CODES, LOBE_NAMES
from .errors import ShapeMismatch
from .volume_io import LabelMask

MaskLike = Union[LabelMask, np.ndarray]


def _labels(mask: MaskLike) -> np.ndarray:
    return np.asarray(mask.data if isinstance(mask, LabelMask) else mask)


def _check_pair(pred: MaskLike, truth: MaskLike) -> Tuple[np.ndarray, np.ndarray]:
    p, g = _labels(pred), _labels(truth)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction dims {p.shape} differ from ground truth dims {g.shape}")
    return p, g


def class_counts(pred: MaskLike, truth: MaskLike, c: int) -> Tuple[int, int, int]:
    """(|P_c|, |G_c|, |P_c & G_c|)"""
    p, g = _check_pair(pred, truth)
    pc, gc = p == c, g == c
    return int(pc.sum()), int(gc.sum()), int(np.logical_and(pc, gc).sum())


def dice_per_class(pred: MaskLike, truth: MaskLike, c: int) -> float:
    """
    2 |P_c & G_c| / (|P_c| + |G_c|); 1.0 when the class is absent from both.

    Raises:
        ShapeMismatch: masks have different dims
    """
    n_pred, n_truth, overlap = class_counts(pred, truth, c)
    if n_pred + n_truth == 0:
        return 1.0
    return 2.0 * overlap / (n_pred + n_truth)


@dataclass
class DiceReport:
    """
    Per-lobe dice and their unweighted mean.

    Attributes:
        per_class: lobe name -> dice, in RU, RM, RL, LU, LL order
        average: mean of the five per-lobe values
        voxel_counts: lobe name -> {'pred', 'truth', 'overlap'}
    """
    per_class: Dict[str, float]
    average: float
    voxel_counts: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'per_class': dict(self.per_class),
            'average': self.average,
            'counts': {k: dict(v) for k, v in self.voxel_counts.items()},
        }

    def row(self) -> List[float]:
        return [self.per_class[name] for name in LOBE_NAMES] + [self.average]


def dice_average(pred: MaskLike, truth: MaskLike) -> DiceReport:
    """
    Dice of each lobe class (background excluded) and their mean.

    Raises:
        ShapeMismatch: masks have different dims
    """
    _check_pair(pred, truth)
    per_class, counts = OrderedDict(), OrderedDict()
    for name, c in LOBE_CODES.items():
        n_pred, n_truth, overlap = class_counts(pred, truth, c)
        per_class[name] = 1.0 if n_pred + n_truth == 0 else 2.0 * overlap / (n_pred + n_truth)
        counts[name] = {'pred': n_pred, 'truth': n_truth, 'overlap': overlap}
    average = float(np.mean(list(per_class.values())))
    return DiceReport(per_class, average, counts)


def aggregate_reports(reports: Sequence[DiceReport]) -> DiceReport:
    """Mean per-lobe dice over cases; voxel counts are summed."""
    if not reports:
        raise ValueError("no reports to aggregate")
    per_class = OrderedDict(
        (name, float(np.mean([r.per_class[name] for r in reports]))) for name in LOBE_NAMES
    )
    counts = OrderedDict()
    for name in LOBE_NAMES:
        counts[name] = {
            key: int(sum(r.voxel_counts.get(name, {}).get(key, 0) for r in reports))
            for key in ('pred', 'truth', 'overlap')
        }
    return DiceReport(per_class, float(np.mean(list(per_class.values()))), counts)


def evaluate_cases(cases: Iterable[Tuple[str, MaskLike, MaskLike]]) -> Tuple[DiceReport, Dict[str, DiceReport]]:
    """
    Dice over a test set.

    Args:
        cases: (case_id, prediction, ground truth) triples

    Returns:
        (aggregate report, {case_id: per-case report})
    """
    per_case = OrderedDict((case_id, dice_average(p, g)) for case_id, p, g in cases)
    return aggregate_reports(list(per_case.values())), per_case


def format_table(rows: Mapping[str, DiceReport], percent: bool = True) -> str:
    """
    Aligned text table with one row per report and columns RU RM RL LU LL AVG.
    """
    scale = 100.0 if percent else 1.0
    label_width = max([len('Method')] + [len(label) for label in rows])
    header = ['Method'.ljust(label_width)] + [f"{name:>7}" for name in LOBE_NAMES + ('AVG',)]
    lines = [' '.join(header)]
    for label, report in rows.items():
        cells = [f"{value * scale:7.2f}" for value in report.row()]
        lines.append(' '.join([label.ljust(label_width)] + cells))
    return '\n'.join(lines)
