"""
Ablation harness: train DL, DL+FL and DL+FL+CH on the same split and seeds and
compare their lobe dice in one table.
"""

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence

from .config import AblationMode, RunConfig
from .dataset import Sample, split_dataset
from .errors import EmptyDataset
from .metrics import DiceReport, evaluate_cases, format_table
from .trainer import prepare_sample, segment, train
from .workers import Job, run_workers

logger = logging.getLogger(__name__)

ALL_MODES = tuple(AblationMode)


@dataclass
class ArmResult:
    """Outcome of one ablation arm."""
    mode: AblationMode
    report: DiceReport
    per_case: Dict[str, DiceReport]
    provenance: Dict[str, Any]
    external_report: Optional[DiceReport] = None
    external_per_case: Dict[str, DiceReport] = field(default_factory=dict)


def evaluate_model(net, cases: Sequence[Sample], cfg: RunConfig):
    """Full-extent predictions for raw cases, scored against their labels."""
    predictions = [(s.id, segment(net, s.volume, cfg.hull_crop, cfg.preprocess), s.labels) for s in cases]
    return evaluate_cases(predictions)


def run_arm(
    mode: AblationMode,
    base: RunConfig,
    train_set: Sequence[Sample],
    test_set: Sequence[Sample],
    external_set: Sequence[Sample] = (),
) -> ArmResult:
    """Train and evaluate one configuration."""
    cfg = base.for_mode(mode)
    cfg.validate()
    logger.info("arm started", extra={
        'event': 'arm', 'mode': mode.value, 'lambda': cfg.train.loss.lam, 'hull_crop': cfg.hull_crop,
        'train': [[s.id, s.sha256] for s in train_set],
    })
    prepared = [prepare_sample(s, cfg.hull_crop, cfg.preprocess) for s in train_set]
    result = train(prepared, cfg.train, cfg.model)

    report, per_case = evaluate_model(result.net, test_set, cfg)
    external_report, external_per_case = None, {}
    if external_set:
        external_report, external_per_case = evaluate_model(result.net, external_set, cfg)

    provenance = {
        'mode': mode.value,
        'lambda': cfg.train.loss.lam,
        'hull_crop': cfg.hull_crop,
        'seed': cfg.train.seed,
        'train_ids': [s.id for s in train_set],
        'test_ids': [s.id for s in test_set],
        'orderings': result.orderings,
        'final_loss': result.history[-1].mean_loss,
    }
    logger.info("arm finished", extra={'event': 'arm-done', 'mode': mode.value, 'average': report.average})
    return ArmResult(mode, report, per_case, provenance, external_report, external_per_case)


@dataclass
class AblationReport:
    """Per-arm results in ablation order."""
    arms: 'OrderedDict[str, ArmResult]'

    @property
    def rows(self) -> 'OrderedDict[str, DiceReport]':
        return OrderedDict((name, arm.report) for name, arm in self.arms.items())

    @property
    def external_rows(self) -> 'OrderedDict[str, DiceReport]':
        return OrderedDict(
            (name, arm.external_report) for name, arm in self.arms.items() if arm.external_report is not None
        )

    def table(self) -> str:
        text = format_table(self.rows)
        if self.external_rows:
            text += '\n\nExternal test set\n' + format_table(self.external_rows)
        return text

    def to_dict(self) -> Dict[str, Any]:
        doc = {}
        for name, arm in self.arms.items():
            entry = {
                'report': arm.report.to_dict(),
                'per_case': {k: v.to_dict() for k, v in arm.per_case.items()},
                'provenance': arm.provenance,
            }
            if arm.external_report is not None:
                entry['external'] = {
                    'report': arm.external_report.to_dict(),
                    'per_case': {k: v.to_dict() for k, v in arm.external_per_case.items()},
                }
            doc[name] = entry
        return {'arms': doc, 'table': self.table()}


def ablate(
    samples: Sequence[Sample],
    base: RunConfig,
    modes: Sequence[AblationMode] = ALL_MODES,
    external: Sequence[Sample] = (),
    threads: int = 1,
    progress_callback: Optional[Callable[[int, int, str], None]] = None,
    cancel_event: Optional[threading.Event] = None,
) -> AblationReport:
    """
    Split raw HU samples with the run seed, then run every arm on that split.

    All arms share the split, the network seed, the sample-order seed and the
    augmentation seed, so they see identical sample orderings.

    Raises:
        EmptyDataset: fewer than two samples (no test set)
    """
    samples = list(samples)
    if len(samples) < 2:
        raise EmptyDataset(f"ablation needs at least 2 samples, got {len(samples)}")
    train_set, test_set = split_dataset(samples, base.train_fraction, base.train.seed)
    logger.info("ablation split", extra={
        'event': 'split', 'train': [s.id for s in train_set], 'test': [s.id for s in test_set],
        'external': len(external),
    })
    jobs = [
        Job(run_arm, (AblationMode.parse(mode), base, train_set, test_set, tuple(external)),
            name=AblationMode.parse(mode).value)
        for mode in modes
    ]
    results = run_workers(jobs, threads=threads, progress_callback=progress_callback, cancel_event=cancel_event)
    return AblationReport(OrderedDict((r.mode.value, r) for r in results))
