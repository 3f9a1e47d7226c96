"""Accuracy broken down by offset range and pre-modulo sum"""
import numpy as np
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union
from ..utils import ContractError
from .datasets import PromptInstance


__all__ = [
    'AccuracyBreakdown', 'accuracy_breakdown', 'breakdown_by_task', 'band_width', 'is_in_cycle', 'ADDITION_BAND_WIDTH'
]


ADDITION_BAND_WIDTH = 100


def band_width(prompt: PromptInstance) -> int:
    """p of the prompt: its cycle length, or a fixed band width for addition"""
    return prompt.period if prompt.period is not None else ADDITION_BAND_WIDTH


def is_in_cycle(prompt: PromptInstance) -> bool:
    """offset <= p for cyclic tasks, pre-modulo sum <= p otherwise"""
    if prompt.spec.is_cyclic:
        return prompt.offset <= prompt.period
    return prompt.pre_modulo_sum <= band_width(prompt)


def _rate(hits: List[bool]) -> Optional[float]:
    return float(np.mean(hits)) if hits else None


@dataclass
class AccuracyBreakdown:
    """
    Accuracy of one task. Empty cells are None.

    by_offset: offsets in [1, p] and (p, 2p]
    by_sum: pre-modulo sums <= p and > p
    separate / cumulative: sums in [1, p], (p, 2p], (2p, 3p] and <= p, <= 2p, <= 3p
    per_sum: sum -> (accuracy, count)
    """
    task: str
    n: int
    overall: float
    by_offset: Dict[str, Optional[float]] = field(default_factory=OrderedDict)
    by_sum: Dict[str, Optional[float]] = field(default_factory=OrderedDict)
    separate: Dict[str, Optional[float]] = field(default_factory=OrderedDict)
    cumulative: Dict[str, Optional[float]] = field(default_factory=OrderedDict)
    per_sum: Dict[int, tuple] = field(default_factory=OrderedDict)

    def row(self) -> Dict[str, Optional[float]]:
        """One flat row (task, n, overall, then every band) for tabular export"""
        out = OrderedDict([('task', self.task), ('n', self.n), ('overall', self.overall)])
        for prefix, cells in (('offset', self.by_offset), ('sum', self.by_sum),
                              ('separate', self.separate), ('cumulative', self.cumulative)):
            for key, value in cells.items():
                out[prefix + " " + key] = value
        return out

    def per_sum_rows(self) -> List[Dict[str, Union[int, float]]]:
        return [
            OrderedDict([('task', self.task), ('pre_modulo_sum', s), ('accuracy', acc), ('count', count)])
            for s, (acc, count) in self.per_sum.items()
        ]


def accuracy_breakdown(predictions: Sequence[Union[int, str]], dataset: Sequence[PromptInstance]) -> AccuracyBreakdown:
    """
    :param predictions: one predicted token id (or token string) per prompt
    :param dataset: prompts of a single task
    """
    if len(predictions) != len(dataset):
        raise ContractError(
            "need one prediction per prompt, got " + str(len(predictions)) + " for " + str(len(dataset))
        )
    if len(dataset) == 0:
        raise ContractError("empty dataset")
    tasks = {prompt.task for prompt in dataset}
    if len(tasks) != 1:
        raise ContractError("accuracy_breakdown expects a single task, got " + str(sorted(tasks)))

    hits = [
        (pred == prompt.gold_label) if isinstance(pred, str) else (int(pred) == prompt.gold_id)
        for pred, prompt in zip(predictions, dataset)
    ]
    offset_low, offset_high, sum_low, sum_high = [], [], [], []
    separate = [[], [], []]
    per_sum = {}
    for hit, prompt in zip(hits, dataset):
        p, s = band_width(prompt), prompt.pre_modulo_sum
        if 1 <= prompt.offset <= p: offset_low.append(hit)
        elif p < prompt.offset <= 2 * p: offset_high.append(hit)
        (sum_low if s <= p else sum_high).append(hit)
        for band in range(3):
            if band * p < s <= (band + 1) * p or (band == 0 and s <= p):
                separate[band].append(hit)
        per_sum.setdefault(s, []).append(hit)

    report = AccuracyBreakdown(task=tasks.pop(), n=len(hits), overall=float(np.mean(hits)))
    report.by_offset['1..p'] = _rate(offset_low)
    report.by_offset['p..2p'] = _rate(offset_high)
    report.by_sum['<=p'] = _rate(sum_low)
    report.by_sum['>p'] = _rate(sum_high)
    names = ('[1,p]', '(p,2p]', '(2p,3p]')
    for band in range(3):
        report.separate[names[band]] = _rate(separate[band])
        report.cumulative['<=' + ('' if band == 0 else str(band + 1)) + 'p'] = _rate(sum(separate[:band + 1], []))
    for s in sorted(per_sum):
        report.per_sum[s] = (float(np.mean(per_sum[s])), len(per_sum[s]))
    return report


def breakdown_by_task(
        predictions: Sequence[Union[int, str]], dataset: Sequence[PromptInstance]
) -> 'OrderedDict[str, AccuracyBreakdown]':
    """accuracy_breakdown per task of a mixed dataset, in order of first appearance"""
    groups = OrderedDict()
    for pred, prompt in zip(predictions, dataset):
        preds, prompts = groups.setdefault(prompt.task, ([], []))
        preds.append(pred)
        prompts.append(prompt)
    return OrderedDict((task, accuracy_breakdown(preds, prompts)) for task, (preds, prompts) in groups.items())
