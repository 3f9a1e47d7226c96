"""Neuron ablations at one MLP layer and their accuracy tables"""
import numpy as np
from collections import OrderedDict
from typing import Dict, List, NamedTuple, Optional, Sequence
from ..hooks import HookSpec, ZeroNeurons, FlipNeurons, KeepOnlyNeurons, MLP_COMBINED_ACT
from ..models import predict
from ..tasks import PromptInstance, breakdown_by_task
from ..utils import DomainError, ContractError


__all__ = [
    'ABLATION_MODES', 'ablation_hooks', 'ablate', 'AblationResult', 'ablation_table', 'error_by_magnitude',
    'chance_rate'
]


ABLATION_MODES = ('zero', 'flip', 'only_keep')
_ACTIONS = {'zero': ZeroNeurons, 'flip': FlipNeurons, 'only_keep': KeepOnlyNeurons}


def ablation_hooks(layer: int, neurons: Sequence[int], mode: str, whole_sequence: bool=False) -> List[HookSpec]:
    """
    zero: set the neurons' combined activations to 0; flip: negate them; only_keep: zero every other neuron.
    Acts on the final position unless whole_sequence.
    """
    if mode not in _ACTIONS:
        raise DomainError("unknown ablation mode " + repr(mode) + "; expected one of " + str(ABLATION_MODES))
    positions = None if whole_sequence else [-1]
    return [HookSpec(layer, MLP_COMBINED_ACT, _ACTIONS[mode](list(neurons)), positions)]


class AblationResult(NamedTuple):
    mode: str
    predictions: List[int]
    accuracy: float
    by_task: Dict


def ablate(
        model, dataset: Sequence[PromptInstance], neurons: Sequence[int], mode: str, layer: int,
        whole_sequence: bool=False
) -> AblationResult:
    """Accuracy of the hooked model overall and per task (with offset/sum bands)"""
    if len(dataset) == 0:
        raise ContractError("empty dataset")
    hooks = ablation_hooks(layer, neurons, mode, whole_sequence)
    predictions = predict(model, dataset, hooks_fn=lambda batch: hooks)
    accuracy = float(np.mean([pred == p.gold_id for pred, p in zip(predictions, dataset)]))
    return AblationResult(mode, predictions, accuracy, breakdown_by_task(predictions, dataset))


def chance_rate(prompts: Sequence[PromptInstance]) -> float:
    """1 / number of distinct answers"""
    return 1.0 / len({p.gold_label for p in prompts})


def _bands(prompts: Sequence[PromptInstance]) -> List:
    """(label, prompts) rows: offsets 1..p and p+1..2p for cyclic tasks, one row otherwise"""
    spec = prompts[0].spec
    if not spec.is_cyclic:
        return [("a in [" + str(spec.concept_start) + ".." + str(spec.concept_start + len(spec.concept_names) - 1)
                 + "], b in [" + str(spec.offset_range[0]) + ".." + str(spec.offset_range[1]) + "]", list(prompts))]
    p = spec.period
    low = [q for q in prompts if 1 <= q.offset <= p]
    high = [q for q in prompts if p < q.offset <= 2 * p]
    return [(label, band) for label, band in
            (("1->" + str(p), low), (str(p + 1) + "->" + str(2 * p), high)) if band]


def ablation_table(
        model, dataset: Sequence[PromptInstance], neurons: Sequence[int], layer: int, whole_sequence: bool=False
) -> List[Dict]:
    """
    Rows of (task, number range, clean, only_keep, zero, flip, chance) accuracies, one per task band, plus the
    task's template
    """
    predictions = OrderedDict([('clean', predict(model, dataset))])
    for mode in ('only_keep', 'zero', 'flip'):
        predictions[mode] = ablate(model, dataset, neurons, mode, layer, whole_sequence).predictions
    index = {id(p): i for i, p in enumerate(dataset)}

    tasks = OrderedDict()
    for prompt in dataset:
        tasks.setdefault((prompt.task, prompt.spec.template_variant), []).append(prompt)
    rows = []
    for (task, _), prompts in tasks.items():
        chance = chance_rate(prompts)
        for label, band in _bands(prompts):
            row = OrderedDict([
                ('task', task), ('template', " ".join(band[0].spec.template)), ('number_range', label),
                ('n', len(band))
            ])
            for mode, preds in predictions.items():
                row[mode] = float(np.mean([preds[index[id(p)]] == p.gold_id for p in band]))
            row['chance'] = chance
            rows.append(row)
    return rows


def error_by_magnitude(
        predictions: Sequence[int], dataset: Sequence[PromptInstance], bucket: int=10,
        label: Optional[str]=None
) -> List[Dict]:
    """Errors bucketed by pre-modulo sum (bucket-wide bins)"""
    buckets = OrderedDict()
    for pred, prompt in sorted(zip(predictions, dataset), key=lambda x: x[1].pre_modulo_sum):
        low = (prompt.pre_modulo_sum // bucket) * bucket
        cell = buckets.setdefault(low, [0, 0])
        cell[0] += int(pred != prompt.gold_id)
        cell[1] += 1
    rows = []
    for low, (errors, total) in buckets.items():
        row = OrderedDict([('sum_low', low), ('sum_high', low + bucket - 1), ('errors', errors), ('total', total),
                           ('error_rate', errors / total)])
        if label is not None:
            row['run'] = label
        rows.append(row)
    return rows
