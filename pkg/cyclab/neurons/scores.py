"""Write/read scores of gated-MLP neurons against DAS subspaces, neuron selection and period assignment"""
import warnings
import numpy as np
import torch
from torch import Tensor
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union
from ..interventions import Subspace
from ..numerics import qr_orthonormalize
from ..probes import FourierProbePair, probe_subspace_overlap
from ..utils import UndefinedScoreError, DimensionError


__all__ = [
    'write_score', 'write_scores', 'NeuronRecord', 'NeuronSet', 'NeuronSelection', 'select_neurons',
    'score_histogram', 'assign_period', 'assign_periods', 'period_plane', 'read_scores', 'split_mixed_classify',
    'split_mixed_counts', 'neuron_records', 'DEFAULT_TAU', 'UNASSIGNED_ALIGNMENT', 'SPLIT_RATIO',
    'CONSTANT_SCORE_STD'
]


DEFAULT_TAU = 0.4
UNASSIGNED_ALIGNMENT = 0.2
SPLIT_RATIO = 1.5
# score vectors with a smaller standard deviation count as constant
CONSTANT_SCORE_STD = 1e-12


def _basis(subspace: Union[Subspace, Tensor]) -> Tensor:
    return (subspace.basis if isinstance(subspace, Subspace) else subspace).to(torch.float64)


def write_score(d_i: Tensor, subspace: Union[Subspace, Tensor]) -> float:
    """ω = ||R^T d_i|| / ||d_i||, the fraction of d_i's norm inside span(R)"""
    basis = _basis(subspace)
    d_i = d_i.detach().to(torch.float64)
    if d_i.shape[-1] != basis.shape[0]:
        raise DimensionError("vector of width " + str(d_i.shape[-1]) + " vs subspace in dimension " + str(basis.shape[0]))
    norm = torch.linalg.vector_norm(d_i)
    if norm == 0:
        raise UndefinedScoreError("write score of a zero vector is undefined")
    return float((torch.linalg.vector_norm(basis.t() @ d_i) / norm).clamp(0.0, 1.0))


def write_scores(vectors: Tensor, subspace: Union[Subspace, Tensor]) -> Tensor:
    """
    Row-wise write scores of (n, d) vectors; zero rows raise UndefinedScoreError

    :return: (n,) float64
    """
    basis = _basis(subspace)
    vectors = vectors.detach().to(torch.float64)
    norms = torch.linalg.vector_norm(vectors, dim=1)
    if bool((norms == 0).any()):
        raise UndefinedScoreError("write score of a zero vector is undefined (rows "
                                  + str(torch.nonzero(norms == 0).flatten().tolist()) + ")")
    return (torch.linalg.vector_norm(vectors @ basis, dim=1) / norms).clamp(0.0, 1.0)


@dataclass
class NeuronSet:
    """Members are exactly the neurons whose write score exceeds tau"""
    layer: int
    tau: float
    members: List[int]
    task: str = ''

    def __len__(self) -> int: return len(self.members)

    def __contains__(self, index: int) -> bool: return index in self.members

    def __iter__(self): return iter(self.members)


@dataclass
class NeuronRecord:
    layer: int
    index: int
    gate: Tensor
    up: Tensor
    down: Tensor
    write_scores: Dict[str, float] = field(default_factory=OrderedDict)
    assigned_period: Optional[int] = None
    period_alignment: float = 0.0
    split: Dict[str, bool] = field(default_factory=OrderedDict)

    def to_dict(self) -> Dict:
        return OrderedDict([
            ('layer', self.layer), ('index', self.index), ('write_scores', dict(self.write_scores)),
            ('assigned_period', self.assigned_period), ('period_alignment', self.period_alignment),
            ('split', dict(self.split))
        ])


class NeuronSelection(NamedTuple):
    """
    Per-task sets, every neuron's score per task, and Pearson correlations between tasks' score vectors
    (None where either vector is constant)
    """
    sets: Dict[str, NeuronSet]
    scores: Dict[str, np.ndarray]
    correlations: Dict[Tuple[str, str], Optional[float]]

    def differences(self, reference: str) -> Dict[str, List[int]]:
        """Per task, members missing from the reference task's set"""
        ref = set(self.sets[reference].members)
        return OrderedDict(
            (task, sorted(set(s.members) - ref)) for task, s in self.sets.items() if task != reference
        )


def _correlation(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    if a.std() < CONSTANT_SCORE_STD or b.std() < CONSTANT_SCORE_STD:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def select_neurons(
        model, layer: int, subspaces: Mapping[str, Subspace], tau: float=DEFAULT_TAU
) -> NeuronSelection:
    """
    Score every down-projection row d_i of the layer's MLP against each task's output subspace and keep
    neurons with ω > tau
    """
    down = model.mlp_weights(layer).down
    sets, scores = OrderedDict(), OrderedDict()
    for task, subspace in subspaces.items():
        omega = write_scores(down, subspace).numpy()
        scores[task] = omega
        sets[task] = NeuronSet(layer, tau, np.nonzero(omega > tau)[0].tolist(), task)
    correlations = OrderedDict()
    tasks = list(scores)
    for i, a in enumerate(tasks):
        for b in tasks[i + 1:]:
            correlations[(a, b)] = _correlation(scores[a], scores[b])
    return NeuronSelection(sets, scores, correlations)


def score_histogram(scores: np.ndarray, bins: int=20) -> List[Dict]:
    """Histogram rows over [0, 1]"""
    counts, edges = np.histogram(scores, bins=bins, range=(0.0, 1.0))
    return [
        OrderedDict([('bin_low', float(edges[i])), ('bin_high', float(edges[i + 1])), ('count', int(counts[i]))])
        for i in range(bins)
    ]


def period_plane(probe: FourierProbePair) -> Tensor:
    """Orthonormal basis (d, 2) of span{w_sin, w_cos} (fewer columns if they are parallel)"""
    return qr_orthonormalize(torch.stack([probe.w_sin, probe.w_cos], dim=1).to(torch.float64))


def assign_period(
        d_i: Tensor, probes: Sequence[FourierProbePair], min_alignment: float=UNASSIGNED_ALIGNMENT
) -> Tuple[Optional[int], float]:
    """
    The period whose probe plane best contains d_i; ties go to the smaller period

    :return: (period or None below min_alignment, alignment)
    """
    best_period, best = None, -1.0
    for probe in sorted(probes, key=lambda p: p.period):
        alignment = probe_subspace_overlap(d_i, period_plane(probe))
        if alignment > best:
            best_period, best = probe.period, alignment
    return (best_period if best >= min_alignment else None), max(best, 0.0)


def assign_periods(
        model, layer: int, neurons: Sequence[int], probes: Sequence[FourierProbePair],
        min_alignment: float=UNASSIGNED_ALIGNMENT
) -> Dict:
    """
    assign_period for each neuron, with the baseline: mean best alignment over every neuron of the layer

    :return: 'assignments' rows and 'baseline'
    """
    down = model.mlp_weights(layer).down.detach()
    planes = [(probe.period, period_plane(probe)) for probe in sorted(probes, key=lambda p: p.period)]
    rows, best_all = [], []
    for i in range(down.shape[0]):
        if torch.linalg.vector_norm(down[i]) == 0:
            continue
        alignments = [probe_subspace_overlap(down[i], plane) for _, plane in planes]
        j = int(np.argmax(alignments))
        best_all.append(alignments[j])
        if i in neurons:
            rows.append(OrderedDict([
                ('neuron', i), ('period', planes[j][0] if alignments[j] >= min_alignment else None),
                ('alignment', float(alignments[j]))
            ]))
    return {'assignments': rows, 'baseline': float(np.mean(best_all)) if best_all else 0.0}


def read_scores(
        model, layer: int, neuron: int, concept_subspace: Subspace, offset_subspace: Subspace
) -> Dict[str, float]:
    """Overlap of the neuron's gate and up rows with the input-concept and offset subspaces"""
    weights = model.mlp_weights(layer)
    return OrderedDict([
        ('gate_concept', write_score(weights.gate[neuron], concept_subspace)),
        ('gate_offset', write_score(weights.gate[neuron], offset_subspace)),
        ('up_concept', write_score(weights.up[neuron], concept_subspace)),
        ('up_offset', write_score(weights.up[neuron], offset_subspace)),
    ])


def _one_sided(a: float, b: float, ratio: float) -> bool:
    return max(a, b) > ratio * min(a, b)


def split_mixed_classify(
        model, layer: int, neuron: int, concept_subspace: Subspace, offset_subspace: Subspace,
        ratio: float=SPLIT_RATIO
) -> str:
    """'split' iff both the gate and the up row read mostly from one summand, else 'mixed'"""
    scores = read_scores(model, layer, neuron, concept_subspace, offset_subspace)
    gate = _one_sided(scores['gate_concept'], scores['gate_offset'], ratio)
    up = _one_sided(scores['up_concept'], scores['up_offset'], ratio)
    return 'split' if gate and up else 'mixed'


def split_mixed_counts(
        model, layer: int, neurons: Sequence[int], input_subspaces: Mapping[str, Tuple[Subspace, Subspace]],
        ratio: float=SPLIT_RATIO
) -> Dict:
    """
    :param input_subspaces: task -> (input-concept subspace, offset subspace)
    :return: 'counts' per task and one read-score row per (task, neuron)
    """
    counts, rows = OrderedDict(), []
    for task, (concept, offset) in input_subspaces.items():
        n_split = 0
        for neuron in neurons:
            scores = read_scores(model, layer, neuron, concept, offset)
            label = split_mixed_classify(model, layer, neuron, concept, offset, ratio)
            n_split += label == 'split'
            row = OrderedDict([('task', task), ('neuron', neuron), ('label', label)])
            row.update(scores)
            rows.append(row)
        counts[task] = {'split': n_split, 'mixed': len(neurons) - n_split}
    return {'counts': counts, 'rows': rows}


def neuron_records(
        model, layer: int, neurons: Sequence[int], output_subspaces: Mapping[str, Subspace],
        probes: Sequence[FourierProbePair]=(), input_subspaces: Mapping[str, Tuple[Subspace, Subspace]]=None
) -> List[NeuronRecord]:
    weights = model.mlp_weights(layer)
    records = []
    for i in neurons:
        record = NeuronRecord(layer, i, weights.gate[i].detach(), weights.up[i].detach(), weights.down[i].detach())
        for task, subspace in output_subspaces.items():
            record.write_scores[task] = write_score(record.down, subspace)
        if probes:
            record.assigned_period, record.period_alignment = assign_period(record.down, probes)
        for task, (concept, offset) in (input_subspaces or {}).items():
            record.split[task] = split_mixed_classify(model, layer, i, concept, offset) == 'split'
        records.append(record)
    if not records:
        warnings.warn("no neurons to describe at layer " + str(layer))
    return records
