"""Activation ribbons, down-projection clustering and plane diagrams of selected neurons"""
import math
import numpy as np
import torch
from torch import Tensor
from collections import OrderedDict
from scipy.cluster.hierarchy import linkage, fcluster
from scipy.spatial.distance import squareform
from typing import Dict, List, NamedTuple, Optional, Sequence, Union
from ..hooks import MLP_COMBINED_ACT, NEURON_POINTS, normalize_hook_point
from ..interventions import Site, collect_states
from ..probes import FourierProbePair
from ..tasks import PromptInstance
from ..utils import ContractError, HookError


__all__ = [
    'neuron_activations', 'ActivationRibbons', 'mean_activation_by_sum', 'CosineClusters', 'cluster_by_cosine',
    'abs_cosine_distance', 'downproj_plane_export', 'DEFAULT_CLIP'
]


DEFAULT_CLIP = 2.0


def neuron_activations(
        model, dataset: Sequence[PromptInstance], layer: int, hook_point: str=MLP_COMBINED_ACT,
        position: Union[int, str]='final'
) -> Tensor:
    """(n_prompts, d_mlp) gate, up or combined activations at one position"""
    hook_point = normalize_hook_point(hook_point)
    if hook_point not in NEURON_POINTS:
        raise HookError(hook_point + " is not a neuron activation point")
    return collect_states(model, dataset, Site(layer, hook_point, position))


class ActivationRibbons(NamedTuple):
    """matrix[i, j]: mean activation of neurons[i] over prompts whose pre-modulo sum is sums[j]"""
    neurons: List[int]
    sums: List[int]
    matrix: np.ndarray

    def clipped(self, clip: float=DEFAULT_CLIP) -> np.ndarray:
        return np.clip(self.matrix, -clip, clip)

    def rows(self, clip: Optional[float]=None) -> List[Dict]:
        matrix = self.matrix if clip is None else self.clipped(clip)
        return [
            OrderedDict([('neuron', n), ('sum', s), ('activation', float(matrix[i, j]))])
            for i, n in enumerate(self.neurons) for j, s in enumerate(self.sums)
        ]


def mean_activation_by_sum(
        model, dataset: Sequence[PromptInstance], neurons: Sequence[int], layer: int,
        hook_point: str=MLP_COMBINED_ACT, clip: Optional[float]=None
) -> ActivationRibbons:
    """Per neuron, its final-position activation averaged over prompts sharing a pre-modulo sum"""
    neurons = list(neurons)
    activations = neuron_activations(model, dataset, layer, hook_point)[:, neurons].to(torch.float64)
    sums = np.array([p.pre_modulo_sum for p in dataset])
    unique = sorted(set(sums.tolist()))
    matrix = np.stack([activations[torch.from_numpy(sums == s)].mean(dim=0).numpy() for s in unique], axis=1) \
        if neurons else np.zeros((0, len(unique)))
    if clip is not None:
        matrix = np.clip(matrix, -clip, clip)
    return ActivationRibbons(neurons, unique, matrix)


def abs_cosine_distance(vectors: Tensor) -> np.ndarray:
    """1 - |cos| between rows; sign-flipped rows sit at distance 0"""
    v = vectors.detach().to(torch.float64)
    norms = torch.linalg.vector_norm(v, dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ContractError("cannot measure the direction of a zero vector")
    unit = v / norms
    distance = (1.0 - (unit @ unit.t()).abs()).clamp(min=0.0).numpy()
    np.fill_diagonal(distance, 0.0)
    return (distance + distance.T) / 2


class CosineClusters(NamedTuple):
    neurons: List[int]
    labels: List[int]
    linkage: np.ndarray
    distance: np.ndarray

    def clusters(self) -> Dict[int, List[int]]:
        groups = OrderedDict()
        for neuron, label in zip(self.neurons, self.labels):
            groups.setdefault(label, []).append(neuron)
        return groups


def cluster_by_cosine(
        vectors: Tensor, neurons: Optional[Sequence[int]]=None, cut: float=0.95, n_clusters: Optional[int]=None
) -> CosineClusters:
    """
    Average-linkage hierarchical clustering on 1 - |cosine| of the rows of `vectors` (down-projection rows)

    :param cut: distance at which the dendrogram is cut into flat clusters
    :param n_clusters: cut into this many clusters instead
    """
    neurons = list(range(vectors.shape[0])) if neurons is None else list(neurons)
    if len(neurons) != vectors.shape[0]:
        raise ContractError("need one neuron index per vector")
    distance = abs_cosine_distance(vectors)
    if len(neurons) == 1:
        return CosineClusters(neurons, [1], np.zeros((0, 4)), distance)
    tree = linkage(squareform(distance, checks=False), method='average')
    if n_clusters is not None:
        labels = fcluster(tree, t=n_clusters, criterion='maxclust')
    else:
        labels = fcluster(tree, t=cut, criterion='distance')
    return CosineClusters(neurons, labels.tolist(), tree, distance)


def downproj_plane_export(
        model, layer: int, neurons: Sequence[int], probes: Sequence[FourierProbePair], prompt: PromptInstance,
        periods: Optional[Sequence[int]]=None
) -> Dict[int, Dict]:
    """
    Per period, every neuron's d_i projected onto the unit probe directions (sin, cos) and scaled by its
    activation on the prompt, with the vector sum and the ground-truth angle 2π (n mod T) / T.
    Angles follow the probe readout convention atan2(sin, cos).
    """
    neurons = list(neurons)
    down = model.mlp_weights(layer).down.detach().to(torch.float64)
    activation = neuron_activations(model, [prompt], layer)[0].to(torch.float64)
    by_period = {probe.period: probe for probe in probes}
    periods = sorted(by_period) if periods is None else sorted(periods)

    export = OrderedDict()
    for period in periods:
        if period not in by_period:
            raise ContractError("no probe for period " + str(period))
        probe = by_period[period]
        w_sin = probe.w_sin.to(torch.float64) / torch.linalg.vector_norm(probe.w_sin.to(torch.float64))
        w_cos = probe.w_cos.to(torch.float64) / torch.linalg.vector_norm(probe.w_cos.to(torch.float64))
        arrows, total = [], np.zeros(2)
        for i in neurons:
            a = float(activation[i])
            point = np.array([a * float(down[i] @ w_sin), a * float(down[i] @ w_cos)])
            total += point
            arrows.append(OrderedDict([('neuron', i), ('activation', a), ('sin', point[0]), ('cos', point[1])]))
        truth = 2 * math.pi * (prompt.pre_modulo_sum % period) / period
        angle = math.atan2(total[0], total[1]) % (2 * math.pi)
        error = abs((angle - truth + math.pi) % (2 * math.pi) - math.pi)
        export[period] = OrderedDict([
            ('arrows', arrows), ('sum', OrderedDict([('sin', float(total[0])), ('cos', float(total[1]))])),
            ('angle', angle), ('ground_truth_angle', truth), ('angular_error', error)
        ])
    return export
