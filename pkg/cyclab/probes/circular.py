"""Circular probes: closed-form sin/cos readout of the concept index from PCA-reduced states"""
import math
import torch
from torch import Tensor
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union
from ..interventions import Site, collect_states
from ..numerics import pca, least_squares
from ..utils import ProbeTrainingError, DimensionError
from .fourier import fourier_targets, split_indices, r2, stack_activations


__all__ = ['CircularProbe', 'train_circular_probe', 'circular_probe_for_task', 'DEFAULT_PCA_DIM']


DEFAULT_PCA_DIM = 5


@dataclass
class CircularProbe:
    """
    Bias-free readout (ŝ, ĉ) = (z w_sin, z w_cos) with z = (h - mean) @ pca_components
    """
    period: int
    layer: int
    position: Union[int, str]
    pca_components: Tensor
    mean: Tensor
    w_sin: Tensor
    w_cos: Tensor
    r2_sin: Optional[float] = None
    r2_cos: Optional[float] = None
    scatter: List[Dict] = field(default_factory=list)

    @property
    def d_pca(self) -> int: return self.pca_components.shape[1]

    def reduce(self, h: Tensor) -> Tensor:
        return (h.to(torch.float64) - self.mean) @ self.pca_components

    def readout(self, h: Tensor) -> Tensor:
        """(..., 2) points on the probe plane"""
        z = self.reduce(h)
        return torch.stack([z @ self.w_sin, z @ self.w_cos], dim=-1)


def train_circular_probe(
        activations, period: int, d_pca: int=DEFAULT_PCA_DIM, layer: int=0, position: Union[int, str]='final',
        test_fraction: float=0.2, seed: int=0
) -> CircularProbe:
    """
    PCA to d_pca dimensions, fitted on the training split only, then least squares (no bias) against
    sin/cos(2πk/T) of the concept index k.
    The scatter holds the mean probe-plane point of every concept index.

    :param activations: {concept index: states} or (states, indices)
    """
    states, labels = stack_activations(activations)
    if len(set(labels.tolist())) < 2:
        raise ProbeTrainingError("circular probes need at least 2 distinct concepts")
    if d_pca > min(states.shape[0], states.shape[1]):
        raise DimensionError("cannot reduce " + str(tuple(states.shape)) + " states to " + str(d_pca) + " components")

    train_idx, test_idx = split_indices(len(labels), test_fraction, seed)
    if len(test_idx) == 0:
        test_idx = train_idx
    fit = states[train_idx].to(torch.float64)
    components, _ = pca(fit, d_pca)
    mean = fit.mean(dim=0)
    z = (states.to(torch.float64) - mean) @ components
    sin_t, cos_t = fourier_targets(labels, period)

    weights = least_squares(z[train_idx], torch.stack([sin_t, cos_t], dim=1)[train_idx])
    probe = CircularProbe(period, layer, position, components, mean, weights[:, 0], weights[:, 1])
    predicted = z[test_idx] @ weights
    probe.r2_sin = r2(predicted[:, 0], sin_t[test_idx])
    probe.r2_cos = r2(predicted[:, 1], cos_t[test_idx])

    points = z @ weights
    for k in sorted(set(labels.tolist())):
        mask = labels == k
        x, y = points[mask].mean(dim=0).tolist()
        probe.scatter.append(OrderedDict([
            ('concept_index', k), ('sin', x), ('cos', y),
            ('theta', math.atan2(x, y) % (2 * math.pi)), ('count', int(mask.sum()))
        ]))
    return probe


def circular_probe_for_task(
        model, dataset, layer: int, hook_point: str='resid_post_mlp', position: Union[int, str]='concept',
        d_pca: int=DEFAULT_PCA_DIM, seed: int=0
) -> CircularProbe:
    """Probe a task's concept representation, labelling every prompt by its concept index"""
    spec = dataset[0].spec
    if spec.period is None:
        raise ProbeTrainingError("task " + spec.name + " has no cycle length")
    states = collect_states(model, dataset, Site(layer, hook_point, position))
    labels = [prompt.concept_index for prompt in dataset]
    return train_circular_probe((states, labels), spec.period, d_pca, layer, position, seed=seed)
