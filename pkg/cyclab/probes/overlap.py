import warnings
import torch
from torch import Tensor
from collections import OrderedDict
from typing import Dict, List, Mapping, Sequence, Union
from ..interventions import Subspace
from ..utils import UndefinedScoreError, DimensionError
from .fourier import FourierProbePair


__all__ = [
    'probe_subspace_overlap', 'period_overlaps', 'select_steering_periods', 'overlap_report',
    'DEFAULT_PERIOD_THRESHOLD'
]


DEFAULT_PERIOD_THRESHOLD = 0.2


def probe_subspace_overlap(w: Tensor, subspace: Union[Subspace, Tensor]) -> float:
    """ω = ||S S^T w|| / ||w||, in [0, 1]"""
    basis = (subspace.basis if isinstance(subspace, Subspace) else subspace).to(torch.float64)
    w = w.detach().to(torch.float64)
    if w.shape[0] != basis.shape[0]:
        raise DimensionError("direction of width " + str(w.shape[0]) + " vs subspace in dimension " + str(basis.shape[0]))
    norm = torch.linalg.vector_norm(w)
    if norm == 0:
        raise UndefinedScoreError("overlap of a zero direction is undefined")
    omega = torch.linalg.vector_norm(basis @ (basis.t() @ w)) / norm
    return float(omega.clamp(0.0, 1.0))


def period_overlaps(probes: Sequence[FourierProbePair], subspace: Subspace) -> 'OrderedDict[int, float]':
    """Per period, the average ω of its sine and cosine probes"""
    return OrderedDict(
        (probe.period, 0.5 * (probe_subspace_overlap(probe.w_sin, subspace)
                              + probe_subspace_overlap(probe.w_cos, subspace)))
        for probe in sorted(probes, key=lambda p: p.period)
    )


def select_steering_periods(overlaps: Mapping[int, float], threshold: float=DEFAULT_PERIOD_THRESHOLD) -> List[int]:
    """
    Periods whose averaged ω exceeds threshold, ascending. A non-positive threshold keeps every period.
    """
    selected = sorted(int(period) for period, omega in overlaps.items() if threshold <= 0 or omega > threshold)
    if not selected:
        warnings.warn("no period exceeds the overlap threshold " + str(threshold))
    return selected


def overlap_report(
        probes: Sequence[FourierProbePair], subspaces: Mapping[str, Subspace]
) -> List[Dict]:
    """One row per (task, period): sine, cosine and averaged ω against that task's output subspace"""
    rows = []
    for task, subspace in subspaces.items():
        for probe in sorted(probes, key=lambda p: p.period):
            omega_sin = probe_subspace_overlap(probe.w_sin, subspace)
            omega_cos = probe_subspace_overlap(probe.w_cos, subspace)
            rows.append(OrderedDict([
                ('task', task), ('period', probe.period), ('omega_sin', omega_sin), ('omega_cos', omega_cos),
                ('omega', 0.5 * (omega_sin + omega_cos))
            ]))
    return rows
