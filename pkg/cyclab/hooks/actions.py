"""
Interventions applied at a hook site. Every action receives the full site activation (batch, seq, dim)
and the resolved positions, and returns a new tensor; the input is never modified in place.
"""
import torch
from torch import Tensor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union
from ..utils import HookError, ContractError
from ..numerics import subspace_interchange, gram_deviation
from .points import normalize_hook_point


__all__ = [
    'HookAction', 'ReplaceFull', 'ReplaceSubspace', 'AddVector', 'SetNeurons', 'ZeroNeurons',
    'FlipNeurons', 'KeepOnlyNeurons', 'HookSpec', 'resolve_positions', 'ORTHONORMAL_TOLERANCE'
]


# largest Gram deviation accepted for a subspace basis, wherever one is built, loaded or verified
ORTHONORMAL_TOLERANCE = 1e-4


def resolve_positions(positions: Optional[Sequence[int]], seq_len: int) -> List[int]:
    """None means every position; negative positions count from the end"""
    if positions is None:
        return list(range(seq_len))
    resolved = []
    for position in positions:
        if not -seq_len <= position < seq_len:
            raise HookError("position " + str(position) + " out of range for sequence length " + str(seq_len))
        resolved.append(position % seq_len)
    return resolved


def _broadcast_value(value: Tensor, n_batch: int, n_pos: int, dim: int) -> Tensor:
    """Bring a (dim,), (batch, dim) or (batch, n_pos, dim) value to (batch, n_pos, dim)"""
    if value.dim() == 1:
        value = value.view(1, 1, -1)
    elif value.dim() == 2:
        value = value.unsqueeze(1)
    if value.shape[-1] != dim:
        raise HookError("value of width " + str(value.shape[-1]) + " does not match site width " + str(dim))
    return value.expand(n_batch, n_pos, dim)


class HookAction:
    """Base class. `replaces_residual` marks actions that overwrite a site's state."""
    replaces_residual: bool = False

    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        raise NotImplementedError


class ReplaceFull(HookAction):
    replaces_residual = True

    def __init__(self, value: Tensor):
        self.value = value

    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        out = site.clone()
        out[:, positions, :] = _broadcast_value(self.value.to(site.dtype), site.shape[0], len(positions), site.shape[-1])
        return out


class ReplaceSubspace(HookAction):
    """
    Interchange the component of the site inside span(basis) with that of `value`:

    h <- h + R (R^T v - R^T h)
    """
    replaces_residual = True

    def __init__(self, value: Tensor, basis: Tensor, check: bool=True):
        if check and gram_deviation(basis) > ORTHONORMAL_TOLERANCE:
            raise ContractError("subspace basis is not orthonormal")
        self.value, self.basis = value, basis

    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        out = site.clone()
        h_o = site[:, positions, :]
        h_c = _broadcast_value(self.value, site.shape[0], len(positions), site.shape[-1])
        out[:, positions, :] = subspace_interchange(h_o, h_c, self.basis)
        return out


class AddVector(HookAction):
    def __init__(self, vector: Tensor, scale: float=1.0):
        self.vector, self.scale = vector, scale

    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        out = site.clone()
        delta = _broadcast_value(self.vector.to(site.dtype), site.shape[0], len(positions), site.shape[-1])
        out[:, positions, :] = site[:, positions, :] + self.scale * delta
        return out


class _NeuronAction(HookAction):
    def __init__(self, indices: Sequence[int]):
        self.indices = torch.as_tensor(list(indices), dtype=torch.long)

    def _check(self, site: Tensor):
        if self.indices.numel() > 0 and (self.indices.min() < 0 or self.indices.max() >= site.shape[-1]):
            raise HookError("neuron index out of range for " + str(site.shape[-1]) + " neurons")

    def _select(self, site: Tensor, positions: List[int]) -> Tensor:
        """Boolean mask (seq, dim) of the entries this action touches"""
        mask = torch.zeros(site.shape[1], site.shape[2], dtype=torch.bool, device=site.device)
        if self.indices.numel() > 0:
            rows = torch.as_tensor(positions, dtype=torch.long)
            mask[rows.unsqueeze(1), self.indices.unsqueeze(0)] = True
        return mask


class SetNeurons(_NeuronAction):
    def __init__(self, indices: Sequence[int], values: Union[Tensor, float]):
        super().__init__(indices)
        self.values = values

    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        self._check(site)
        out = site.clone()
        values = torch.as_tensor(self.values, dtype=site.dtype)
        if values.dim() == 0:
            values = values.expand(len(self.indices))
        for position in positions:
            out[:, position, self.indices] = values.expand(site.shape[0], len(self.indices))
        return out


class ZeroNeurons(_NeuronAction):
    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        self._check(site)
        return site.masked_fill(self._select(site, positions).unsqueeze(0), 0.0)


class FlipNeurons(_NeuronAction):
    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        self._check(site)
        return torch.where(self._select(site, positions).unsqueeze(0), -site, site)


class KeepOnlyNeurons(_NeuronAction):
    """Zero every neuron outside `indices` at the given positions"""
    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        self._check(site)
        keep = self._select(site, positions)
        rows = torch.zeros(site.shape[1], 1, dtype=torch.bool, device=site.device)
        rows[positions] = True
        return site.masked_fill((rows & ~keep).unsqueeze(0), 0.0)


@dataclass
class HookSpec:
    """
    One intervention: `action` applied at (layer, hook_point) on `positions` (None: every position).
    A list of specs composes left to right.
    """
    layer: int
    hook_point: str
    action: HookAction
    positions: Optional[List[int]] = field(default_factory=lambda: [-1])

    def __post_init__(self):
        self.hook_point = normalize_hook_point(self.hook_point)
        if self.positions is not None:
            self.positions = list(self.positions)
