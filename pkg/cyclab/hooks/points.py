"""Named activation sites of a model"""
from torch import nn, Tensor
from typing import Dict, Tuple
from ..utils import HookError


__all__ = [
    'HookPoint', 'HookedModule', 'RESID_PRE', 'RESID_POST_ATTN', 'RESID_POST_MLP', 'MLP_IN', 'MLP_OUT',
    'MLP_GATE_ACT', 'MLP_UP_ACT', 'MLP_COMBINED_ACT', 'RESIDUAL_POINTS', 'NEURON_POINTS', 'HOOK_POINTS',
    'normalize_hook_point'
]


RESID_PRE = 'resid_pre'
RESID_POST_ATTN = 'resid_post_attn'
MLP_IN = 'mlp_in'
MLP_GATE_ACT = 'mlp_gate_act'
MLP_UP_ACT = 'mlp_up_act'
MLP_COMBINED_ACT = 'mlp_combined_act'
MLP_OUT = 'mlp_out'
RESID_POST_MLP = 'resid_post_mlp'

RESIDUAL_POINTS = (RESID_PRE, RESID_POST_ATTN, MLP_IN, MLP_OUT, RESID_POST_MLP)
NEURON_POINTS = (MLP_GATE_ACT, MLP_UP_ACT, MLP_COMBINED_ACT)
HOOK_POINTS = (RESID_PRE, RESID_POST_ATTN, MLP_IN, MLP_GATE_ACT, MLP_UP_ACT, MLP_COMBINED_ACT, MLP_OUT, RESID_POST_MLP)

_ALIASES = {
    'post_attn': RESID_POST_ATTN, 'post_mlp': RESID_POST_MLP, 'pre': RESID_PRE,
    'gate': MLP_GATE_ACT, 'up': MLP_UP_ACT, 'combined': MLP_COMBINED_ACT
}


def normalize_hook_point(name: str) -> str:
    """Accept CLI short names (post_attn, post_mlp, ...) as well as full hook point names"""
    name = _ALIASES.get(name, name)
    if name not in HOOK_POINTS:
        raise HookError("unknown hook point " + repr(name))
    return name


class HookPoint(nn.Identity):
    """Identity layer marking an activation site; hooks attach here"""
    def __init__(self, layer: int, name: str):
        super().__init__()
        self.layer, self.name = layer, name

    def extra_repr(self) -> str: return "layer=" + str(self.layer) + ", name=" + self.name


class HookedModule(nn.Module):
    """
    Base for models exposing HookPoint sites. Subclasses create HookPoint children anywhere in their tree.
    """
    def hook_points(self) -> Dict[Tuple[int, str], HookPoint]:
        return {
            (module.layer, module.name): module
            for module in self.modules() if isinstance(module, HookPoint)
        }

    def hook_point(self, layer: int, name: str) -> HookPoint:
        points = self.hook_points()
        key = (layer, normalize_hook_point(name))
        if key not in points:
            raise HookError("no hook point " + key[1] + " at layer " + str(layer))
        return points[key]

    def forward(self, tokens: Tensor) -> Tensor:
        raise NotImplementedError
