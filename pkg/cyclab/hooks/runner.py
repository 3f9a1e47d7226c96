"""Hooked forward passes: cache activations and apply interventions"""
import torch
from torch import Tensor
from collections import OrderedDict
from typing import Collection, List, Optional, Sequence, Tuple
from ..utils import HookError
from .hooks import SiteHooks
from .actions import HookSpec, resolve_positions
from .cache import ActivationCache
from .points import HookedModule, normalize_hook_point


__all__ = ['run_with_hooks', 'forward_with_cache']


def _group_specs(hooks: Sequence[HookSpec], seq_len: int) -> 'OrderedDict[Tuple[int, str], List]':
    groups = OrderedDict()
    for spec in hooks:
        positions = resolve_positions(spec.positions, seq_len)
        groups.setdefault((spec.layer, spec.hook_point), []).append((spec.action, positions))

    for (layer, name), entries in groups.items():
        replaced = set()
        for action, positions in entries:
            if not action.replaces_residual: continue
            clash = replaced.intersection(positions)
            if clash:
                raise HookError(
                    "conflicting replacements at layer " + str(layer) + ", " + name
                    + ", positions " + str(sorted(clash))
                )
            replaced.update(positions)
    return groups


def run_with_hooks(
        model: HookedModule, tokens: Tensor, hooks: Sequence[HookSpec]=(),
        cache_points: Optional[Collection[str]]=None, detach_cache: bool=True
) -> Tuple[Tensor, ActivationCache]:
    """
    Forward pass with interventions applied at their sites before downstream computation.
    Interventions at a site run in list order; the cache records each site after its interventions.

    :param model: a HookedModule
    :param tokens: (batch, seq) token ids
    :param hooks: interventions
    :param cache_points: hook point names to record (None: all; empty: none)
    :param detach_cache: store detached activations
    :return: logits (batch, seq, vocab) and the activation cache
    """
    if tokens.dim() == 1:
        tokens = tokens.unsqueeze(0)
    groups = _group_specs(hooks, tokens.shape[1])
    points = model.hook_points()
    cache = ActivationCache()

    wanted = None if cache_points is None else {normalize_hook_point(name) for name in cache_points}
    with SiteHooks(points) as attached:
        for site, entries in groups.items():
            attached.attach(site, entries)
        for site in points:
            if wanted is None or site[1] in wanted:
                attached.attach(site, (), cache, detach_cache)
        logits = model(tokens)
    return logits, cache


@torch.no_grad()
def forward_with_cache(model: HookedModule, tokens: Tensor) -> Tuple[Tensor, ActivationCache]:
    """Plain forward pass recording every hook point"""
    return run_with_hooks(model, tokens, [])
