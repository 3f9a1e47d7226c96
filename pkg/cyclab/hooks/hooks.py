"""Forward hooks bound to the model's named sites"""
from torch import Tensor
from torch.nn import Module
from typing import Dict, List, Optional, Sequence, Tuple
from ..utils import HookError
from .cache import ActivationCache
from .points import HookPoint


__all__ = ['SiteHook', 'SiteHooks']


class SiteHook:
    """
    Forward hook on one HookPoint. Runs the site's (action, positions) entries in order on the point's output,
    then records the result into `cache` if one is given.
    """
    def __init__(
            self, point: HookPoint, entries: Sequence[Tuple]=(), cache: Optional[ActivationCache]=None,
            detach: bool=True
    ):
        self.site = (point.layer, point.name)
        self._entries = list(entries)
        self._cache, self._detach = cache, detach
        self.hook = point.register_forward_hook(self._hook_fn)

    def _hook_fn(self, module: Module, inp, output: Tensor) -> Tensor:
        for action, positions in self._entries:
            output = action.apply(output, positions)
        if self._cache is not None:
            self._cache[self.site] = output.detach() if self._detach else output
        return output

    def remove(self): self.hook.remove()


class SiteHooks:
    """Hooks attached for one forward pass; all of them are removed on exit, even when the pass raises"""
    def __init__(self, points: Dict[Tuple[int, str], HookPoint]):
        self._points = points
        self.hooks: List[SiteHook] = []

    def attach(self, site: Tuple[int, str], entries: Sequence[Tuple]=(), cache: Optional[ActivationCache]=None,
               detach: bool=True) -> SiteHook:
        if site not in self._points:
            raise HookError("no hook point " + site[1] + " at layer " + str(site[0]))
        hook = SiteHook(self._points[site], entries, cache, detach)
        self.hooks.append(hook)
        return hook

    def remove(self):
        for hook in self.hooks: hook.remove()
        self.hooks = []

    def __enter__(self): return self

    def __exit__(self, *args): self.remove()

    def __len__(self) -> int: return len(self.hooks)
