from torch import Tensor
from typing import Dict, Iterator, Optional, Tuple
from ..utils import HookError
from .points import normalize_hook_point


__all__ = ['ActivationCache']


class ActivationCache:
    """
    Activations recorded during a forward pass, keyed by (layer, hook_point); each entry is (batch, seq, dim).
    """
    def __init__(self):
        self._store: Dict[Tuple[int, str], Tensor] = {}

    @staticmethod
    def _key(key: Tuple[int, str]) -> Tuple[int, str]:
        layer, name = key
        return layer, normalize_hook_point(name)

    def __setitem__(self, key: Tuple[int, str], value: Tensor): self._store[self._key(key)] = value

    def __getitem__(self, key: Tuple[int, str]) -> Tensor:
        key = self._key(key)
        if key not in self._store:
            raise HookError("activation " + key[1] + " at layer " + str(key[0]) + " was not cached")
        return self._store[key]

    def __contains__(self, key: Tuple[int, str]) -> bool:
        try:
            return self._key(key) in self._store
        except HookError:
            return False

    def __iter__(self) -> Iterator[Tuple[int, str]]: return iter(self._store)

    def __len__(self) -> int: return len(self._store)

    def get(self, layer: int, hook_point: str, position: Optional[int]=None) -> Tensor:
        """
        :param position: sequence position (negative counts from the end); None returns every position
        :return: (batch, dim) at one position, else (batch, seq, dim)
        """
        activations = self[(layer, hook_point)]
        return activations if position is None else activations[:, position, :]
