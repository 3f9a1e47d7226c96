import hashlib
import json
import random
import numpy as np
import torch
from torch import Tensor
from typing import Any, Dict
from .errors import NumericError


__all__ = [
    'compute_num_batch', 'set_seed', 'is_valid', 'check_finite', 'canonical_json', 'config_hash', 'save_json',
    'load_json'
]


def compute_num_batch(data_size: int, batch_size: int) -> int:
    """
    Compute number of batches per epoch

    :param data_size: number of datapoints
    :param batch_size: number of datapoints per batch
    :return:
    """
    return int(np.ceil(data_size / float(batch_size)))


def set_seed(seed: int):
    """
    Seed every random number generator used by the lab (python, numpy, torch)

    :param seed:
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def is_valid(tensor: Tensor) -> bool:
    """
    Check if a tensor is valid (not inf + not nan)

    :param tensor:
    :return: whether a tensor is valid
    """
    if not tensor.is_floating_point(): return True
    return bool(torch.isfinite(tensor).all())


def check_finite(tensor: Tensor, name: str="tensor") -> Tensor:
    """
    Return the tensor unchanged if every scalar is finite, otherwise raise NumericError

    :param tensor:
    :param name: name used in the error message
    :return: the same tensor
    """
    if not is_valid(tensor):
        raise NumericError(name + " contains NaN or Inf")
    return tensor


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def config_hash(obj: Any) -> str:
    """Stable sha256 of the canonical JSON encoding of obj (first 16 hex digits)"""
    return hashlib.sha256(canonical_json(obj).encode('utf-8')).hexdigest()[:16]


def save_json(obj: Any, path: str):
    with open(path, 'w') as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write('\n')


def load_json(path: str) -> Dict[str, Any]:
    with open(path, 'r') as f:
        return json.load(f)
