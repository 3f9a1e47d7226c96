"""
Reverse-mode gradients on top of torch.autograd, plus a float64 finite-difference oracle.
"""
import torch
from torch import Tensor
from typing import Callable, Dict, Iterable, Optional, Union
from ..utils import ContractError


__all__ = ['GradientTape', 'backward', 'finite_difference_gradient', 'finite_difference_check', 'relative_error']


class GradientTape:
    """
    Watch a set of leaf tensors; backward(loss) returns a gradient for every watched tensor,
    zero for tensors the loss does not depend on.

    Example use:

    >>> w = torch.randn(3)
    >>> tape = GradientTape({'w': w})
    >>> grads = tape.backward((w * w).sum())
    """
    def __init__(self, parameters: Optional[Union[Dict[str, Tensor], Iterable[Tensor]]]=None):
        self._watched: Dict[str, Tensor] = {}
        if parameters is not None:
            if isinstance(parameters, dict):
                for name in parameters: self.watch(parameters[name], name)
            else:
                for parameter in parameters: self.watch(parameter)

    def watch(self, tensor: Tensor, name: Optional[str]=None) -> Tensor:
        if not tensor.requires_grad:
            tensor.requires_grad_(True)
        if name is None:
            name = "param_" + str(len(self._watched))
        self._watched[name] = tensor
        return tensor

    @property
    def watched(self) -> Dict[str, Tensor]: return dict(self._watched)

    def backward(self, loss: Tensor, retain_graph: bool=False) -> Dict[str, Tensor]:
        """
        :param loss: scalar tensor computed from watched tensors
        :param retain_graph: keep the graph for another backward pass
        :return: mapping from watched name to gradient
        """
        if loss.numel() != 1:
            raise ContractError("backward expects a scalar loss, got shape " + str(tuple(loss.shape)))
        names = list(self._watched.keys())
        tensors = [self._watched[name] for name in names]
        if not loss.requires_grad:
            return {name: torch.zeros_like(t) for name, t in zip(names, tensors)}
        grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True, retain_graph=retain_graph)
        return {
            name: torch.zeros_like(t) if g is None else g
            for name, t, g in zip(names, tensors, grads)
        }


def backward(loss: Tensor, tape: GradientTape) -> Dict[str, Tensor]:
    return tape.backward(loss)


def finite_difference_gradient(
        fn: Callable[[Dict[str, Tensor]], Tensor], params: Dict[str, Tensor], step: float=1e-3
) -> Dict[str, Tensor]:
    """
    Central finite differences of a scalar function, evaluated on float64 copies of the parameters

    :param fn: maps a dict of tensors to a scalar tensor
    :param params: point of evaluation
    :param step: difference step
    :return: estimated gradient per parameter (float64)
    """
    shadow = {name: params[name].detach().to(torch.float64).clone() for name in params}
    grads = {}
    with torch.no_grad():
        for name in shadow:
            flat = shadow[name].view(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                plus = float(fn(shadow))
                flat[i] = original - step
                minus = float(fn(shadow))
                flat[i] = original
                grad[i] = (plus - minus) / (2 * step)
            grads[name] = grad.view(shadow[name].shape)
    return grads


def relative_error(a: Tensor, b: Tensor, eps: float=1e-12) -> float:
    a, b = a.to(torch.float64), b.to(torch.float64)
    scale = max(float(a.norm()), float(b.norm()), eps)
    return float((a - b).norm()) / scale


def finite_difference_check(
        fn: Callable[[Dict[str, Tensor]], Tensor], params: Dict[str, Tensor], step: float=1e-3
) -> float:
    """
    Compare tape gradients with central differences (both on a float64 shadow of params)

    :return: largest relative error over parameters
    """
    shadow = {name: params[name].detach().to(torch.float64).clone() for name in params}
    tape = GradientTape(shadow)
    analytic = tape.backward(fn(shadow))
    numeric = finite_difference_gradient(fn, params, step)
    return max(relative_error(analytic[name], numeric[name]) for name in params)
