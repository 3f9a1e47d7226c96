import torch
from torch import nn, Tensor
from torch.optim import Adam
from typing import Tuple
from ..models import ModelConfig, TransformerModel


__all__ = ['all_close', 'test_component', 'tiny_config', 'tiny_model']


def all_close(t1: Tensor, t2: Tensor, eps: float=1e-6) -> bool:
    return bool((t1.to(torch.float64) - t2.to(torch.float64)).abs().max() < eps)


def test_component(
        component: nn.Module, inp_shape: Tuple[int, ...], n_iter: int=300, lr: float=1e-2, eps: float=1e-3,
        verbose: bool=False
):
    """Check that a (batch, seq, d) -> (batch, seq, d) component keeps its shape and can fit a random target"""
    assert n_iter > 0
    generator = torch.Generator().manual_seed(0)
    inp = torch.randn(inp_shape, generator=generator)
    targ = torch.randn(inp_shape, generator=generator) * 0.1
    assert component(inp).shape == targ.shape
    optimizer = Adam(component.parameters(), lr=lr)
    criterion = nn.MSELoss()
    for _ in range(n_iter):
        optimizer.zero_grad()
        loss = criterion(component(inp), targ)
        loss.backward()
        optimizer.step()
        if verbose: print(loss.item())
    assert loss.item() < eps, "final loss " + str(loss.item())


def tiny_config(**kwargs) -> ModelConfig:
    """A 2-layer, 32-wide model small enough for unit tests"""
    defaults = dict(n_layers=2, d_model=32, n_heads=2, d_mlp=64, max_seq_len=32, seed=0)
    defaults.update(kwargs)
    return ModelConfig(**defaults)


def tiny_model(**kwargs) -> TransformerModel:
    return TransformerModel(tiny_config(**kwargs)).eval()
